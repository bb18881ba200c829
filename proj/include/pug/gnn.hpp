#pragma once

// Message-passing GNN predictor mapping a policy-update graph to predicted
// learning progress, plus an amortized explainer producing a per-edge
// importance mask and the partition G_O = G_X + dG.

#include <array>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "pug/nn.hpp"
#include "pug/policy_graph.hpp"

namespace pug::gnn {

inline constexpr std::size_t kNodeInputDim = polviz::kNodeFeatureDim;
inline constexpr std::size_t kRelationDim = 3;  // [w, |dw|, layer index]

struct GnnConfig {
  int layers = 3;
  int hidden = 32;
  double lr = 1e-3;
  int predictor_epochs = 40;
  int explainer_epochs = 40;
  double explainer_lr = 1e-3;
  std::size_t edge_cap = 2048;  // training-time downsample of large graphs
  // Explainer loss coefficients.
  double preservation_coef = 1.0;
  double sparsity_coef = 0.05;
  double entropy_coef = 0.1;
  double activation_coef = 0.5;
};

// Parameters live in one flat vector so the optimizer from nn applies.
// Layout: input embed (H x D, H), then per layer message (H x (2H+3), H)
// and update (H x 2H, H) maps, then readout (H, 1).
struct GnnModel {
  int layers = 3;
  int hidden = 32;
  std::vector<double> params;

  std::size_t param_count() const;
  static GnnModel make(int layers, int hidden, std::uint64_t seed);
};

// Per-edge importance in [0, 1], same edge ordering as the source graph.
struct EdgeMask {
  std::vector<double> values;
};

struct DatasetEntry {
  polviz::PolicyGraph graph;
  double progress = 0.0;
  std::set<std::size_t> activated;  // node ids active during evaluation
  std::string task_id;
  std::int64_t iteration = 0;
};

// Split by iteration parity: even iterations train, odd validate.
struct ProgressDataset {
  std::vector<DatasetEntry> entries;

  std::vector<std::size_t> train_indices() const;
  std::vector<std::size_t> validation_indices() const;
};

// Flattened message-passing view of a PolicyGraph (CSR over receivers).
struct GnnGraph {
  std::size_t n_nodes = 0;
  std::size_t n_edges = 0;
  std::vector<double> x;                        // n_nodes x D
  std::vector<std::array<double, 3>> relation;  // per edge
  std::vector<std::size_t> recv_offset;         // n_nodes + 1
  std::vector<std::size_t> sender;              // per directed message
  std::vector<std::size_t> message_edge;        // edge id per directed message
};

GnnGraph make_gnn_graph(const polviz::PolicyGraph& graph);
GnnGraph make_gnn_graph(const polviz::PolicyGraph& graph,
                        const std::set<std::size_t>& edge_subset);

struct ForwardCache {
  std::vector<std::vector<double>> h;      // (L+1) x (N*H), post-activation
  std::vector<double> h0_pre;              // N*H
  std::vector<std::vector<double>> h_pre;  // L x (N*H)
  std::vector<std::vector<double>> m_pre;  // L x (M*H)
  std::vector<std::vector<double>> m_post; // L x (M*H)
  std::vector<std::vector<double>> m_agg;  // L x (N*H)
  double pooled_out = 0.0;
  double prediction = 0.0;
  bool valid = false;
};

// Mask entries scale messages; an empty mask means all ones.
double forward(const GnnModel& model, const GnnGraph& graph,
               const std::vector<double>& mask = {},
               ForwardCache* cache = nullptr);

// d(prediction)/d(params) scaled by dout; optionally d/d(mask) per edge.
void backward(const GnnModel& model, const GnnGraph& graph,
              const std::vector<double>& mask, const ForwardCache& cache,
              double dout, std::vector<double>& param_grad,
              std::vector<double>* mask_grad = nullptr);

double predict_progress(const GnnModel& model, const polviz::PolicyGraph& graph,
                        const EdgeMask* mask = nullptr);

// The per-layer computations, exposed so a forward pass can be cross-checked
// op by op. forward() fuses these loops but computes the same values.
std::vector<double> embed_op(const GnnModel& model,
                             const std::vector<double>& x_i);
std::vector<double> message_op(const GnnModel& model, int layer,
                               const std::vector<double>& h_i,
                               const std::vector<double>& h_j,
                               const std::array<double, 3>& rel);
// Elementwise mean; an empty neighborhood yields the zero vector.
std::vector<double> aggregate_op(const std::vector<std::vector<double>>& msgs,
                                 int hidden);
std::vector<double> update_op(const GnnModel& model, int layer,
                              const std::vector<double>& m_i,
                              const std::vector<double>& h_prev);
double readout_op(const GnnModel& model,
                  const std::vector<std::vector<double>>& z);

// Final-layer node embeddings from an unmasked forward pass.
std::vector<double> node_embeddings(const GnnModel& model,
                                    const GnnGraph& graph);

struct TrainReport {
  std::vector<double> train_loss_curve;  // MSE per epoch
  double validation_mse = 0.0;
  double baseline_mse = 0.0;  // predict-the-mean of the training split
};

TrainReport train_predictor(GnnModel& model, const ProgressDataset& dataset,
                            int epochs, double lr, std::uint64_t seed);

// Amortized explainer: one MLP over [z_i, z_j, r_ij] -> mask logit.
struct Explainer {
  nn::Mlp net;

  static Explainer make(int hidden, std::uint64_t seed);
};

EdgeMask compute_mask(const Explainer& explainer, const GnnModel& predictor,
                      const polviz::PolicyGraph& graph);

struct ExplainerReport {
  std::vector<double> loss_curve;
  double initial_mean_mask = 0.0;
  double final_mean_mask = 0.0;
};

ExplainerReport train_explainer(Explainer& explainer, const GnnModel& predictor,
                                const ProgressDataset& dataset,
                                const GnnConfig& cfg, std::uint64_t seed);

// Largest threshold keeping at least k_m edges (ties at the threshold all
// included); result is the maximum connected component of the kept edges.
polviz::ExplanationSubgraph extract_subgraph(const polviz::PolicyGraph& graph,
                                             const EdgeMask& mask,
                                             std::size_t k_m,
                                             const GnnModel& predictor);

double overlap_ratio(const polviz::ExplanationSubgraph& explanation,
                     const std::set<std::size_t>& activated);

std::string model_to_json(const GnnModel& model);
GnnModel model_from_json(const std::string& text);
std::string explainer_to_json(const Explainer& e);
Explainer explainer_from_json(const std::string& text);

}  // namespace pug::gnn
