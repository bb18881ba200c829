#pragma once

// The observed policy-update graph G_O: one node per neuron, one edge per
// weight, annotated with the current weight value and the update magnitude
// between two parameter snapshots.

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "pug/nn.hpp"

namespace pug::polviz {

inline constexpr std::size_t kNodeFeatureDim = 5;
inline constexpr double kCountThreshold = 1e-6;

struct GraphNode {
  std::size_t id = 0;
  std::size_t layer = 0;  // 0 = input layer
  std::size_t unit = 0;
  // [sum, mean, max, count > tau of incident |dw|, normalized layer index]
  std::vector<double> features;
  bool activated = false;
};

struct GraphEdge {
  std::size_t id = 0;
  std::size_t src = 0;  // node in layer l
  std::size_t dst = 0;  // node in layer l + 1
  double w = 0.0;       // weight value at time T
  double dw = 0.0;      // |w_T - w_{T-1}|
};

struct PolicyGraph {
  std::vector<GraphNode> nodes;
  std::vector<GraphEdge> edges;
  std::int64_t time_index = 0;
  std::string task_id;

  std::size_t node_layers() const;  // number of node layers
};

struct HighlightSet {
  std::set<std::size_t> nodes;
  std::set<std::size_t> edges;
  int k = 0;
};

// Subset of G_O's edges the explainer deems responsible for the prediction.
struct ExplanationSubgraph {
  std::set<std::size_t> edge_ids;
  std::set<std::size_t> node_ids;  // induced by the edges
  double threshold = 0.0;
  double fidelity_gap = 0.0;  // |Phi(G_X) - Phi(G_O)|
  bool truncated = false;     // K_M exceeded |E|; full graph returned
};

PolicyGraph build_update_graph(const nn::ParamSnapshot& prev,
                               const nn::ParamSnapshot& next,
                               const nn::Mlp& arch);

PolicyGraph tag_activations(PolicyGraph graph, const nn::ActivationTrace& trace);

// Top-k nodes by max incident edge |dw| (ties by (layer, unit) ascending),
// each with its single largest incident edge.
HighlightSet top_k_highlight(const PolicyGraph& graph, int k);

// Keep the `cap` edges with the largest |dw| (ties by edge id); edge ids are
// reassigned to stay contiguous. Nodes are all retained.
PolicyGraph downsample_top_edges(const PolicyGraph& graph, std::size_t cap);

struct RenderOptions {
  std::size_t edge_cap = 2000;
  double width = 1200.0;
  double height = 700.0;
};

std::string render_svg(const PolicyGraph& graph, const HighlightSet& highlight,
                       const ExplanationSubgraph* explanation = nullptr,
                       const RenderOptions& opts = {});
void render_svg_file(const PolicyGraph& graph, const HighlightSet& highlight,
                     const ExplanationSubgraph* explanation,
                     const std::string& path, const RenderOptions& opts = {});

std::string graph_to_json(const PolicyGraph& graph);
PolicyGraph graph_from_json(const std::string& text);
void export_json(const PolicyGraph& graph, const std::string& path);
PolicyGraph import_json(const std::string& path);

// Enforced on every constructed and imported graph: edges connect adjacent
// layers only, dw >= 0, feature dimension fixed.
void validate_graph(const PolicyGraph& graph);

}  // namespace pug::polviz
