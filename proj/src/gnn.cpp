#include "pug/gnn.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <stdexcept>
#include <unordered_map>

#include <nlohmann/json.hpp>

namespace pug::gnn {

using json = nlohmann::json;

namespace {

constexpr std::size_t kD = kNodeInputDim;
constexpr std::size_t kR = kRelationDim;

struct Layout {
  std::size_t H;
  std::size_t msg_in;   // 2H + 3
  std::size_t upd_in;   // 2H
  std::size_t block;    // per-layer parameter count
  std::size_t off_win;  // H x D
  std::size_t off_bin;
  std::size_t off_layers;
  std::size_t off_wout;
  std::size_t off_bout;
  std::size_t total;

  explicit Layout(const GnnModel& m) {
    H = static_cast<std::size_t>(m.hidden);
    msg_in = 2 * H + kR;
    upd_in = 2 * H;
    off_win = 0;
    off_bin = H * kD;
    off_layers = off_bin + H;
    block = H * msg_in + H + H * upd_in + H;
    off_wout = off_layers + static_cast<std::size_t>(m.layers) * block;
    off_bout = off_wout + H;
    total = off_bout + 1;
  }
  std::size_t wmsg(std::size_t l) const { return off_layers + l * block; }
  std::size_t bmsg(std::size_t l) const { return wmsg(l) + H * msg_in; }
  std::size_t wupd(std::size_t l) const { return bmsg(l) + H; }
  std::size_t bupd(std::size_t l) const { return wupd(l) + H * upd_in; }
};

inline double relu(double x) { return x > 0.0 ? x : 0.0; }

}  // namespace

std::size_t GnnModel::param_count() const { return Layout(*this).total; }

GnnModel GnnModel::make(int layers, int hidden, std::uint64_t seed) {
  if (layers < 1 || hidden < 1) {
    throw std::invalid_argument("GnnModel: layers and hidden must be >= 1");
  }
  GnnModel m;
  m.layers = layers;
  m.hidden = hidden;
  const Layout lay(m);
  m.params.assign(lay.total, 0.0);
  auto fill = [&](std::size_t off, std::size_t rows, std::size_t cols,
                  const std::string& tag) {
    std::mt19937_64 rng(nn::stream_seed(seed, "gnn:" + tag));
    const double scale = 1.0 / std::sqrt(static_cast<double>(cols));
    std::uniform_real_distribution<double> dist(-scale, scale);
    for (std::size_t i = 0; i < rows * cols; ++i) m.params[off + i] = dist(rng);
  };
  fill(lay.off_win, lay.H, kD, "win");
  for (int l = 0; l < layers; ++l) {
    fill(lay.wmsg(l), lay.H, lay.msg_in, "wmsg" + std::to_string(l));
    fill(lay.wupd(l), lay.H, lay.upd_in, "wupd" + std::to_string(l));
  }
  fill(lay.off_wout, 1, lay.H, "wout");
  return m;
}

GnnGraph make_gnn_graph(const polviz::PolicyGraph& graph) {
  std::set<std::size_t> all;
  for (const auto& e : graph.edges) all.insert(e.id);
  return make_gnn_graph(graph, all);
}

GnnGraph make_gnn_graph(const polviz::PolicyGraph& graph,
                        const std::set<std::size_t>& edge_subset) {
  GnnGraph g;
  g.n_nodes = graph.nodes.size();
  g.n_edges = graph.edges.size();
  g.x.resize(g.n_nodes * kD);
  for (const auto& n : graph.nodes) {
    for (std::size_t f = 0; f < kD; ++f) g.x[n.id * kD + f] = n.features[f];
  }
  const std::size_t n_layers = std::max<std::size_t>(graph.node_layers(), 2);
  g.relation.resize(g.n_edges);
  for (const auto& e : graph.edges) {
    g.relation[e.id] = {e.w, e.dw,
                        static_cast<double>(graph.nodes[e.src].layer) /
                            static_cast<double>(n_layers - 1)};
  }
  // Directed messages, both directions per undirected edge, CSR by receiver.
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> adj(g.n_nodes);
  for (const auto& e : graph.edges) {
    if (!edge_subset.count(e.id)) continue;
    adj[e.dst].push_back({e.src, e.id});
    adj[e.src].push_back({e.dst, e.id});
  }
  g.recv_offset.assign(g.n_nodes + 1, 0);
  for (std::size_t i = 0; i < g.n_nodes; ++i) {
    g.recv_offset[i + 1] = g.recv_offset[i] + adj[i].size();
    for (const auto& [j, e] : adj[i]) {
      g.sender.push_back(j);
      g.message_edge.push_back(e);
    }
  }
  return g;
}

double forward(const GnnModel& model, const GnnGraph& graph,
               const std::vector<double>& mask, ForwardCache* cache) {
  const Layout lay(model);
  const std::size_t H = lay.H;
  const std::size_t N = graph.n_nodes;
  const std::size_t M = graph.sender.size();
  if (N == 0) throw std::invalid_argument("gnn forward: empty graph");
  if (!mask.empty() && mask.size() != graph.n_edges) {
    throw std::invalid_argument("gnn forward: mask size mismatch");
  }
  const double* P = model.params.data();

  ForwardCache local;
  ForwardCache& c = cache ? *cache : local;
  c.h.assign(model.layers + 1, {});
  c.h_pre.assign(model.layers, {});
  c.m_pre.assign(model.layers, {});
  c.m_post.assign(model.layers, {});
  c.m_agg.assign(model.layers, {});

  // Input embedding.
  c.h0_pre.assign(N * H, 0.0);
  c.h[0].assign(N * H, 0.0);
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t k = 0; k < H; ++k) {
      double s = P[lay.off_bin + k];
      const double* row = P + lay.off_win + k * kD;
      for (std::size_t f = 0; f < kD; ++f) s += row[f] * graph.x[i * kD + f];
      c.h0_pre[i * H + k] = s;
      c.h[0][i * H + k] = relu(s);
    }
  }

  std::vector<double> u(lay.msg_in);
  std::vector<double> v(lay.upd_in);
  for (int l = 0; l < model.layers; ++l) {
    const double* wm = P + lay.wmsg(l);
    const double* bm = P + lay.bmsg(l);
    const double* wu = P + lay.wupd(l);
    const double* bu = P + lay.bupd(l);
    const std::vector<double>& h = c.h[l];
    c.m_pre[l].assign(M * H, 0.0);
    c.m_post[l].assign(M * H, 0.0);
    c.m_agg[l].assign(N * H, 0.0);
    c.h_pre[l].assign(N * H, 0.0);
    c.h[l + 1].assign(N * H, 0.0);
    for (std::size_t i = 0; i < N; ++i) {
      const std::size_t begin = graph.recv_offset[i];
      const std::size_t end = graph.recv_offset[i + 1];
      double* agg = c.m_agg[l].data() + i * H;
      for (std::size_t s = begin; s < end; ++s) {
        const std::size_t j = graph.sender[s];
        const std::size_t e = graph.message_edge[s];
        const double me_mask = mask.empty() ? 1.0 : mask[e];
        std::copy_n(h.data() + i * H, H, u.data());
        std::copy_n(h.data() + j * H, H, u.data() + H);
        for (std::size_t r = 0; r < kR; ++r) u[2 * H + r] = graph.relation[e][r];
        for (std::size_t k = 0; k < H; ++k) {
          double sum = bm[k];
          const double* row = wm + k * lay.msg_in;
          for (std::size_t q = 0; q < lay.msg_in; ++q) sum += row[q] * u[q];
          c.m_pre[l][s * H + k] = sum;
          const double mp = relu(sum);
          c.m_post[l][s * H + k] = mp;
          agg[k] += me_mask * mp;
        }
      }
      if (end > begin) {
        const double inv = 1.0 / static_cast<double>(end - begin);
        for (std::size_t k = 0; k < H; ++k) agg[k] *= inv;
      }
      std::copy_n(agg, H, v.data());
      std::copy_n(h.data() + i * H, H, v.data() + H);
      for (std::size_t k = 0; k < H; ++k) {
        double sum = bu[k];
        const double* row = wu + k * lay.upd_in;
        for (std::size_t q = 0; q < lay.upd_in; ++q) sum += row[q] * v[q];
        c.h_pre[l][i * H + k] = sum;
        c.h[l + 1][i * H + k] = relu(sum);
      }
    }
  }

  // Mean-pool readout with a linear head.
  double out = P[lay.off_bout];
  c.pooled_out = 0.0;
  for (std::size_t k = 0; k < H; ++k) {
    double pool = 0.0;
    for (std::size_t i = 0; i < N; ++i) pool += c.h[model.layers][i * H + k];
    pool /= static_cast<double>(N);
    out += P[lay.off_wout + k] * pool;
  }
  c.prediction = out;
  c.valid = true;
  if (!std::isfinite(out)) {
    throw std::runtime_error("gnn forward: non-finite prediction");
  }
  return out;
}

void backward(const GnnModel& model, const GnnGraph& graph,
              const std::vector<double>& mask, const ForwardCache& c,
              double dout, std::vector<double>& param_grad,
              std::vector<double>* mask_grad) {
  if (!c.valid) throw std::logic_error("gnn backward: missing forward cache");
  const Layout lay(model);
  const std::size_t H = lay.H;
  const std::size_t N = graph.n_nodes;
  const double* P = model.params.data();
  if (param_grad.size() != lay.total) param_grad.assign(lay.total, 0.0);
  if (mask_grad && mask_grad->size() != graph.n_edges) {
    mask_grad->assign(graph.n_edges, 0.0);
  }

  // Readout.
  std::vector<double> dh(N * H, 0.0);
  const double inv_n = 1.0 / static_cast<double>(N);
  param_grad[lay.off_bout] += dout;
  for (std::size_t k = 0; k < H; ++k) {
    double pool = 0.0;
    for (std::size_t i = 0; i < N; ++i) pool += c.h[model.layers][i * H + k];
    pool *= inv_n;
    param_grad[lay.off_wout + k] += dout * pool;
    const double d = dout * P[lay.off_wout + k] * inv_n;
    for (std::size_t i = 0; i < N; ++i) dh[i * H + k] += d;
  }

  std::vector<double> u(lay.msg_in);
  std::vector<double> v(lay.upd_in);
  std::vector<double> dhpre(H);
  std::vector<double> dmagg(H);
  std::vector<double> dmpre(H);
  for (int l = model.layers - 1; l >= 0; --l) {
    const double* wm = P + lay.wmsg(l);
    const double* wu = P + lay.wupd(l);
    const std::vector<double>& h = c.h[l];
    std::vector<double> dh_below(N * H, 0.0);
    for (std::size_t i = 0; i < N; ++i) {
      for (std::size_t k = 0; k < H; ++k) {
        dhpre[k] = c.h_pre[l][i * H + k] > 0.0 ? dh[i * H + k] : 0.0;
      }
      // Update map gradients.
      const std::size_t begin = graph.recv_offset[i];
      const std::size_t end = graph.recv_offset[i + 1];
      std::copy_n(c.m_agg[l].data() + i * H, H, v.data());
      std::copy_n(h.data() + i * H, H, v.data() + H);
      double* gwu = param_grad.data() + lay.wupd(l);
      double* gbu = param_grad.data() + lay.bupd(l);
      std::fill(dmagg.begin(), dmagg.end(), 0.0);
      for (std::size_t k = 0; k < H; ++k) {
        const double d = dhpre[k];
        if (d == 0.0) continue;
        gbu[k] += d;
        double* grow = gwu + k * lay.upd_in;
        const double* row = wu + k * lay.upd_in;
        for (std::size_t q = 0; q < lay.upd_in; ++q) grow[q] += d * v[q];
        for (std::size_t q = 0; q < H; ++q) dmagg[q] += d * row[q];
        for (std::size_t q = 0; q < H; ++q) {
          dh_below[i * H + q] += d * row[H + q];
        }
      }
      if (end == begin) continue;
      const double inv_deg = 1.0 / static_cast<double>(end - begin);
      double* gwm = param_grad.data() + lay.wmsg(l);
      double* gbm = param_grad.data() + lay.bmsg(l);
      for (std::size_t s = begin; s < end; ++s) {
        const std::size_t j = graph.sender[s];
        const std::size_t e = graph.message_edge[s];
        const double me_mask = mask.empty() ? 1.0 : mask[e];
        if (mask_grad) {
          double acc = 0.0;
          for (std::size_t k = 0; k < H; ++k) {
            acc += dmagg[k] * inv_deg * c.m_post[l][s * H + k];
          }
          (*mask_grad)[e] += acc;
        }
        std::copy_n(h.data() + i * H, H, u.data());
        std::copy_n(h.data() + j * H, H, u.data() + H);
        for (std::size_t r = 0; r < kR; ++r) u[2 * H + r] = graph.relation[e][r];
        for (std::size_t k = 0; k < H; ++k) {
          const double d = dmagg[k] * inv_deg * me_mask;
          dmpre[k] = c.m_pre[l][s * H + k] > 0.0 ? d : 0.0;
        }
        for (std::size_t k = 0; k < H; ++k) {
          const double d = dmpre[k];
          if (d == 0.0) continue;
          gbm[k] += d;
          double* grow = gwm + k * lay.msg_in;
          const double* row = wm + k * lay.msg_in;
          for (std::size_t q = 0; q < lay.msg_in; ++q) grow[q] += d * u[q];
          for (std::size_t q = 0; q < H; ++q) {
            dh_below[i * H + q] += d * row[q];
            dh_below[j * H + q] += d * row[H + q];
          }
        }
      }
    }
    dh = std::move(dh_below);
  }

  // Input embedding.
  double* gwin = param_grad.data() + lay.off_win;
  double* gbin = param_grad.data() + lay.off_bin;
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t k = 0; k < H; ++k) {
      const double d = c.h0_pre[i * H + k] > 0.0 ? dh[i * H + k] : 0.0;
      if (d == 0.0) continue;
      gbin[k] += d;
      double* grow = gwin + k * kD;
      for (std::size_t f = 0; f < kD; ++f) grow[f] += d * graph.x[i * kD + f];
    }
  }
}

double predict_progress(const GnnModel& model, const polviz::PolicyGraph& graph,
                        const EdgeMask* mask) {
  GnnGraph g = make_gnn_graph(graph);
  return forward(model, g, mask ? mask->values : std::vector<double>{});
}

static std::vector<double> affine_relu(const double* w, const double* b,
                                       std::size_t rows,
                                       const std::vector<double>& in) {
  std::vector<double> out(rows);
  for (std::size_t k = 0; k < rows; ++k) {
    double s = b[k];
    const double* row = w + k * in.size();
    for (std::size_t q = 0; q < in.size(); ++q) s += row[q] * in[q];
    out[k] = relu(s);
  }
  return out;
}

std::vector<double> embed_op(const GnnModel& model,
                             const std::vector<double>& x_i) {
  const Layout lay(model);
  if (x_i.size() != kD) throw std::invalid_argument("embed_op: bad input dim");
  return affine_relu(model.params.data() + lay.off_win,
                     model.params.data() + lay.off_bin, lay.H, x_i);
}

std::vector<double> message_op(const GnnModel& model, int layer,
                               const std::vector<double>& h_i,
                               const std::vector<double>& h_j,
                               const std::array<double, 3>& rel) {
  const Layout lay(model);
  if (layer < 0 || layer >= model.layers) {
    throw std::invalid_argument("message_op: layer out of range");
  }
  if (h_i.size() != lay.H || h_j.size() != lay.H) {
    throw std::invalid_argument("message_op: hidden dimension mismatch");
  }
  std::vector<double> u(lay.msg_in);
  std::copy(h_i.begin(), h_i.end(), u.begin());
  std::copy(h_j.begin(), h_j.end(), u.begin() + lay.H);
  for (std::size_t r = 0; r < kR; ++r) u[2 * lay.H + r] = rel[r];
  return affine_relu(model.params.data() + lay.wmsg(layer),
                     model.params.data() + lay.bmsg(layer), lay.H, u);
}

std::vector<double> aggregate_op(const std::vector<std::vector<double>>& msgs,
                                 int hidden) {
  std::vector<double> out(hidden, 0.0);
  if (msgs.empty()) return out;
  for (const auto& m : msgs) {
    if (m.size() != static_cast<std::size_t>(hidden)) {
      throw std::invalid_argument("aggregate_op: message dimension mismatch");
    }
    for (int k = 0; k < hidden; ++k) out[k] += m[k];
  }
  for (int k = 0; k < hidden; ++k) out[k] /= static_cast<double>(msgs.size());
  return out;
}

std::vector<double> update_op(const GnnModel& model, int layer,
                              const std::vector<double>& m_i,
                              const std::vector<double>& h_prev) {
  const Layout lay(model);
  if (layer < 0 || layer >= model.layers) {
    throw std::invalid_argument("update_op: layer out of range");
  }
  if (m_i.size() != lay.H || h_prev.size() != lay.H) {
    throw std::invalid_argument("update_op: hidden dimension mismatch");
  }
  std::vector<double> v(lay.upd_in);
  std::copy(m_i.begin(), m_i.end(), v.begin());
  std::copy(h_prev.begin(), h_prev.end(), v.begin() + lay.H);
  return affine_relu(model.params.data() + lay.wupd(layer),
                     model.params.data() + lay.bupd(layer), lay.H, v);
}

double readout_op(const GnnModel& model,
                  const std::vector<std::vector<double>>& z) {
  const Layout lay(model);
  if (z.empty()) throw std::invalid_argument("readout_op: no embeddings");
  double out = model.params[lay.off_bout];
  for (std::size_t k = 0; k < lay.H; ++k) {
    double pool = 0.0;
    for (const auto& zi : z) pool += zi.at(k);
    out += model.params[lay.off_wout + k] * pool / static_cast<double>(z.size());
  }
  return out;
}

std::vector<double> node_embeddings(const GnnModel& model,
                                    const GnnGraph& graph) {
  ForwardCache cache;
  forward(model, graph, {}, &cache);
  return cache.h.back();
}

std::vector<std::size_t> ProgressDataset::train_indices() const {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].iteration % 2 == 0) idx.push_back(i);
  }
  return idx;
}

std::vector<std::size_t> ProgressDataset::validation_indices() const {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].iteration % 2 != 0) idx.push_back(i);
  }
  return idx;
}

TrainReport train_predictor(GnnModel& model, const ProgressDataset& dataset,
                            int epochs, double lr, std::uint64_t seed) {
  if (dataset.entries.empty()) {
    throw std::invalid_argument("train_predictor: empty dataset");
  }
  std::vector<GnnGraph> graphs;
  graphs.reserve(dataset.entries.size());
  for (const auto& e : dataset.entries) graphs.push_back(make_gnn_graph(e.graph));

  std::vector<std::size_t> train = dataset.train_indices();
  std::vector<std::size_t> val = dataset.validation_indices();
  if (train.empty()) train = {0};

  nn::AdamState opt;
  std::mt19937_64 rng(nn::stream_seed(seed, "train_predictor"));
  TrainReport report;
  std::vector<double> grad(model.param_count(), 0.0);
  for (int epoch = 0; epoch < epochs; ++epoch) {
    std::shuffle(train.begin(), train.end(), rng);
    double mse = 0.0;
    for (std::size_t idx : train) {
      ForwardCache cache;
      const double pred = forward(model, graphs[idx], {}, &cache);
      const double err = pred - dataset.entries[idx].progress;
      mse += err * err;
      std::fill(grad.begin(), grad.end(), 0.0);
      backward(model, graphs[idx], {}, cache, 2.0 * err, grad);
      nn::adam_step(model.params, grad, opt, lr);
    }
    mse /= static_cast<double>(train.size());
    if (mse > 1e6) {
      throw std::runtime_error("train_predictor: diverged, MSE " +
                               std::to_string(mse));
    }
    report.train_loss_curve.push_back(mse);
  }

  double train_mean = 0.0;
  for (std::size_t idx : train) train_mean += dataset.entries[idx].progress;
  train_mean /= static_cast<double>(train.size());
  const auto& eval_set = val.empty() ? train : val;
  double vmse = 0.0, bmse = 0.0;
  for (std::size_t idx : eval_set) {
    const double pred = forward(model, graphs[idx]);
    const double target = dataset.entries[idx].progress;
    vmse += (pred - target) * (pred - target);
    bmse += (train_mean - target) * (train_mean - target);
  }
  report.validation_mse = vmse / static_cast<double>(eval_set.size());
  report.baseline_mse = bmse / static_cast<double>(eval_set.size());
  return report;
}

Explainer Explainer::make(int hidden, std::uint64_t seed) {
  Explainer e;
  e.net = nn::make_mlp({2 * static_cast<std::size_t>(hidden) + kR, 32, 1},
                       {nn::Activation::Relu, nn::Activation::Identity},
                       nn::stream_seed(seed, "explainer"));
  return e;
}

static std::vector<double> mask_from_logits(const std::vector<double>& logits) {
  std::vector<double> mask(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    mask[i] = 1.0 / (1.0 + std::exp(-logits[i]));
  }
  return mask;
}

static std::vector<double> edge_input(const std::vector<double>& z,
                                      std::size_t H, const polviz::GraphEdge& e,
                                      const std::array<double, 3>& rel) {
  std::vector<double> in(2 * H + kR);
  std::copy_n(z.data() + e.src * H, H, in.data());
  std::copy_n(z.data() + e.dst * H, H, in.data() + H);
  for (std::size_t r = 0; r < kR; ++r) in[2 * H + r] = rel[r];
  return in;
}

EdgeMask compute_mask(const Explainer& explainer, const GnnModel& predictor,
                      const polviz::PolicyGraph& graph) {
  GnnGraph g = make_gnn_graph(graph);
  std::vector<double> z = node_embeddings(predictor, g);
  const std::size_t H = static_cast<std::size_t>(predictor.hidden);
  std::vector<double> logits;
  logits.reserve(graph.edges.size());
  for (const auto& e : graph.edges) {
    logits.push_back(
        nn::forward(explainer.net, edge_input(z, H, e, g.relation[e.id]))[0]);
  }
  return EdgeMask{mask_from_logits(logits)};
}

ExplainerReport train_explainer(Explainer& explainer, const GnnModel& predictor,
                                const ProgressDataset& dataset,
                                const GnnConfig& cfg, std::uint64_t seed) {
  if (dataset.entries.empty()) {
    throw std::invalid_argument("train_explainer: empty dataset");
  }
  const std::size_t H = static_cast<std::size_t>(predictor.hidden);

  // The predictor is frozen: embeddings and unmasked predictions are fixed.
  struct Prep {
    GnnGraph graph;
    std::vector<double> z;
    double base_pred = 0.0;
    std::vector<std::size_t> degree;       // incident edge count per node
    std::vector<double> activated_label;   // 0/1 per node
  };
  std::vector<Prep> preps;
  preps.reserve(dataset.entries.size());
  for (const auto& entry : dataset.entries) {
    Prep p;
    p.graph = make_gnn_graph(entry.graph);
    p.z = node_embeddings(predictor, p.graph);
    p.base_pred = forward(predictor, p.graph);
    p.degree.assign(entry.graph.nodes.size(), 0);
    for (const auto& e : entry.graph.edges) {
      p.degree[e.src]++;
      p.degree[e.dst]++;
    }
    p.activated_label.assign(entry.graph.nodes.size(), 0.0);
    for (std::size_t id : entry.activated) {
      if (id >= p.activated_label.size()) {
        throw std::invalid_argument("train_explainer: activated id out of range");
      }
      p.activated_label[id] = 1.0;
    }
    preps.push_back(std::move(p));
  }

  auto mean_mask_over_dataset = [&]() {
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t d = 0; d < dataset.entries.size(); ++d) {
      EdgeMask m = compute_mask(explainer, predictor, dataset.entries[d].graph);
      for (double v : m.values) total += v;
      count += m.values.size();
    }
    return count ? total / static_cast<double>(count) : 0.0;
  };

  ExplainerReport report;
  report.initial_mean_mask = mean_mask_over_dataset();

  nn::AdamState opt;
  std::mt19937_64 rng(nn::stream_seed(seed, "train_explainer"));
  std::vector<std::size_t> order(dataset.entries.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.explainer_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t d : order) {
      const Prep& p = preps[d];
      const auto& pgraph = dataset.entries[d].graph;
      const std::size_t E = pgraph.edges.size();
      if (E == 0) continue;

      std::vector<nn::ForwardCache> caches(E);
      std::vector<double> logits(E);
      for (std::size_t e = 0; e < E; ++e) {
        logits[e] = nn::forward(
            explainer.net,
            edge_input(p.z, H, pgraph.edges[e], p.graph.relation[e]),
            &caches[e])[0];
      }
      std::vector<double> mask = mask_from_logits(logits);

      ForwardCache fcache;
      const double masked_pred = forward(predictor, p.graph, mask, &fcache);
      const double gap = masked_pred - p.base_pred;

      std::vector<double> dmask(E, 0.0);
      std::vector<double> dummy_param(predictor.param_count(), 0.0);
      backward(predictor, p.graph, mask, fcache,
               cfg.preservation_coef * 2.0 * gap, dummy_param, &dmask);

      double loss = cfg.preservation_coef * gap * gap;
      const double inv_e = 1.0 / static_cast<double>(E);
      for (std::size_t e = 0; e < E; ++e) {
        const double m = std::clamp(mask[e], 1e-9, 1.0 - 1e-9);
        loss += cfg.sparsity_coef * m * inv_e;
        loss -= cfg.entropy_coef * inv_e *
                (m * std::log(m) + (1.0 - m) * std::log(1.0 - m));
        dmask[e] += cfg.sparsity_coef * inv_e;
        dmask[e] += cfg.entropy_coef * inv_e * std::log((1.0 - m) / m);
      }

      // Activation agreement: node-level mask aggregate vs activated labels.
      if (cfg.activation_coef > 0.0) {
        std::vector<double> agg(pgraph.nodes.size(), 0.0);
        for (const auto& e : pgraph.edges) {
          agg[e.src] += mask[e.id];
          agg[e.dst] += mask[e.id];
        }
        std::size_t counted = 0;
        for (std::size_t i = 0; i < agg.size(); ++i) {
          if (p.degree[i] > 0) ++counted;
        }
        if (counted > 0) {
          const double inv_nodes = 1.0 / static_cast<double>(counted);
          std::vector<double> dagg(agg.size(), 0.0);
          for (std::size_t i = 0; i < agg.size(); ++i) {
            if (p.degree[i] == 0) continue;
            const double a = std::clamp(
                agg[i] / static_cast<double>(p.degree[i]), 1e-6, 1.0 - 1e-6);
            const double y = p.activated_label[i];
            loss -= cfg.activation_coef * inv_nodes *
                    (y * std::log(a) + (1.0 - y) * std::log(1.0 - a));
            dagg[i] = cfg.activation_coef * inv_nodes * (a - y) /
                      (a * (1.0 - a)) / static_cast<double>(p.degree[i]);
          }
          for (const auto& e : pgraph.edges) {
            dmask[e.id] += dagg[e.src] + dagg[e.dst];
          }
        }
      }

      std::vector<double> net_grad(explainer.net.param_count(), 0.0);
      for (std::size_t e = 0; e < E; ++e) {
        const double dlogit = dmask[e] * mask[e] * (1.0 - mask[e]);
        if (dlogit == 0.0) continue;
        std::vector<double> g =
            nn::backward(explainer.net, {dlogit}, caches[e]);
        for (std::size_t i = 0; i < g.size(); ++i) net_grad[i] += g[i];
      }
      if (!std::isfinite(loss)) {
        throw std::runtime_error("train_explainer: non-finite loss");
      }
      nn::adam_step(explainer.net, net_grad, opt, cfg.explainer_lr);
      epoch_loss += loss;
    }
    epoch_loss /= static_cast<double>(order.size());
    if (epoch_loss > 1e6) {
      throw std::runtime_error("train_explainer: diverged");
    }
    report.loss_curve.push_back(epoch_loss);
  }
  report.final_mean_mask = mean_mask_over_dataset();
  return report;
}

polviz::ExplanationSubgraph extract_subgraph(const polviz::PolicyGraph& graph,
                                             const EdgeMask& mask,
                                             std::size_t k_m,
                                             const GnnModel& predictor) {
  if (k_m < 1) throw std::invalid_argument("extract_subgraph: K_M must be >= 1");
  if (mask.values.size() != graph.edges.size()) {
    throw std::invalid_argument("extract_subgraph: mask size mismatch");
  }
  polviz::ExplanationSubgraph result;
  const std::size_t E = graph.edges.size();

  std::set<std::size_t> kept;
  if (k_m >= E) {
    result.truncated = k_m > E;
    result.threshold =
        E ? *std::min_element(mask.values.begin(), mask.values.end()) : 0.0;
    for (const auto& e : graph.edges) kept.insert(e.id);
  } else {
    // Largest threshold t with |{mask >= t}| >= K_M; candidates are the
    // distinct mask values. count(t) is monotone, so binary search applies.
    std::vector<double> uniq = mask.values;
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    auto count_at = [&](double t) {
      std::size_t c = 0;
      for (double v : mask.values) {
        if (v >= t) ++c;
      }
      return c;
    };
    std::size_t lo = 0, hi = uniq.size() - 1;  // invariant: count(uniq[lo]) >= k_m
    while (lo < hi) {
      const std::size_t mid = (lo + hi + 1) / 2;
      if (count_at(uniq[mid]) >= k_m) {
        lo = mid;
      } else {
        hi = mid - 1;
      }
    }
    result.threshold = uniq[lo];
    for (const auto& e : graph.edges) {
      if (mask.values[e.id] >= result.threshold) kept.insert(e.id);
    }
  }

  // Maximum connected component of the kept edges (by edge count; ties by
  // smallest contained node id).
  std::vector<std::size_t> parent(graph.nodes.size());
  std::iota(parent.begin(), parent.end(), 0);
  std::function<std::size_t(std::size_t)> find = [&](std::size_t a) {
    while (parent[a] != a) {
      parent[a] = parent[parent[a]];
      a = parent[a];
    }
    return a;
  };
  for (std::size_t id : kept) {
    const auto& e = graph.edges[id];
    const std::size_t ra = find(e.src), rb = find(e.dst);
    if (ra != rb) parent[std::max(ra, rb)] = std::min(ra, rb);
  }
  std::unordered_map<std::size_t, std::size_t> comp_edges;
  for (std::size_t id : kept) {
    comp_edges[find(graph.edges[id].src)]++;
  }
  std::size_t best_root = 0, best_count = 0;
  bool have = false;
  for (const auto& [root, count] : comp_edges) {
    if (!have || count > best_count ||
        (count == best_count && root < best_root)) {
      best_root = root;
      best_count = count;
      have = true;
    }
  }
  if (have) {
    for (std::size_t id : kept) {
      const auto& e = graph.edges[id];
      if (find(e.src) == best_root) {
        result.edge_ids.insert(id);
        result.node_ids.insert(e.src);
        result.node_ids.insert(e.dst);
      }
    }
  }

  // Fidelity compares the prediction on the masked explanation (mask values
  // kept on selected edges, zero elsewhere) against the unmasked graph,
  // matching the preservation term the explainer is trained on.
  const GnnGraph gg = make_gnn_graph(graph);
  const double full_pred = forward(predictor, gg);
  std::vector<double> restricted(E, 0.0);
  for (std::size_t id : result.edge_ids) restricted[id] = mask.values[id];
  const double sub_pred = forward(predictor, gg, restricted);
  result.fidelity_gap = std::fabs(sub_pred - full_pred);
  return result;
}

double overlap_ratio(const polviz::ExplanationSubgraph& explanation,
                     const std::set<std::size_t>& activated) {
  if (explanation.node_ids.empty()) return 0.0;
  std::size_t inter = 0;
  for (std::size_t id : explanation.node_ids) inter += activated.count(id);
  return static_cast<double>(inter) /
         static_cast<double>(explanation.node_ids.size());
}

std::string model_to_json(const GnnModel& model) {
  json j{{"layers", model.layers},
         {"hidden", model.hidden},
         {"values", model.params}};
  return j.dump();
}

GnnModel model_from_json(const std::string& text) {
  json j = json::parse(text);
  GnnModel m;
  m.layers = j.at("layers").get<int>();
  m.hidden = j.at("hidden").get<int>();
  m.params = j.at("values").get<std::vector<double>>();
  if (m.params.size() != m.param_count()) {
    throw std::invalid_argument("model_from_json: values do not match header");
  }
  return m;
}

std::string explainer_to_json(const Explainer& e) {
  return nn::snapshot_to_json(nn::snapshot(e.net, 0), e.net);
}

Explainer explainer_from_json(const std::string& text) {
  Explainer e;
  nn::snapshot_from_json(text, &e.net);
  return e;
}

}  // namespace pug::gnn
