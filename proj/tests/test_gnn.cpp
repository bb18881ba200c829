#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "pug/gnn.hpp"
#include "pug/nn.hpp"
#include "pug/policy_graph.hpp"
#include "synthetic.hpp"

using namespace pug;

namespace {

// Area under the ROC curve for mask scores against a binary edge label.
double auc(const std::vector<double>& scores, const std::set<std::size_t>& pos) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!pos.count(i)) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (pos.count(j)) continue;
      pairs += 1.0;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return pairs > 0.0 ? wins / pairs : 0.0;
}

// Relabel nodes by a random permutation and shuffle the edge order; the
// prediction must not change.
polviz::PolicyGraph permuted_copy(const polviz::PolicyGraph& g,
                                  std::mt19937_64& rng) {
  std::vector<std::size_t> perm(g.nodes.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);

  polviz::PolicyGraph out;
  out.time_index = g.time_index;
  out.task_id = g.task_id;
  out.nodes.resize(g.nodes.size());
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    polviz::GraphNode n = g.nodes[i];
    n.id = perm[i];
    out.nodes[perm[i]] = n;
  }
  std::vector<std::size_t> order(g.edges.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  for (std::size_t k = 0; k < order.size(); ++k) {
    polviz::GraphEdge e = g.edges[order[k]];
    e.id = k;
    e.src = perm[e.src];
    e.dst = perm[e.dst];
    out.edges.push_back(e);
  }
  polviz::validate_graph(out);
  return out;
}

}  // namespace

TEST_CASE("model parameter count matches the layout formula") {
  auto model = gnn::GnnModel::make(3, 32, 1);
  const std::size_t h = 32;
  const std::size_t expect = h * 5 + h                  // input embed
                             + 3 * (h * (2 * h + 3) + h  // message
                                    + h * 2 * h + h)     // update
                             + h + 1;                    // readout
  CHECK(model.param_count() == expect);
  CHECK(model.params.size() == expect);
  auto same = gnn::GnnModel::make(3, 32, 1);
  CHECK(model.params == same.params);
  auto other = gnn::GnnModel::make(3, 32, 2);
  CHECK(model.params != other.params);
}

TEST_CASE("fused forward equals the exposed op-by-op composition") {
  auto pg = synth::make_planted(17);
  auto model = gnn::GnnModel::make(3, 8, 5);
  auto graph = gnn::make_gnn_graph(pg.graph);

  const std::size_t n = graph.n_nodes;
  const int hidden = model.hidden;

  std::vector<std::vector<double>> h(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> xi(graph.x.begin() + i * gnn::kNodeInputDim,
                           graph.x.begin() + (i + 1) * gnn::kNodeInputDim);
    h[i] = gnn::embed_op(model, xi);
    REQUIRE(h[i].size() == static_cast<std::size_t>(hidden));
  }
  for (int layer = 0; layer < model.layers; ++layer) {
    std::vector<std::vector<std::vector<double>>> inbox(n);
    for (const auto& e : pg.graph.edges) {
      const std::array<double, 3> rel = {
          e.w, e.dw,
          static_cast<double>(pg.graph.nodes[e.src].layer) /
              (pg.graph.node_layers() - 1)};
      // Undirected: each edge sends a message both ways. message_op takes
      // the receiver's state first.
      inbox[e.dst].push_back(gnn::message_op(model, layer, h[e.dst], h[e.src], rel));
      inbox[e.src].push_back(gnn::message_op(model, layer, h[e.src], h[e.dst], rel));
    }
    std::vector<std::vector<double>> next(n);
    for (std::size_t i = 0; i < n; ++i) {
      auto agg = gnn::aggregate_op(inbox[i], hidden);
      next[i] = gnn::update_op(model, layer, agg, h[i]);
    }
    h = std::move(next);
  }
  const double composed = gnn::readout_op(model, h);
  const double fused = gnn::forward(model, graph);
  CHECK(fused == doctest::Approx(composed).epsilon(1e-12));
  CHECK(gnn::predict_progress(model, pg.graph) == fused);
}

TEST_CASE("aggregate_op of an empty neighborhood is the zero vector") {
  auto agg = gnn::aggregate_op({}, 4);
  CHECK(agg == std::vector<double>(4, 0.0));
}

TEST_CASE("prediction is invariant to node relabeling and edge order") {
  std::mt19937_64 rng(7);
  auto model = gnn::GnnModel::make(3, 16, 9);
  for (int trial = 0; trial < 50; ++trial) {
    auto pg = synth::make_planted(2000 + trial);
    const double base = gnn::predict_progress(model, pg.graph);
    auto perm = permuted_copy(pg.graph, rng);
    const double p = gnn::predict_progress(model, perm);
    CHECK(std::abs(p - base) < 1e-9);
  }
}

TEST_CASE("an all-ones mask matches the unmasked forward; zeros cut all edges") {
  auto pg = synth::make_planted(3);
  auto model = gnn::GnnModel::make(2, 8, 4);
  auto graph = gnn::make_gnn_graph(pg.graph);

  std::vector<double> ones(graph.n_edges, 1.0);
  CHECK(gnn::forward(model, graph, ones) == gnn::forward(model, graph));

  std::vector<double> zeros(graph.n_edges, 0.0);
  auto edgeless = gnn::make_gnn_graph(pg.graph, {});
  CHECK(edgeless.sender.empty());
  CHECK(gnn::forward(model, graph, zeros) ==
        doctest::Approx(gnn::forward(model, edgeless)).epsilon(1e-12));

  std::vector<double> wrong(graph.n_edges + 1, 1.0);
  CHECK_THROWS(gnn::forward(model, graph, wrong));
}

TEST_CASE("parameter and mask gradients match finite differences") {
  auto pg = synth::make_planted(13);
  auto model = gnn::GnnModel::make(2, 6, 11);
  auto graph = gnn::make_gnn_graph(pg.graph);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> um(0.1, 0.9);
  std::vector<double> mask(graph.n_edges);
  for (auto& m : mask) m = um(rng);

  gnn::ForwardCache cache;
  gnn::forward(model, graph, mask, &cache);
  std::vector<double> pgrad;
  std::vector<double> mgrad;
  gnn::backward(model, graph, mask, cache, 1.0, pgrad, &mgrad);
  REQUIRE(pgrad.size() == model.param_count());
  REQUIRE(mgrad.size() == graph.n_edges);

  const double eps = 1e-6;
  std::uniform_int_distribution<std::size_t> pick(0, model.param_count() - 1);
  double max_rel = 0.0;
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t k = pick(rng);
    auto perturbed = model;
    perturbed.params[k] += eps;
    const double up = gnn::forward(perturbed, graph, mask);
    perturbed.params[k] -= 2 * eps;
    const double down = gnn::forward(perturbed, graph, mask);
    const double numeric = (up - down) / (2 * eps);
    const double denom = std::max(1e-8, std::abs(numeric) + std::abs(pgrad[k]));
    max_rel = std::max(max_rel, std::abs(numeric - pgrad[k]) / denom);
  }
  CHECK(max_rel < 1e-4);

  double max_rel_mask = 0.0;
  for (std::size_t e = 0; e < graph.n_edges; ++e) {
    auto m2 = mask;
    m2[e] += eps;
    const double up = gnn::forward(model, graph, m2);
    m2[e] -= 2 * eps;
    const double down = gnn::forward(model, graph, m2);
    const double numeric = (up - down) / (2 * eps);
    const double denom = std::max(1e-8, std::abs(numeric) + std::abs(mgrad[e]));
    max_rel_mask = std::max(max_rel_mask, std::abs(numeric - mgrad[e]) / denom);
  }
  CHECK(max_rel_mask < 1e-4);
}

TEST_CASE("dataset split follows iteration parity") {
  auto ds = synth::make_dataset(7, 1);
  auto train = ds.train_indices();
  auto val = ds.validation_indices();
  CHECK(train.size() == 4);
  CHECK(val.size() == 3);
  for (auto i : train) CHECK(ds.entries[i].iteration % 2 == 0);
  for (auto i : val) CHECK(ds.entries[i].iteration % 2 == 1);
}

TEST_CASE("predictor training beats the predict-the-mean baseline") {
  auto ds = synth::make_dataset(60, 42);
  auto model = gnn::GnnModel::make(3, 32, 7);
  auto report = gnn::train_predictor(model, ds, 200, 3e-3, 99);
  REQUIRE(!report.train_loss_curve.empty());
  CHECK(report.train_loss_curve.back() < report.train_loss_curve.front());
  CHECK(report.baseline_mse > 0.0);
  CHECK(report.validation_mse < 0.7 * report.baseline_mse);
}

TEST_CASE("training is deterministic under a fixed seed") {
  auto ds = synth::make_dataset(10, 4);
  auto m1 = gnn::GnnModel::make(2, 8, 3);
  auto m2 = gnn::GnnModel::make(2, 8, 3);
  gnn::train_predictor(m1, ds, 3, 1e-3, 5);
  gnn::train_predictor(m2, ds, 3, 1e-3, 5);
  CHECK(m1.params == m2.params);
}

TEST_CASE("explainer recovers planted edges and preserves the prediction") {
  auto ds = synth::make_dataset(60, 314);
  auto model = gnn::GnnModel::make(3, 32, 7);
  gnn::train_predictor(model, ds, 400, 3e-3, 99);

  auto explainer = gnn::Explainer::make(32, 15);
  gnn::GnnConfig cfg;
  cfg.explainer_epochs = 300;
  cfg.explainer_lr = 3e-3;
  cfg.sparsity_coef = 0.5;
  cfg.activation_coef = 0.25;
  auto report = gnn::train_explainer(explainer, model, ds, cfg, 55);
  REQUIRE(!report.loss_curve.empty());
  CHECK(report.loss_curve.back() < report.loss_curve.front());
  // The sparsity pressure should push the average mask down.
  CHECK(report.final_mean_mask < report.initial_mean_mask);

  double auc_sum = 0.0;
  int fidelity_ok = 0;
  auto val = ds.validation_indices();
  for (auto i : val) {
    auto pg = synth::make_planted(
        nn::stream_seed(314, "planted:" + std::to_string(i)));
    auto mask = gnn::compute_mask(explainer, model, ds.entries[i].graph);
    auc_sum += auc(mask.values, pg.planted_edges);

    auto sub = gnn::extract_subgraph(ds.entries[i].graph, mask, 8, model);
    const double phi = gnn::predict_progress(model, ds.entries[i].graph);
    if (sub.fidelity_gap <= 0.1 * (std::abs(phi) + 0.1)) ++fidelity_ok;
  }
  CHECK(auc_sum / val.size() >= 0.9);
  CHECK(fidelity_ok >= static_cast<int>(0.9 * val.size()));
}

TEST_CASE("subgraph extraction matches a linear threshold scan") {
  auto model = gnn::GnnModel::make(2, 8, 1);
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> um(0.0, 1.0);
  for (int trial = 0; trial < 25; ++trial) {
    auto pg = synth::make_planted(5000 + trial);
    gnn::EdgeMask mask;
    mask.values.resize(pg.graph.edges.size());
    for (auto& v : mask.values) v = um(rng);
    if (trial % 5 == 0) {
      // Force ties at the cut.
      for (std::size_t i = 0; i + 1 < mask.values.size(); i += 2) {
        mask.values[i + 1] = mask.values[i];
      }
    }
    const std::size_t k_m = 1 + rng() % 12;
    auto sub = gnn::extract_subgraph(pg.graph, mask, k_m, model);

    // Oracle: scan all candidate thresholds for the largest one keeping at
    // least k_m edges, ties included.
    std::vector<double> uniq = mask.values;
    std::sort(uniq.begin(), uniq.end(), std::greater<>());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    double best = uniq.back();
    for (double t : uniq) {
      std::size_t kept = 0;
      for (double v : mask.values) {
        if (v >= t) ++kept;
      }
      if (kept >= k_m) {
        best = t;
        break;
      }
    }
    CHECK(sub.threshold == best);
    CHECK(!sub.truncated);

    // The result is a connected component of the kept edges, at least as
    // large as any other component.
    std::set<std::size_t> kept_edges;
    for (std::size_t e = 0; e < mask.values.size(); ++e) {
      if (mask.values[e] >= best) kept_edges.insert(e);
    }
    for (auto e : sub.edge_ids) CHECK(kept_edges.count(e));

    // Union-find over kept edges for the oracle component sizes.
    std::vector<std::size_t> parent(pg.graph.nodes.size());
    std::iota(parent.begin(), parent.end(), 0);
    std::function<std::size_t(std::size_t)> find = [&](std::size_t a) {
      while (parent[a] != a) a = parent[a] = parent[parent[a]];
      return a;
    };
    for (auto e : kept_edges) {
      parent[find(pg.graph.edges[e].src)] = find(pg.graph.edges[e].dst);
    }
    std::map<std::size_t, std::size_t> comp_edges;
    for (auto e : kept_edges) comp_edges[find(pg.graph.edges[e].src)]++;
    std::size_t best_comp = 0;
    for (auto& [root, cnt] : comp_edges) best_comp = std::max(best_comp, cnt);
    CHECK(sub.edge_ids.size() == best_comp);

    // Induced nodes are exactly the endpoints.
    std::set<std::size_t> endpoints;
    for (auto e : sub.edge_ids) {
      endpoints.insert(pg.graph.edges[e].src);
      endpoints.insert(pg.graph.edges[e].dst);
    }
    CHECK(sub.node_ids == endpoints);

    // Fidelity is the gap to the forward pass with the mask restricted to
    // the selected edges and zero elsewhere.
    auto gg = gnn::make_gnn_graph(pg.graph);
    std::vector<double> restricted(mask.values.size(), 0.0);
    for (auto e : sub.edge_ids) restricted[e] = mask.values[e];
    const double phi_sub = gnn::forward(model, gg, restricted);
    const double phi_full = gnn::predict_progress(model, pg.graph);
    CHECK(sub.fidelity_gap ==
          doctest::Approx(std::abs(phi_sub - phi_full)).epsilon(1e-12));
  }
}

TEST_CASE("k_m beyond the edge count returns the full graph as truncated") {
  auto pg = synth::make_planted(8);
  auto model = gnn::GnnModel::make(2, 8, 1);
  gnn::EdgeMask mask;
  mask.values.assign(pg.graph.edges.size(), 0.5);
  auto sub = gnn::extract_subgraph(pg.graph, mask, pg.graph.edges.size() + 1, model);
  CHECK(sub.truncated);
  CHECK(sub.edge_ids.size() == pg.graph.edges.size());
}

TEST_CASE("overlap ratio counts explanation nodes that were activated") {
  polviz::ExplanationSubgraph sub;
  sub.node_ids = {1, 2, 3, 4};
  CHECK(gnn::overlap_ratio(sub, {2, 4, 9}) == doctest::Approx(0.5));
  CHECK(gnn::overlap_ratio(sub, {}) == 0.0);
  polviz::ExplanationSubgraph empty;
  CHECK(gnn::overlap_ratio(empty, {1}) == 0.0);
}

TEST_CASE("model and explainer json round trips are bitwise exact") {
  auto model = gnn::GnnModel::make(3, 16, 123);
  auto restored = gnn::model_from_json(gnn::model_to_json(model));
  CHECK(restored.layers == model.layers);
  CHECK(restored.hidden == model.hidden);
  CHECK(restored.params == model.params);

  auto ex = gnn::Explainer::make(16, 5);
  auto ex2 = gnn::explainer_from_json(gnn::explainer_to_json(ex));
  CHECK(ex2.net.flatten() == ex.net.flatten());

  CHECK_THROWS(gnn::model_from_json("{}"));
}

TEST_CASE("raising an included edge's mask keeps it above the found threshold") {
  auto model = gnn::GnnModel::make(2, 8, 31);
  std::mt19937_64 rng(606);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    auto pg = synth::make_planted(6200 + trial);
    gnn::EdgeMask mask;
    mask.values.resize(pg.graph.edges.size());
    for (auto& v : mask.values) v = u(rng);
    const std::size_t k_m = 1 + rng() % pg.graph.edges.size();
    auto before = gnn::extract_subgraph(pg.graph, mask, k_m, model);

    // Pick an edge at or above the threshold and push it upward.
    for (std::size_t id = 0; id < mask.values.size(); ++id) {
      if (mask.values[id] < before.threshold) continue;
      gnn::EdgeMask raised = mask;
      raised.values[id] += 0.25 + u(rng);
      auto after = gnn::extract_subgraph(pg.graph, raised, k_m, model);
      CHECK(raised.values[id] >= after.threshold);
      break;
    }
  }
}
