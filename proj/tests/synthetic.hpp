#pragma once

// Planted-edge graphs with a known progress target: a fixed connected subset
// of edges carries large update magnitudes and the regression signal, the
// rest is low-magnitude noise. Used as the recovery oracle for the predictor
// and the explainer.

#include <cstdint>
#include <random>
#include <set>
#include <vector>

#include "pug/gnn.hpp"
#include "pug/nn.hpp"
#include "pug/policy_graph.hpp"

namespace pug::synth {

struct PlantedGraph {
  polviz::PolicyGraph graph;
  std::set<std::size_t> planted_edges;
  std::set<std::size_t> planted_nodes;
  double progress = 0.0;
};

// Recompute node features from the edge list alone (no bias terms here):
// [sum, mean, max, count > tau, layer / n_weight_layers].
inline void fill_features(polviz::PolicyGraph& g) {
  const std::size_t n_layers = g.node_layers();
  std::vector<std::vector<double>> incident(g.nodes.size());
  for (const auto& e : g.edges) {
    incident[e.src].push_back(e.dw);
    incident[e.dst].push_back(e.dw);
  }
  const double norm = n_layers > 1 ? 1.0 / static_cast<double>(n_layers - 1) : 0.0;
  for (auto& node : g.nodes) {
    const auto& inc = incident[node.id];
    double sum = 0.0, mx = 0.0;
    std::size_t count = 0;
    for (double d : inc) {
      sum += d;
      mx = std::max(mx, d);
      if (d > polviz::kCountThreshold) ++count;
    }
    node.features = {sum, inc.empty() ? 0.0 : sum / inc.size(), mx,
                     static_cast<double>(count),
                     static_cast<double>(node.layer) * norm};
  }
}

// Fully connected 4-6-4 layered graph (48 edges). Six fixed edges forming a
// connected subgraph are "planted": their |dw| is drawn from U(0.5, 1) and
// the target is their sum. Distractor edges draw |dw| from U(0, 0.1).
inline PlantedGraph make_planted(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uw(-1.0, 1.0);
  std::uniform_real_distribution<double> noise(0.0, 0.1);
  std::uniform_real_distribution<double> signal(0.5, 1.0);

  const std::vector<std::size_t> widths = {4, 6, 4};
  polviz::PolicyGraph g;
  g.task_id = "synthetic";
  std::vector<std::size_t> offset(widths.size() + 1, 0);
  std::size_t id = 0;
  for (std::size_t l = 0; l < widths.size(); ++l) {
    offset[l] = id;
    for (std::size_t u = 0; u < widths[l]; ++u) {
      polviz::GraphNode n;
      n.id = id++;
      n.layer = l;
      n.unit = u;
      g.nodes.push_back(n);
    }
  }
  offset[widths.size()] = id;

  // (layer, src unit, dst unit) of the planted, connected subset.
  const std::vector<std::array<std::size_t, 3>> planted = {
      {0, 0, 1}, {0, 2, 1}, {1, 1, 0}, {1, 1, 3}, {0, 0, 4}, {1, 4, 0}};

  PlantedGraph out;
  std::size_t eid = 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    for (std::size_t i = 0; i < widths[l]; ++i) {
      for (std::size_t j = 0; j < widths[l + 1]; ++j) {
        polviz::GraphEdge e;
        e.id = eid++;
        e.src = offset[l] + i;
        e.dst = offset[l + 1] + j;
        e.w = uw(rng);
        bool is_planted = false;
        for (const auto& p : planted) {
          if (p[0] == l && p[1] == i && p[2] == j) is_planted = true;
        }
        if (is_planted) {
          e.dw = signal(rng);
          out.planted_edges.insert(e.id);
          out.planted_nodes.insert(e.src);
          out.planted_nodes.insert(e.dst);
          out.progress += e.dw;
        } else {
          e.dw = noise(rng);
        }
        g.edges.push_back(e);
      }
    }
  }
  fill_features(g);
  for (auto& n : g.nodes) n.activated = out.planted_nodes.count(n.id) > 0;
  polviz::validate_graph(g);
  out.graph = std::move(g);
  return out;
}

inline gnn::ProgressDataset make_dataset(std::size_t n, std::uint64_t seed) {
  gnn::ProgressDataset ds;
  for (std::size_t i = 0; i < n; ++i) {
    PlantedGraph pg =
        make_planted(nn::stream_seed(seed, "planted:" + std::to_string(i)));
    gnn::DatasetEntry entry;
    entry.graph = std::move(pg.graph);
    entry.progress = pg.progress;
    entry.activated = pg.planted_nodes;
    entry.task_id = "synthetic";
    entry.iteration = static_cast<std::int64_t>(i);
    ds.entries.push_back(std::move(entry));
  }
  return ds;
}

}  // namespace pug::synth
