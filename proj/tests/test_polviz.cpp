#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <random>

#include "pug/nn.hpp"
#include "pug/policy_graph.hpp"
#include "synthetic.hpp"

using namespace pug;

namespace {

// A perturbed copy of the network plus the two snapshots around the change.
struct UpdatePair {
  nn::Mlp arch;
  nn::ParamSnapshot before;
  nn::ParamSnapshot after;
};

UpdatePair make_update(std::uint64_t seed) {
  UpdatePair u;
  u.arch = nn::make_mlp({3, 4, 2}, {nn::Activation::Relu, nn::Activation::Identity},
                        seed);
  u.before = nn::snapshot(u.arch, 0);
  std::mt19937_64 rng(seed + 1);
  std::uniform_real_distribution<double> d(-0.2, 0.2);
  auto flat = u.arch.flatten();
  for (auto& v : flat) v += d(rng);
  u.arch.unflatten(flat);
  u.after = nn::snapshot(u.arch, 1);
  return u;
}

}  // namespace

TEST_CASE("graph construction: counts, values, and feature oracle") {
  auto u = make_update(5);
  auto g = polviz::build_update_graph(u.before, u.after, u.arch);

  CHECK(g.nodes.size() == 3 + 4 + 2);
  CHECK(g.edges.size() == 3 * 4 + 4 * 2);
  CHECK(g.node_layers() == 3);
  CHECK(g.time_index == 1);
  polviz::validate_graph(g);

  // Edge weights carry the new value; dw the absolute change.
  auto delta = nn::diff(u.before, u.after);
  // Weight layout per layer: weights row-major then biases.
  std::size_t p = 0;
  std::size_t eid = 0;
  for (std::size_t l = 0; l < u.arch.layers.size(); ++l) {
    const auto& layer = u.arch.layers[l];
    for (std::size_t i = 0; i < layer.out; ++i) {
      for (std::size_t j = 0; j < layer.in; ++j) {
        const auto& e = g.edges[eid];
        CHECK(e.w == u.after.values[p]);
        CHECK(e.dw == delta[p]);
        CHECK(g.nodes[e.src].layer == l);
        CHECK(g.nodes[e.src].unit == j);
        CHECK(g.nodes[e.dst].layer == l + 1);
        CHECK(g.nodes[e.dst].unit == i);
        ++p;
        ++eid;
      }
    }
    p += layer.out;  // skip biases
  }

  // Node features recomputed independently: edge |dw| incident on the node,
  // plus the node's bias |delta| for non-input layers.
  for (const auto& node : g.nodes) {
    std::vector<double> inc;
    for (const auto& e : g.edges) {
      if (e.src == node.id || e.dst == node.id) inc.push_back(e.dw);
    }
    if (node.layer > 0) {
      std::size_t off = 0;
      for (std::size_t l = 0; l + 1 < node.layer; ++l) {
        off += u.arch.layers[l].out * (u.arch.layers[l].in + 1);
      }
      off += u.arch.layers[node.layer - 1].out * u.arch.layers[node.layer - 1].in;
      inc.push_back(delta[off + node.unit]);
    }
    double sum = 0.0, mx = 0.0;
    std::size_t count = 0;
    for (double v : inc) {
      sum += v;
      mx = std::max(mx, v);
      if (v > polviz::kCountThreshold) ++count;
    }
    REQUIRE(node.features.size() == polviz::kNodeFeatureDim);
    CHECK(node.features[0] == doctest::Approx(sum).epsilon(1e-12));
    CHECK(node.features[1] == doctest::Approx(sum / inc.size()).epsilon(1e-12));
    CHECK(node.features[2] == doctest::Approx(mx).epsilon(1e-12));
    CHECK(node.features[3] == static_cast<double>(count));
    CHECK(node.features[4] ==
          doctest::Approx(node.layer / 2.0).epsilon(1e-12));
  }
}

TEST_CASE("identical snapshots give an all-zero update graph") {
  auto u = make_update(9);
  auto g = polviz::build_update_graph(u.after, u.after, u.arch);
  for (const auto& e : g.edges) CHECK(e.dw == 0.0);
  for (const auto& n : g.nodes) {
    CHECK(n.features[0] == 0.0);
    CHECK(n.features[3] == 0.0);
  }
}

TEST_CASE("graph construction rejects mismatched snapshots") {
  auto u = make_update(2);
  nn::ParamSnapshot bad;
  bad.values = {1.0, 2.0};
  CHECK_THROWS(polviz::build_update_graph(u.before, bad, u.arch));
}

TEST_CASE("activation tagging maps network layer l to node layer l+1") {
  auto u = make_update(3);
  auto g = polviz::build_update_graph(u.before, u.after, u.arch);
  nn::ActivationTrace trace;
  trace.active = {{0, 2}, {}};
  auto tagged = polviz::tag_activations(g, trace);
  for (const auto& n : tagged.nodes) {
    const bool expect = n.layer == 1 && (n.unit == 0 || n.unit == 2);
    CHECK(n.activated == expect);
  }

  nn::ActivationTrace bad;
  bad.active = {{}, {}, {0}};  // would land past the last node layer
  CHECK_THROWS(polviz::tag_activations(g, bad));
}

TEST_CASE("top-k highlight matches a brute-force oracle") {
  std::mt19937_64 rng(123);
  for (int trial = 0; trial < 20; ++trial) {
    auto pg = synth::make_planted(1000 + trial);
    const auto& g = pg.graph;
    const int k = 1 + static_cast<int>(rng() % 10);
    auto hs = polviz::top_k_highlight(g, k);

    // Oracle: rank nodes by their largest incident |dw|.
    std::vector<std::pair<double, std::size_t>> scored;
    for (const auto& n : g.nodes) {
      double best = -1.0;
      for (const auto& e : g.edges) {
        if (e.src == n.id || e.dst == n.id) best = std::max(best, e.dw);
      }
      if (best >= 0.0) scored.push_back({best, n.id});
    }
    std::sort(scored.begin(), scored.end(), [&](auto a, auto b) {
      if (a.first != b.first) return a.first > b.first;
      const auto& na = g.nodes[a.second];
      const auto& nb = g.nodes[b.second];
      return std::tie(na.layer, na.unit) < std::tie(nb.layer, nb.unit);
    });
    std::set<std::size_t> expect;
    for (int i = 0; i < k && i < static_cast<int>(scored.size()); ++i) {
      expect.insert(scored[i].second);
    }
    CHECK(hs.nodes == expect);
    CHECK(hs.k == k);
    // Each highlighted edge touches a highlighted node and is its max edge.
    for (std::size_t eid : hs.edges) {
      const auto& e = g.edges[eid];
      CHECK((hs.nodes.count(e.src) || hs.nodes.count(e.dst)));
    }
    CHECK(hs.edges.size() <= hs.nodes.size());
  }
}

TEST_CASE("downsampling keeps the largest-magnitude edges with dense ids") {
  auto pg = synth::make_planted(77);
  auto g = pg.graph;
  auto small = polviz::downsample_top_edges(g, 10);
  REQUIRE(small.edges.size() == 10);
  CHECK(small.nodes.size() == g.nodes.size());
  polviz::validate_graph(small);

  std::vector<double> dws;
  for (const auto& e : g.edges) dws.push_back(e.dw);
  std::sort(dws.begin(), dws.end(), std::greater<>());
  double min_kept = 1e18;
  for (const auto& e : small.edges) min_kept = std::min(min_kept, e.dw);
  CHECK(min_kept >= dws[9] - 1e-15);

  // A cap at or above the edge count is the identity.
  auto same = polviz::downsample_top_edges(g, g.edges.size() + 5);
  CHECK(same.edges.size() == g.edges.size());
}

TEST_CASE("svg rendering is byte-deterministic and marks element classes") {
  auto pg = synth::make_planted(8);
  auto hs = polviz::top_k_highlight(pg.graph, 4);
  polviz::ExplanationSubgraph ex;
  ex.edge_ids = pg.planted_edges;
  ex.node_ids = pg.planted_nodes;

  auto s1 = polviz::render_svg(pg.graph, hs, &ex);
  auto s2 = polviz::render_svg(pg.graph, hs, &ex);
  CHECK(s1 == s2);
  CHECK(s1.find("<svg") != std::string::npos);
  CHECK(s1.find("class=\"explain\"") != std::string::npos);
  CHECK(s1.find("class=\"highlight-node\"") != std::string::npos);

  auto plain = polviz::render_svg(pg.graph, hs, nullptr);
  CHECK(plain.find("class=\"explain\"") == std::string::npos);
  CHECK(plain.find("class=\"highlight\"") != std::string::npos);

  auto tmp = std::filesystem::temp_directory_path() / "polviz_test.svg";
  polviz::render_svg_file(pg.graph, hs, &ex, tmp.string());
  std::ifstream in(tmp);
  std::string content((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
  CHECK(content == s1);
  std::filesystem::remove(tmp);
}

TEST_CASE("rendering caps the drawn edge count") {
  auto actor = nn::make_actor(16, 6, 1);
  auto before = nn::snapshot(actor, 0);
  auto flat = actor.flatten();
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> d(-0.1, 0.1);
  for (auto& v : flat) v += d(rng);
  actor.unflatten(flat);
  auto g = polviz::build_update_graph(before, nn::snapshot(actor, 1), actor);
  CHECK(g.edges.size() == 13696);
  CHECK(g.nodes.size() == 278);
  polviz::RenderOptions opts;
  opts.edge_cap = 100;
  auto svg = polviz::render_svg(g, {}, nullptr, opts);
  std::size_t lines = 0;
  for (std::size_t pos = 0; (pos = svg.find("<line", pos)) != std::string::npos;
       ++pos) {
    ++lines;
  }
  CHECK(lines <= 100);
}

TEST_CASE("graph json round trip preserves everything") {
  auto pg = synth::make_planted(21);
  auto g = pg.graph;
  g.time_index = 42;
  g.nodes[3].activated = true;
  auto restored = polviz::graph_from_json(polviz::graph_to_json(g));
  CHECK(restored.time_index == 42);
  CHECK(restored.task_id == g.task_id);
  REQUIRE(restored.nodes.size() == g.nodes.size());
  REQUIRE(restored.edges.size() == g.edges.size());
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    CHECK(restored.nodes[i].layer == g.nodes[i].layer);
    CHECK(restored.nodes[i].unit == g.nodes[i].unit);
    CHECK(restored.nodes[i].features == g.nodes[i].features);
    CHECK(restored.nodes[i].activated == g.nodes[i].activated);
  }
  for (std::size_t i = 0; i < g.edges.size(); ++i) {
    CHECK(restored.edges[i].src == g.edges[i].src);
    CHECK(restored.edges[i].dst == g.edges[i].dst);
    CHECK(restored.edges[i].w == g.edges[i].w);
    CHECK(restored.edges[i].dw == g.edges[i].dw);
  }

  auto tmp = std::filesystem::temp_directory_path() / "polviz_test.json";
  polviz::export_json(g, tmp.string());
  auto imported = polviz::import_json(tmp.string());
  CHECK(imported.edges.size() == g.edges.size());
  std::filesystem::remove(tmp);
}

TEST_CASE("validation rejects malformed graphs") {
  auto pg = synth::make_planted(33);

  auto bad_dw = pg.graph;
  bad_dw.edges[0].dw = -0.5;
  CHECK_THROWS(polviz::validate_graph(bad_dw));

  auto bad_layer = pg.graph;
  bad_layer.edges[0].dst = bad_layer.edges[0].src;  // same layer
  CHECK_THROWS(polviz::validate_graph(bad_layer));

  auto bad_feat = pg.graph;
  bad_feat.nodes[0].features.pop_back();
  CHECK_THROWS(polviz::validate_graph(bad_feat));

  auto bad_id = pg.graph;
  bad_id.nodes[1].id = 5;
  CHECK_THROWS(polviz::validate_graph(bad_id));

  CHECK_THROWS(polviz::graph_from_json("{\"nodes\": []"));
}
