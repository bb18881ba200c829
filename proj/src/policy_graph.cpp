#include "pug/policy_graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace pug::polviz {

using json = nlohmann::json;

std::size_t PolicyGraph::node_layers() const {
  std::size_t n = 0;
  for (const auto& node : nodes) n = std::max(n, node.layer + 1);
  return n;
}

void validate_graph(const PolicyGraph& graph) {
  for (std::size_t i = 0; i < graph.nodes.size(); ++i) {
    const GraphNode& n = graph.nodes[i];
    if (n.id != i) throw std::invalid_argument("graph: node ids must be dense");
    if (n.features.size() != kNodeFeatureDim) {
      throw std::invalid_argument("graph: node feature dimension must be 5");
    }
  }
  for (std::size_t i = 0; i < graph.edges.size(); ++i) {
    const GraphEdge& e = graph.edges[i];
    if (e.id != i) throw std::invalid_argument("graph: edge ids must be dense");
    if (e.src >= graph.nodes.size() || e.dst >= graph.nodes.size()) {
      throw std::invalid_argument("graph: edge endpoint out of range");
    }
    if (graph.nodes[e.dst].layer != graph.nodes[e.src].layer + 1) {
      throw std::invalid_argument(
          "graph: edges must connect adjacent layers only");
    }
    if (e.dw < 0.0) throw std::invalid_argument("graph: dw must be >= 0");
  }
}

PolicyGraph build_update_graph(const nn::ParamSnapshot& prev,
                               const nn::ParamSnapshot& next,
                               const nn::Mlp& arch) {
  if (prev.values.size() != arch.param_count() ||
      next.values.size() != arch.param_count()) {
    throw std::invalid_argument("build_update_graph: snapshot layout mismatch");
  }
  std::vector<double> delta = nn::diff(prev, next);

  PolicyGraph g;
  g.time_index = next.time_index;
  const std::size_t n_layers = arch.layers.size();

  std::vector<std::size_t> layer_offset(n_layers + 1);
  layer_offset[0] = 0;
  std::size_t node_count = arch.layers.front().in;
  for (std::size_t l = 0; l < n_layers; ++l) {
    layer_offset[l + 1] = node_count;
    node_count += arch.layers[l].out;
  }

  std::size_t id = 0;
  for (std::size_t l = 0; l <= n_layers; ++l) {
    const std::size_t width =
        l == 0 ? arch.layers.front().in : arch.layers[l - 1].out;
    for (std::size_t u = 0; u < width; ++u) {
      GraphNode node;
      node.id = id++;
      node.layer = l;
      node.unit = u;
      g.nodes.push_back(std::move(node));
    }
  }

  // Incident |dw| multiset per node; bias deltas count toward the target
  // node's statistics but are not drawn as edges.
  std::vector<std::vector<double>> incident(g.nodes.size());
  std::size_t p = 0;
  std::size_t edge_id = 0;
  for (std::size_t l = 0; l < n_layers; ++l) {
    const nn::Layer& layer = arch.layers[l];
    for (std::size_t i = 0; i < layer.out; ++i) {
      for (std::size_t j = 0; j < layer.in; ++j) {
        GraphEdge e;
        e.id = edge_id++;
        e.src = layer_offset[l] + j;
        e.dst = layer_offset[l + 1] + i;
        e.w = next.values[p];
        e.dw = delta[p];
        incident[e.src].push_back(e.dw);
        incident[e.dst].push_back(e.dw);
        g.edges.push_back(std::move(e));
        ++p;
      }
    }
    for (std::size_t i = 0; i < layer.out; ++i) {
      incident[layer_offset[l + 1] + i].push_back(delta[p]);
      ++p;
    }
  }

  const double layer_norm =
      n_layers > 0 ? 1.0 / static_cast<double>(n_layers) : 0.0;
  for (GraphNode& node : g.nodes) {
    const auto& inc = incident[node.id];
    double sum = 0.0, mx = 0.0;
    std::size_t count = 0;
    for (double d : inc) {
      sum += d;
      mx = std::max(mx, d);
      if (d > kCountThreshold) ++count;
    }
    node.features = {sum, inc.empty() ? 0.0 : sum / inc.size(), mx,
                     static_cast<double>(count),
                     static_cast<double>(node.layer) * layer_norm};
  }
  validate_graph(g);
  return g;
}

PolicyGraph tag_activations(PolicyGraph graph, const nn::ActivationTrace& trace) {
  const std::size_t n_layers = graph.node_layers();
  for (auto& n : graph.nodes) n.activated = false;
  for (std::size_t l = 0; l < trace.active.size(); ++l) {
    // Mlp layer l feeds node layer l + 1.
    if (l + 1 >= n_layers && !trace.active[l].empty()) {
      throw std::invalid_argument("tag_activations: trace layer out of range");
    }
    for (std::size_t unit : trace.active[l]) {
      bool found = false;
      for (auto& n : graph.nodes) {
        if (n.layer == l + 1 && n.unit == unit) {
          n.activated = true;
          found = true;
          break;
        }
      }
      if (!found) {
        throw std::invalid_argument("tag_activations: trace unit out of range");
      }
    }
  }
  return graph;
}

HighlightSet top_k_highlight(const PolicyGraph& graph, int k) {
  if (k < 1) throw std::invalid_argument("top_k_highlight: k must be >= 1");
  struct Rank {
    double max_dw = -1.0;
    std::size_t best_edge = 0;
    bool has_edge = false;
    std::size_t node = 0;
  };
  std::vector<Rank> ranks(graph.nodes.size());
  for (std::size_t i = 0; i < ranks.size(); ++i) ranks[i].node = i;
  for (const GraphEdge& e : graph.edges) {
    for (std::size_t endpoint : {e.src, e.dst}) {
      Rank& r = ranks[endpoint];
      if (!r.has_edge || e.dw > r.max_dw) {
        r.max_dw = e.dw;
        r.best_edge = e.id;
        r.has_edge = true;
      }
    }
  }
  std::vector<std::size_t> order(graph.nodes.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (ranks[a].max_dw != ranks[b].max_dw) {
      return ranks[a].max_dw > ranks[b].max_dw;
    }
    const GraphNode& na = graph.nodes[a];
    const GraphNode& nb = graph.nodes[b];
    return std::tie(na.layer, na.unit) < std::tie(nb.layer, nb.unit);
  });
  HighlightSet hs;
  hs.k = k;
  const std::size_t take =
      std::min(order.size(), static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < take; ++i) {
    hs.nodes.insert(order[i]);
    if (ranks[order[i]].has_edge) hs.edges.insert(ranks[order[i]].best_edge);
  }
  return hs;
}

PolicyGraph downsample_top_edges(const PolicyGraph& graph, std::size_t cap) {
  if (graph.edges.size() <= cap) return graph;
  std::vector<std::size_t> order(graph.edges.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (graph.edges[a].dw != graph.edges[b].dw) {
      return graph.edges[a].dw > graph.edges[b].dw;
    }
    return a < b;
  });
  order.resize(cap);
  std::sort(order.begin(), order.end());
  PolicyGraph out = graph;
  out.edges.clear();
  for (std::size_t i = 0; i < order.size(); ++i) {
    GraphEdge e = graph.edges[order[i]];
    e.id = i;
    out.edges.push_back(e);
  }
  return out;
}

static std::string fmt(double v, int prec = 2) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", prec, v);
  return buf;
}

std::string render_svg(const PolicyGraph& graph, const HighlightSet& highlight,
                       const ExplanationSubgraph* explanation,
                       const RenderOptions& opts) {
  const double margin = 40.0;
  const std::size_t n_layers = std::max<std::size_t>(graph.node_layers(), 2);
  std::vector<std::size_t> layer_width(n_layers, 0);
  for (const auto& n : graph.nodes) layer_width[n.layer]++;

  auto node_x = [&](const GraphNode& n) {
    return margin + static_cast<double>(n.layer) * (opts.width - 2 * margin) /
                        static_cast<double>(n_layers - 1);
  };
  auto node_y = [&](const GraphNode& n) {
    const double span = opts.height - 2 * margin;
    const std::size_t w = layer_width[n.layer];
    return margin + (static_cast<double>(n.unit) + 0.5) * span /
                        static_cast<double>(std::max<std::size_t>(w, 1));
  };

  // Subsample to the top edges by |dw| above the cap; ties by edge id.
  std::vector<std::size_t> drawn(graph.edges.size());
  for (std::size_t i = 0; i < drawn.size(); ++i) drawn[i] = i;
  if (drawn.size() > opts.edge_cap) {
    std::sort(drawn.begin(), drawn.end(), [&](std::size_t a, std::size_t b) {
      if (graph.edges[a].dw != graph.edges[b].dw) {
        return graph.edges[a].dw > graph.edges[b].dw;
      }
      return a < b;
    });
    drawn.resize(opts.edge_cap);
    std::sort(drawn.begin(), drawn.end());
  }
  double max_dw = 0.0;
  for (std::size_t i : drawn) max_dw = std::max(max_dw, graph.edges[i].dw);

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\""
      << fmt(opts.width, 0) << "\" height=\"" << fmt(opts.height, 0)
      << "\" viewBox=\"0 0 " << fmt(opts.width, 0) << " "
      << fmt(opts.height, 0) << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n";

  for (std::size_t i : drawn) {
    const GraphEdge& e = graph.edges[i];
    const GraphNode& a = graph.nodes[e.src];
    const GraphNode& b = graph.nodes[e.dst];
    const double width =
        max_dw > 0.0 ? 0.2 + 2.5 * e.dw / max_dw : 0.2;
    std::string stroke = "#b0b0b0";
    std::string cls;
    if (explanation && explanation->edge_ids.count(e.id)) {
      stroke = "#2e8b57";
      cls = " class=\"explain\"";
    } else if (highlight.edges.count(e.id)) {
      stroke = "#ff8c00";
      cls = " class=\"highlight\"";
    }
    svg << "<line x1=\"" << fmt(node_x(a)) << "\" y1=\"" << fmt(node_y(a))
        << "\" x2=\"" << fmt(node_x(b)) << "\" y2=\"" << fmt(node_y(b))
        << "\" stroke=\"" << stroke << "\" stroke-width=\"" << fmt(width, 3)
        << "\"" << cls << "/>\n";
  }

  for (const GraphNode& n : graph.nodes) {
    const std::string fill = n.activated ? "#e74c3c" : "#4a90d9";
    std::string extra;
    if (highlight.nodes.count(n.id)) {
      extra = " stroke=\"#ff8c00\" stroke-width=\"2\" class=\"highlight-node\"";
    }
    svg << "<circle cx=\"" << fmt(node_x(n)) << "\" cy=\"" << fmt(node_y(n))
        << "\" r=\"4\" fill=\"" << fill << "\"" << extra << "/>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

void render_svg_file(const PolicyGraph& graph, const HighlightSet& highlight,
                     const ExplanationSubgraph* explanation,
                     const std::string& path, const RenderOptions& opts) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("render_svg_file: cannot open " + path);
  out << render_svg(graph, highlight, explanation, opts);
  if (!out) throw std::runtime_error("render_svg_file: write failed: " + path);
}

std::string graph_to_json(const PolicyGraph& graph) {
  json nodes = json::array();
  for (const auto& n : graph.nodes) {
    nodes.push_back({{"id", n.id},
                     {"layer", n.layer},
                     {"unit", n.unit},
                     {"features", n.features},
                     {"activated", n.activated}});
  }
  json edges = json::array();
  for (const auto& e : graph.edges) {
    edges.push_back({{"src", e.src}, {"dst", e.dst}, {"w", e.w}, {"dw", e.dw}});
  }
  json j{{"nodes", nodes},
         {"edges", edges},
         {"meta", {{"T", graph.time_index}, {"task_id", graph.task_id}}}};
  return j.dump();
}

PolicyGraph graph_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("graph schema: bad json: ") +
                                e.what());
  }
  PolicyGraph g;
  try {
    for (const auto& n : j.at("nodes")) {
      GraphNode node;
      node.id = n.at("id").get<std::size_t>();
      node.layer = n.at("layer").get<std::size_t>();
      node.unit = n.at("unit").get<std::size_t>();
      node.features = n.at("features").get<std::vector<double>>();
      node.activated = n.at("activated").get<bool>();
      g.nodes.push_back(std::move(node));
    }
    std::size_t id = 0;
    for (const auto& e : j.at("edges")) {
      GraphEdge edge;
      edge.id = id++;
      edge.src = e.at("src").get<std::size_t>();
      edge.dst = e.at("dst").get<std::size_t>();
      edge.w = e.at("w").get<double>();
      edge.dw = e.at("dw").get<double>();
      g.edges.push_back(std::move(edge));
    }
    g.time_index = j.at("meta").at("T").get<std::int64_t>();
    g.task_id = j.at("meta").at("task_id").get<std::string>();
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("graph schema: ") + e.what());
  }
  validate_graph(g);
  return g;
}

void export_json(const PolicyGraph& graph, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("export_json: cannot open " + path);
  out << graph_to_json(graph);
  if (!out) throw std::runtime_error("export_json: write failed: " + path);
}

PolicyGraph import_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("import_json: cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return graph_from_json(ss.str());
}

}  // namespace pug::polviz
