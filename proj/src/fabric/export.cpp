#include "posefabric/fabric/export.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <sstream>

#include "posefabric/core/errors.hpp"

namespace posefabric::fabric {

using nlohmann::json;

GraphFormat parse_graph_format(std::string_view text) {
  if (text == "dot") return GraphFormat::dot;
  if (text == "json") return GraphFormat::json;
  throw UsageError("unknown graph format '" + std::string(text) + "' (expected dot or json)");
}

std::string cell_id(CellCoord coord) { return "cell" + coord.str(); }

namespace {

std::string source_id(const Fabric& f, int layer, int scale) {
  if (layer >= f.first_layer) return cell_id(CellCoord{scale, layer});
  if (f.role == FabricRole::backbone) return "stem";
  return "pyramid(" + scale_label(scale) + ")";
}

std::vector<double> softmax_values(std::span<const real> v) {
  real top = v.empty() ? 0 : v[0];
  for (real x : v) top = std::max(top, x);
  std::vector<double> out;
  real total = 0;
  for (real x : v) {
    out.push_back(std::exp(x - top));
    total += out.back();
  }
  for (double& x : out) x /= total;
  return out;
}

}  // namespace

GraphDescription describe(const Fabric& f) {
  GraphDescription g;
  g.name = f.name;
  g.role = std::string(role_name(f.role));
  g.first_layer = f.first_layer;
  g.last_layer = f.last_layer;
  for (OpKind k : f.spec.ops) g.ops.emplace_back(op_name(k));
  if (f.role == FabricRole::backbone)
    g.sources = {"stem"};
  else
    for (int s : f.input_scales) g.sources.push_back(source_id(f, f.first_layer - 1, s));

  const int op_count = f.spec.op_count();
  for (const auto& layer : f.layers)
    for (const Cell& cell : layer) {
      if (cell.empty) continue;
      GraphCell c;
      c.id = cell_id(cell.coord);
      c.scale = scale_label(cell.coord.scale);
      c.layer = cell.coord.layer;
      c.channels = cell.channels;
      c.out_channels = cell.out_channels;
      const auto beta = softmax_values(cell.beta.value().data());
      for (int k = 0; k < 3; ++k) {
        const InputSlot& s = cell.slots[k];
        c.inputs.push_back(GraphInput{source_id(f, cell.coord.layer - 1, s.source_scale), k,
                                      std::string(transform_name(s.transform)), beta[k], !s.primary(),
                                      s.removed});
      }
      for (std::size_t e = 0; e < cell.edges.size(); ++e) {
        const auto [from, to] = edge_endpoints(static_cast<int>(e));
        const auto weights = softmax_values(f.alpha.value().data().subspan(e * op_count, op_count));
        GraphHiddenEdge he{from, to, "", {}, {}};
        double best = -1;
        for (int o = 0; o < op_count; ++o) {
          if (cell.edges[e][o].removed) continue;
          he.ops.emplace_back(op_name(cell.edges[e][o].kind));
          he.weights.push_back(weights[o]);
          if (weights[o] > best) {
            best = weights[o];
            he.dominant = he.ops.back();
          }
        }
        c.edges.push_back(std::move(he));
      }
      g.cells.push_back(std::move(c));
    }
  for (int s : f.output_scales) g.outputs.push_back(cell_id(CellCoord{s, f.last_layer}));
  if (f.last_layer < f.first_layer) g.outputs = {"stem"};
  return g;
}

std::string to_json(const GraphDescription& g) {
  json cells = json::array();
  for (const GraphCell& c : g.cells) {
    json inputs = json::array();
    for (const GraphInput& in : c.inputs)
      inputs.push_back({{"from", in.from},
                        {"slot", in.slot},
                        {"transform", in.transform},
                        {"weight", in.weight},
                        {"duplicated", in.duplicated},
                        {"removed", in.removed}});
    json edges = json::array();
    for (const GraphHiddenEdge& e : c.edges)
      edges.push_back(
          {{"from", e.from}, {"to", e.to}, {"dominant", e.dominant}, {"ops", e.ops}, {"weights", e.weights}});
    cells.push_back({{"id", c.id},
                     {"scale", c.scale},
                     {"layer", c.layer},
                     {"channels", c.channels},
                     {"out_channels", c.out_channels},
                     {"inputs", inputs},
                     {"edges", edges}});
  }
  const json doc = {{"name", g.name},          {"role", g.role},       {"first_layer", g.first_layer},
                    {"last_layer", g.last_layer}, {"ops", g.ops},       {"sources", g.sources},
                    {"cells", cells},          {"outputs", g.outputs}};
  return doc.dump(2) + "\n";
}

GraphDescription description_from_json(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("graph json: ") + e.what());
  }
  try {
    GraphDescription g;
    g.name = doc.at("name").get<std::string>();
    g.role = doc.at("role").get<std::string>();
    g.first_layer = doc.at("first_layer").get<int>();
    g.last_layer = doc.at("last_layer").get<int>();
    g.ops = doc.at("ops").get<std::vector<std::string>>();
    g.sources = doc.at("sources").get<std::vector<std::string>>();
    g.outputs = doc.at("outputs").get<std::vector<std::string>>();
    for (const json& jc : doc.at("cells")) {
      GraphCell c;
      c.id = jc.at("id").get<std::string>();
      c.scale = jc.at("scale").get<std::string>();
      c.layer = jc.at("layer").get<int>();
      c.channels = jc.at("channels").get<int>();
      c.out_channels = jc.at("out_channels").get<int>();
      for (const json& ji : jc.at("inputs"))
        c.inputs.push_back(GraphInput{ji.at("from").get<std::string>(), ji.at("slot").get<int>(),
                                      ji.at("transform").get<std::string>(), ji.at("weight").get<double>(),
                                      ji.at("duplicated").get<bool>(), ji.at("removed").get<bool>()});
      for (const json& je : jc.at("edges"))
        c.edges.push_back(GraphHiddenEdge{je.at("from").get<int>(), je.at("to").get<int>(),
                                          je.at("dominant").get<std::string>(),
                                          je.at("ops").get<std::vector<std::string>>(),
                                          je.at("weights").get<std::vector<double>>()});
      g.cells.push_back(std::move(c));
    }
    return g;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("graph json: ") + e.what());
  }
}

std::string to_dot(const GraphDescription& g) {
  std::ostringstream out;
  out.precision(4);
  out << "digraph \"" << g.name << "\" {\n  rankdir=LR;\n  node [shape=box];\n";
  for (const std::string& s : g.sources) out << "  \"" << s << "\" [shape=ellipse];\n";
  for (const GraphCell& c : g.cells) {
    out << "  \"" << c.id << "\" [label=\"" << c.id << "\\n" << c.channels << "->" << c.out_channels << "ch";
    for (const GraphHiddenEdge& e : c.edges) out << "\\nh" << e.from << "->h" << e.to << ": " << e.dominant;
    out << "\"";
    for (const std::string& o : g.outputs)
      if (o == c.id) out << ", peripheries=2";
    out << "];\n";
  }
  for (const GraphCell& c : g.cells)
    for (const GraphInput& in : c.inputs) {
      if (in.removed) continue;
      out << "  \"" << in.from << "\" -> \"" << c.id << "\" [label=\"" << in.transform << " " << in.weight
          << "\"";
      if (in.duplicated) out << ", style=dashed";
      out << "];\n";
    }
  out << "}\n";
  return out.str();
}

std::string export_graph(const Fabric& fabric, GraphFormat format) {
  const GraphDescription g = describe(fabric);
  return format == GraphFormat::dot ? to_dot(g) : to_json(g);
}

std::string export_graph(const Fabric& fabric, std::string_view format) {
  return export_graph(fabric, parse_graph_format(format));
}

}  // namespace posefabric::fabric
