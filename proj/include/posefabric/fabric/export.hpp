#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "posefabric/fabric/fabric.hpp"

namespace posefabric::fabric {

enum class GraphFormat { dot, json };

GraphFormat parse_graph_format(std::string_view text);

/// One cross-scale input of a cell: which node feeds slot `slot`, through
/// which transform, with its softmax(beta) weight.
struct GraphInput {
  std::string from;
  int slot = 0;
  std::string transform;
  double weight = 0;
  bool duplicated = false;
  bool removed = false;

  bool operator==(const GraphInput&) const = default;
};

/// One hidden-node edge of a cell with its surviving op weights.
struct GraphHiddenEdge {
  int from = 0;
  int to = 0;
  std::string dominant;
  std::vector<std::string> ops;
  std::vector<double> weights;

  bool operator==(const GraphHiddenEdge&) const = default;
};

struct GraphCell {
  std::string id;
  std::string scale;
  int layer = 0;
  int channels = 0;
  int out_channels = 0;
  std::vector<GraphInput> inputs;
  std::vector<GraphHiddenEdge> edges;

  bool operator==(const GraphCell&) const = default;
};

/// Plain-data view of a fabric and its architecture, independent of the
/// parameter storage. JSON export and import are exact inverses.
struct GraphDescription {
  std::string name;
  std::string role;
  int first_layer = 0;
  int last_layer = 0;
  std::vector<std::string> ops;
  std::vector<std::string> sources;
  std::vector<GraphCell> cells;
  std::vector<std::string> outputs;

  bool operator==(const GraphDescription&) const = default;
};

GraphDescription describe(const Fabric& fabric);

std::string to_json(const GraphDescription& graph);
GraphDescription description_from_json(std::string_view text);
std::string to_dot(const GraphDescription& graph);

std::string export_graph(const Fabric& fabric, GraphFormat format);
/// Throws UsageError for anything other than "dot" or "json".
std::string export_graph(const Fabric& fabric, std::string_view format);

/// Node id of a cell ("cell(1/8,3)") and of an external source
/// ("stem", "pyramid(1/16)").
std::string cell_id(CellCoord coord);

}  // namespace posefabric::fabric
