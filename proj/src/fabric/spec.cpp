#include "posefabric/fabric/spec.hpp"

#include <algorithm>
#include <charconv>

#include "posefabric/core/errors.hpp"

namespace posefabric::fabric {

namespace {
constexpr std::pair<OpKind, std::string_view> kOpNames[] = {
    {OpKind::zero, "zero"},
    {OpKind::skip, "skip"},
    {OpKind::sep_conv3x3, "sep_conv_3x3"},
    {OpKind::dil_conv3x3, "dil_conv_3x3"},
    {OpKind::avg_pool3x3, "avg_pool_3x3"},
    {OpKind::max_pool3x3, "max_pool_3x3"},
};

int parse_int(std::string_view s) {
  int v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size())
    throw UsageError("expected an integer, got '" + std::string(s) + "'");
  return v;
}
}  // namespace

std::string_view op_name(OpKind kind) {
  for (const auto& [k, n] : kOpNames)
    if (k == kind) return n;
  return "?";
}

OpKind parse_op(std::string_view name) {
  for (const auto& [k, n] : kOpNames)
    if (n == name) return k;
  throw UsageError("unknown candidate operation '" + std::string(name) + "'");
}

std::vector<OpKind> all_ops() {
  return {OpKind::zero,        OpKind::skip,        OpKind::sep_conv3x3,
          OpKind::dil_conv3x3, OpKind::avg_pool3x3, OpKind::max_pool3x3};
}

std::vector<OpKind> head_ops() {
  return {OpKind::zero, OpKind::skip, OpKind::sep_conv3x3, OpKind::dil_conv3x3};
}

bool FabricSpec::has_pooling() const {
  return std::any_of(ops.begin(), ops.end(), [](OpKind k) {
    return k == OpKind::avg_pool3x3 || k == OpKind::max_pool3x3;
  });
}

void FabricSpec::validate() const {
  if (layers < 1) throw ConfigError("fabric needs at least one layer");
  if (num_scales < 1 || num_scales > 8) throw ConfigError("fabric scale count must be in [1, 8]");
  if (hidden < 1) throw ConfigError("cells need at least one hidden node");
  if (channel_factor < 1) throw ConfigError("channel factor must be >= 1");
  if (ops.empty()) throw ConfigError("candidate operation set is empty");
  for (std::size_t i = 0; i < ops.size(); ++i)
    for (std::size_t j = i + 1; j < ops.size(); ++j)
      if (ops[i] == ops[j]) throw ConfigError("duplicate candidate operation " + std::string(op_name(ops[i])));
}

int edge_index(int from, int to) { return (to - 1) * to / 2 + from; }

std::pair<int, int> edge_endpoints(int index) {
  int to = 1;
  while (edge_index(0, to + 1) <= index) ++to;
  return {index - edge_index(0, to), to};
}

std::string scale_label(int scale) { return "1/" + std::to_string(4 << scale); }

int parse_scale_label(std::string_view label) {
  if (label.substr(0, 2) != "1/") throw UsageError("bad scale label '" + std::string(label) + "'");
  const int denom = parse_int(label.substr(2));
  for (int s = 0; s < 16; ++s)
    if ((4 << s) == denom) return s;
  throw UsageError("scale must be 1/(4*2^k), got '" + std::string(label) + "'");
}

std::string CellCoord::str() const {
  return "(" + scale_label(scale) + "," + std::to_string(layer) + ")";
}

CellCoord parse_coord(std::string_view text) {
  if (text.size() < 5 || text.front() != '(' || text.back() != ')')
    throw UsageError("bad cell coordinate '" + std::string(text) + "'");
  const auto inner = text.substr(1, text.size() - 2);
  const auto comma = inner.find(',');
  if (comma == std::string_view::npos) throw UsageError("bad cell coordinate '" + std::string(text) + "'");
  return CellCoord{parse_scale_label(inner.substr(0, comma)), parse_int(inner.substr(comma + 1))};
}

}  // namespace posefabric::fabric
