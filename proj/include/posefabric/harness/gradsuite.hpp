#pragma once

#include <cstdint>

#include "posefabric/core/gradcheck.hpp"

namespace posefabric::harness {

/// Central-difference checks for every differentiable op, one entry per op
/// (the max over its inputs).
GradCheckReport op_gradcheck_suite(std::uint64_t seed = 7, const GradCheckOptions& options = {});

/// End-to-end dL/dw, dL/dalpha, dL/dbeta on a tiny backbone (C = 2, 8x8
/// input), one entry per parameter kind. The default three layers over two
/// scales give five cells; two layers over one scale give two cells, where
/// every input slot reads the same tensor and dL/dbeta is identically zero.
GradCheckReport tiny_fabric_gradcheck(std::uint64_t seed = 7, const GradCheckOptions& options = {}, int layers = 3,
                                      int scales = 2);

}  // namespace posefabric::harness
