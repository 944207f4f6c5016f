#include "posefabric/core/flops.hpp"

namespace posefabric::flops {

namespace {
thread_local std::uint64_t g_count = 0;
}

void reset() { g_count = 0; }
std::uint64_t read() { return g_count; }
void add(std::uint64_t count) { g_count += count; }

Scope::~Scope() { g_count = saved_ + g_count; }

}  // namespace posefabric::flops
