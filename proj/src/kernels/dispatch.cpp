#include <atomic>

#include "posefabric/core/errors.hpp"
#include "posefabric/kernels/kernels.hpp"

namespace posefabric::kernels {

#if defined(POSEFABRIC_HAVE_AVX2)
const Table& avx2_table_impl();
#endif

namespace {

bool cpu_has_avx2() {
#if defined(POSEFABRIC_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const Table* best() {
  const Table* t = avx2_table();
  return t != nullptr ? t : &scalar_table();
}

std::atomic<const Table*>& current() {
  static std::atomic<const Table*> t{best()};
  return t;
}

}  // namespace

const Table* avx2_table() {
#if defined(POSEFABRIC_HAVE_AVX2)
  static const bool ok = cpu_has_avx2();
  return ok ? &avx2_table_impl() : nullptr;
#else
  return nullptr;
#endif
}

bool supported(Backend backend) {
  return backend == Backend::scalar || avx2_table() != nullptr;
}

const Table& table(Backend backend) {
  if (backend == Backend::scalar) return scalar_table();
  const Table* t = avx2_table();
  if (t == nullptr) throw UsageError("AVX2 kernels are not available on this build/CPU");
  return *t;
}

const Table& active() { return *current().load(std::memory_order_relaxed); }

Backend active_backend() { return active().backend; }

void select(Backend backend) { current().store(&table(backend)); }

void select_best() { current().store(best()); }

std::string_view name(Backend backend) {
  return backend == Backend::scalar ? "scalar" : "avx2";
}

Backend parse_backend(std::string_view text) {
  if (text == "scalar") return Backend::scalar;
  if (text == "avx2") return Backend::avx2;
  throw UsageError("unknown kernel backend '" + std::string(text) + "' (expected scalar|avx2)");
}

}  // namespace posefabric::kernels
