#pragma once

#include <cstdint>

// Thread-local multiply-add tally incremented by the ops as they execute.
// Only forward work is counted. Used as the execution-side oracle for the
// structural FLOPs counter.
namespace posefabric::flops {

void reset();
std::uint64_t read();
void add(std::uint64_t count);

class Scope {
 public:
  Scope() : saved_(read()) { reset(); }
  ~Scope();
  Scope(const Scope&) = delete;
  Scope& operator=(const Scope&) = delete;
  std::uint64_t count() const { return read(); }

 private:
  std::uint64_t saved_;
};

}  // namespace posefabric::flops
