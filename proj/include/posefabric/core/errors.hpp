#pragma once

#include <stdexcept>
#include <string>

namespace posefabric {

// Invalid shapes, channel/group mismatches, inconsistent graph topology.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Misuse of an API: unknown names, wrong call order, bad CLI input.
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Argument outside the mathematical domain of a function.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// A numerical check (gradient oracle, equivalence bound) exceeded tolerance,
// or training produced a non-finite value.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace posefabric
