#pragma once

#include <stdexcept>

namespace tactiforce {

// Precondition or geometry violation on a public operation.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class DegenerateFitError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed file or wire content.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace tactiforce
