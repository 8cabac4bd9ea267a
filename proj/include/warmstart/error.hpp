#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace warmstart {

// Error families. Each family maps to a distinct process exit code in the CLI.
enum class ErrorCode {
  dimension,     // operand shapes disagree
  non_finite,    // NaN or Inf produced by an op
  degenerate,    // empty batch, empty unmasked set, empty dataset or corpus
  divergence,    // optimizer saw a non-finite gradient or loss
  format,        // malformed file (vocab, archive, TSV)
  id,            // token id out of range
  length,        // sequence longer than the positional table
  shape,         // memory / mask extents disagree
  incompatible,  // archive tensor does not fit the model
  selection,     // layer or embedding selection failed
  rule,          // mapping rule cannot be applied
  scheme,        // scheme and archive family disagree
  config,        // bad configuration value or syntax
  io,            // filesystem failure
};

std::string_view to_string(ErrorCode code) noexcept;

// Process exit code used by the command-line tool for each family.
int exit_code(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace warmstart
