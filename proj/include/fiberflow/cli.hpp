#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "fiberflow/core.hpp"

namespace fiberflow::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitViolated = 2;

/// Bad command line or configuration. The message starts with the key.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// A validated command line: the subcommand and the canonical text of every
/// key it accepts (defaults filled in, numbers normalized, seed resolved).
struct RunConfig {
  /// "semigroup", ..., "validate appendix-c".
  std::string command;
  std::map<std::string, std::string> values;

  /// Command line that parses back to this configuration.
  [[nodiscard]] std::vector<std::string> toArgs() const;
  /// key = "value" lines, readable with --config.
  [[nodiscard]] std::string toConfigText() const;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

/// Parses arguments (without the program name): command-line flags override
/// keys from --config, which override FIBERFLOW_SEED and the defaults.
RunConfig parseRunConfig(const std::vector<std::string>& args);

/// Runs one command. The JSON (or CSV) document goes to `out` unless --out
/// names a file; diagnostics go to `err`. Returns kExitOk, kExitUsage or
/// kExitViolated.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace fiberflow::cli
