#pragma once

// Headless command line: linkmodel, campaign, design, iterate, robustness,
// rpl-compare, macsim, plot and serve.

#include <iosfwd>
#include <string>
#include <vector>

namespace relaynet::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInvalid = 1;
inline constexpr int kExitInfeasible = 2;

/// Runs one command. Artifacts go to --out (overridden by RELAYNET_OUT);
/// human-readable summaries go to `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int run(int argc, char** argv);

}  // namespace relaynet::cli
