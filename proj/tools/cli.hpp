#ifndef TEXTLDM_TOOLS_CLI_HPP
#define TEXTLDM_TOOLS_CLI_HPP

#include <ostream>
#include <string>
#include <vector>

namespace tldm::cli {

/// Runs one textldm command. Exit codes: 0 success, 1 usage error, 2
/// data/checkpoint error. All randomness is controlled by --seed; stdout is
/// byte-identical across runs with identical flags and seed.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tldm::cli

#endif  // TEXTLDM_TOOLS_CLI_HPP
