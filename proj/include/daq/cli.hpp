#ifndef DAQ_CLI_HPP
#define DAQ_CLI_HPP

// Subcommand dispatch for the daq tool: curves, gapcheck, gradaudit, train,
// eval, ablate. Kept out of main() so tests can invoke commands in-process.
// Exit codes encode verification results (gapcheck/gradaudit) so they can be
// used as CI gates.

#include <ostream>
#include <string>
#include <vector>

namespace daq {

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace daq

#endif // DAQ_CLI_HPP
