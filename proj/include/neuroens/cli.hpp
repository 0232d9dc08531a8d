#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace neuroens {

/// Runs one subcommand (synth, preprocess, split-tissues, train, evaluate,
/// occlude, report). Returns 0 on success; errors go to `err` with a nonzero code.
int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int cli_dispatch(int argc, const char* const* argv);

}  // namespace neuroens
