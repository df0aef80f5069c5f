#pragma once

#include <iosfwd>

namespace cafe {

// Entry point behind the `cafe` binary. Subcommands: train, eval, predict,
// gradcheck, fmcheck, export-features, render-heatmap, synth-data.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace cafe
