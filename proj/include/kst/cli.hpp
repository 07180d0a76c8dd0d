#pragma once

#include <string>
#include <vector>

namespace kst {

// Full command-line surface: train, eval, sweep, gradcheck, synth,
// inspect-attn, fmt-dump. Returns 0 on success, 1 on domain errors (with a
// one-line machine-parsable message on stderr), 2 on usage errors.
int run_cli(const std::vector<std::string>& args);

} // namespace kst
