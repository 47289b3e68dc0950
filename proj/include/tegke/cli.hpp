#pragma once

// Command-line pipelines: build-vocab, build-graph, train, generate,
// evaluate, dump-attention.
//
// Exit codes: 0 success, 1 invalid input or usage, 2 runtime failure.

#include <string>
#include <vector>

namespace tegke::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

// args[0] is the program name.
int run(const std::vector<std::string>& args);
int run(int argc, char** argv);

}  // namespace tegke::cli
