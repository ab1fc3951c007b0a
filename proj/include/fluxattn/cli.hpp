#pragma once

#include <string>
#include <vector>

namespace fluxattn::cli {

/// Entry point shared by the fluxattn binary and the in-process tests.
/// Returns the process exit code.
int run(const std::vector<std::string>& args);
int run(int argc, const char* const* argv);

} // namespace fluxattn::cli
