#pragma once

#include <filesystem>
#include <string>

namespace fscil {

/// Command-line entry point, callable in-process so exit codes are testable.
/// Commands: train, search, report, inspect. Exit codes: 0 success,
/// 2 configuration error, 3 data error, 4 runtime failure.
/// When FSCIL_OUTPUT_ROOT is set, relative output paths land under it.
int cli_main(int argc, const char* const* argv);

/// Relative paths land under FSCIL_OUTPUT_ROOT when it is set; absolute
/// paths pass through.
std::filesystem::path resolve_output_path(const std::string& p);

}  // namespace fscil
