#pragma once

#include <filesystem>
#include <iosfwd>

namespace geoadapt::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitRuntime = 3;
inline constexpr int kExitIo = 4;

/// Environment variable naming the default output directory.
inline constexpr const char* kOutDirEnv = "GEOADAPT_OUT_DIR";

/// Value of GEOADAPT_OUT_DIR, or "geoadapt-out" when unset or empty.
std::filesystem::path default_out_dir();

/// Entry point shared by the executable and the tests. Returns the exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace geoadapt::cli
