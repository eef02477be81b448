#pragma once

#include <ostream>

namespace landcover {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitRuntime = 2;

// Environment variable that replaces data.run_root.
inline constexpr const char* kRunRootEnv = "LANDCOVER_RUN_ROOT";

// Entry point for the landcover command line. Subcommands: gen-data, train,
// export-pseudo, predict, ensemble, eval, ablate.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace landcover
