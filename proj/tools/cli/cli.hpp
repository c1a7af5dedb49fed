#pragma once

#include <iosfwd>

namespace scopeformer::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kValidation = 2,
  kRuntime = 3,
};

/// Entry point shared by main() and the tests. Data goes to `out`, logs and
/// diagnostics to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace scopeformer::cli
