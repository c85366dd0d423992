// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace reenact::cli {

enum ExitCode : int { kSuccess = 0, kValidation = 1, kRuntime = 2 };

/// Parses and runs one command. Messages go to `out` / `err`; never throws.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Result of the volume-render self test.
struct RenderTestResult {
    double max_render_error = 0.0;
    double max_budget_error = 0.0;
    int instances = 0;
    bool passed = false;
};

/// Compares volume_render against a per-sample loop on random small instances.
RenderTestResult render_self_test(unsigned long long seed, int instances = 100);

} // namespace reenact::cli
