#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace sanet {

enum class GradcheckScope { layer, sam, network, all };

/// Throws std::invalid_argument for unknown names.
GradcheckScope parse_gradcheck_scope(std::string_view name);

struct GradcheckOptions {
    std::size_t trials = 1;
    std::uint64_t seed = 0;
    /// Valid probes required per op and trial.
    std::size_t probes = 50;
    double eps = 1e-5;
    /// Corrupts every analytic gradient; the report must then fail.
    bool inject_fault = false;
};

struct GradcheckEntry {
    std::string op;
    double max_rel_error = 0.0;
    double tolerance = 0.0;
    std::size_t probes = 0;   ///< compared coordinates
    std::size_t skipped = 0;  ///< probes whose +/-eps evaluations crossed a kink
    bool pass = false;
};

struct GradcheckReport {
    std::vector<GradcheckEntry> entries;

    bool all_passed() const;
    /// One line per op followed by a summary line.
    std::string format() const;
};

/// |a - n| / max(|a|, |n|, 1).
double relative_error(double analytic, double numeric);

/// Compares analytic gradients against central differences for every op in
/// the scope. Probes whose two evaluations take different branches (ReLU
/// masks, clamp masks, bilinear cells) are skipped and counted.
GradcheckReport run_gradcheck(GradcheckScope scope, const GradcheckOptions& options);

}  // namespace sanet
