#pragma once

#include <cstdint>
#include <limits>

namespace mobgp {

/// Violation statistics for one constraint family.
struct ViolationStats {
    double max = 0.0;
    double mean = 0.0;
    std::int64_t count = 0;      ///< points violating beyond the report tolerance
    std::int64_t evaluated = 0;  ///< points the family was evaluated at
};

/// Stochasticity and non-negativity violation summary, either for an empirical
/// transition dataset or for posterior means at a set of constraint points.
struct ConstraintReport {
    ViolationStats pause_row;  ///< |a_pp + a_pm - 1|
    ViolationStats move_row;   ///< |a_mp + a_mm - 1|
    ViolationStats nonneg;     ///< max(0, margin - value)
    double min_value = std::numeric_limits<double>::quiet_NaN();  ///< smallest probability seen
    double tolerance = 0.0;
    double wall_time_ms = 0.0;

    double worst_stochasticity() const { return pause_row.max > move_row.max ? pause_row.max : move_row.max; }
    double mean_stochasticity() const {
        const std::int64_t n = pause_row.evaluated + move_row.evaluated;
        if (n == 0) return 0.0;
        return (pause_row.mean * static_cast<double>(pause_row.evaluated) +
                move_row.mean * static_cast<double>(move_row.evaluated)) /
               static_cast<double>(n);
    }
};

}  // namespace mobgp
