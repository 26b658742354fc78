#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mobgp/report.hpp"

namespace mobgp {

/// Two-state mobility process. The numeric order (Pause=0, Move=1) is fixed and used for
/// indexing everywhere.
enum class MobilityState : int { Pause = 0, Move = 1 };

inline char state_char(MobilityState s) { return s == MobilityState::Pause ? 'P' : 'M'; }
std::optional<MobilityState> state_from_char(char c);

struct StateObservation {
    std::int64_t timestamp;  ///< UTC seconds since epoch
    MobilityState state;
};

/// Timestamped state observations for one individual. Timestamps strictly increasing.
struct StateSequence {
    std::string person_id;
    std::vector<StateObservation> entries;
};

/// Throws EmptyInput / InvalidSequence if the invariants do not hold.
void validate(const StateSequence& seq);

/// Weekly cyclic binning scheme. The week is anchored at Monday 00:00 UTC.
struct TimeBinScheme {
    int bins_per_hour = 1;  ///< one of {1, 2, 4}

    static constexpr int hours_per_week = 168;
    static constexpr std::int64_t seconds_per_week = 604800;

    int total_bins() const { return hours_per_week * bins_per_hour; }
    double bin_width_hours() const { return 1.0 / bins_per_hour; }

    /// Seconds since the most recent Monday 00:00 UTC, in [0, 604800).
    static std::int64_t week_phase_seconds(std::int64_t timestamp);
    static double week_phase_hours(std::int64_t timestamp);

    int bin_of_timestamp(std::int64_t timestamp) const;
    double bin_start_hours(int bin) const { return static_cast<double>(bin) / bins_per_hour; }
    double bin_center_hours(int bin) const { return (static_cast<double>(bin) + 0.5) / bins_per_hour; }
};

/// Validates bins_per_hour in {1, 2, 4}.
TimeBinScheme make_scheme(int bins_per_hour);

/// Per-bin transition pair counts.
struct TransitionCounts {
    TimeBinScheme scheme;
    std::vector<std::int64_t> n_pp, n_pm, n_mp, n_mm;

    explicit TransitionCounts(TimeBinScheme s);
    std::int64_t total() const;
    std::int64_t pause_origin(int bin) const { return n_pp[bin] + n_pm[bin]; }
    std::int64_t move_origin(int bin) const { return n_mp[bin] + n_mm[bin]; }
    /// Elementwise addition; schemes must match.
    void merge(const TransitionCounts& other);
};

/// One row of the empirical transition dataset. Probabilities are NaN when the
/// corresponding origin is missing.
struct TransitionRow {
    double a_pp, a_pm, a_mm, a_mp;  // stored in this column order
    std::int64_t n_pause = 0, n_move = 0;
    bool missing_pause = true, missing_move = true;
};

/// Empirical transition probabilities per weekly bin.
struct TransitionDataset {
    TimeBinScheme scheme;
    std::vector<TransitionRow> rows;

    int missing_pause_count() const;
    int missing_move_count() const;
};

struct StateDistribution {
    double p_pause = 1.0;
    double p_move = 0.0;
};

/// Counts consecutive observation pairs into weekly bins. A pair is attributed to the bin
/// containing its destination timestamp; pairs further apart than one bin width are skipped.
TransitionCounts bin_observations(const StateSequence& seq, TimeBinScheme scheme);

/// Converts counts into per-bin transition probabilities. Origins with zero observations are
/// flagged missing rather than imputed.
TransitionDataset estimate_empirical(const TransitionCounts& counts);

/// Applies the chain recursion P(t) = a(t)^T P(t-1) for row-stochastic matrices
/// a (rows: pause origin [a_pp, a_pm], move origin [a_mp, a_mm]).
/// Output has size transitions.size() + 1 and starts with p0.
std::vector<StateDistribution> propagate(const StateDistribution& p0,
                                         const std::vector<Eigen::Matrix2d>& transitions);

/// Row-sum violation statistics over the non-missing bins of a dataset.
ConstraintReport validate_stochasticity(const TransitionDataset& ds, double tol);

}  // namespace mobgp
