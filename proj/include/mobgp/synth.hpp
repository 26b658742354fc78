#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mobgp/markov.hpp"

namespace mobgp {

/// One scalar transition probability as a periodic function of week phase.
struct PeriodicFunction {
    enum class Kind { Constant, Sinusoid, Schedule };

    Kind kind = Kind::Constant;
    double mean = 0.5;         ///< constant value, or sinusoid midline
    double amplitude = 0.0;    ///< sinusoid only
    double phase_hours = 0.0;  ///< sinusoid only: hour offset of the zero crossing

    /// Piecewise-constant segments (start_hours, value); starts ascending, first at 0,
    /// last segment wraps to hour 168.
    struct Segment {
        double start_hours;
        double value;
    };
    std::vector<Segment> schedule;

    /// Evaluates at week_phase in [0, 1). Sinusoid and schedule outputs are clamped into
    /// [eps, 1-eps]; constants are used verbatim so degenerate chains stay constructible.
    double eval(double week_phase) const;

    static constexpr double eps = 1e-3;

    static PeriodicFunction constant(double value);
    static PeriodicFunction sinusoid(double mean, double amplitude, double phase_hours);
    static PeriodicFunction piecewise(std::vector<Segment> schedule);
};

/// Ground-truth time-varying transition functions: a_pm(t) and a_mp(t); the diagonal
/// entries are their complements.
struct TransitionFunctionSpec {
    PeriodicFunction a_pm;
    PeriodicFunction a_mp;
};

void validate(const PeriodicFunction& f);
void validate(const TransitionFunctionSpec& spec);

struct SimulationConfig {
    int weeks = 1;
    int steps_per_hour = 1;  ///< must divide 3600 so step timestamps stay integral
    std::uint64_t seed = 0;
    MobilityState initial_state = MobilityState::Pause;
};

void validate(const SimulationConfig& cfg);

/// Row-stochastic transition matrix at a week phase in [0, 1).
/// Rows: pause origin [a_pp, a_pm]; move origin [a_mp, a_mm].
Eigen::Matrix2d eval_truth(const TransitionFunctionSpec& spec, double week_phase);

/// Samples the chain forward. The sequence has weeks*168*steps_per_hour + 1 entries,
/// starts at the epoch's first Monday 00:00 UTC, and steps by 3600/steps_per_hour
/// seconds; each step is drawn from the origin-state row of eval_truth at the
/// destination timestamp's phase. Identical (cfg, stream) give identical sequences.
StateSequence simulate_chain(const TransitionFunctionSpec& spec, const SimulationConfig& cfg,
                             std::uint64_t stream = 0);

/// JSON document {"a_pm": {...}, "a_mp": {...}}; each function carries "kind" plus the
/// fields its kind uses ("mean", "amplitude", "phase_hours", "schedule").
std::string to_json(const TransitionFunctionSpec& spec);
TransitionFunctionSpec spec_from_json(const std::string& text);

void save_spec(const std::filesystem::path& path, const TransitionFunctionSpec& spec);
TransitionFunctionSpec load_spec(const std::filesystem::path& path);

/// Smooth weekly pattern used by the CLI when no spec file is given: more movement by
/// day, more pausing by night, with the two off-diagonal functions strongly correlated.
TransitionFunctionSpec default_weekly_spec();

}  // namespace mobgp
