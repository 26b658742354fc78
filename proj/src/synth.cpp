#include "mobgp/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mobgp/errors.hpp"
#include "mobgp/rng.hpp"

namespace mobgp {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr std::int64_t kFirstMonday = 345600;  // 1970-01-05 00:00 UTC

double clamp_prob(double v) {
    return std::clamp(v, PeriodicFunction::eps, 1.0 - PeriodicFunction::eps);
}
}  // namespace

PeriodicFunction PeriodicFunction::constant(double value) {
    PeriodicFunction f;
    f.kind = Kind::Constant;
    f.mean = value;
    return f;
}

PeriodicFunction PeriodicFunction::sinusoid(double mean, double amplitude, double phase_hours) {
    PeriodicFunction f;
    f.kind = Kind::Sinusoid;
    f.mean = mean;
    f.amplitude = amplitude;
    f.phase_hours = phase_hours;
    return f;
}

PeriodicFunction PeriodicFunction::piecewise(std::vector<Segment> schedule) {
    PeriodicFunction f;
    f.kind = Kind::Schedule;
    f.schedule = std::move(schedule);
    return f;
}

double PeriodicFunction::eval(double week_phase) const {
    const double hours = week_phase * TimeBinScheme::hours_per_week;
    switch (kind) {
        case Kind::Constant:
            return mean;
        case Kind::Sinusoid:
            return clamp_prob(mean + amplitude * std::sin(2.0 * kPi * (hours - phase_hours) /
                                                          TimeBinScheme::hours_per_week));
        case Kind::Schedule: {
            double value = schedule.front().value;
            for (const Segment& s : schedule) {
                if (s.start_hours <= hours) value = s.value;
            }
            return clamp_prob(value);
        }
    }
    return mean;  // unreachable
}

void validate(const PeriodicFunction& f) {
    using Kind = PeriodicFunction::Kind;
    if (f.kind == Kind::Constant) {
        if (!(f.mean >= 0.0 && f.mean <= 1.0)) {
            throw InvalidTransitionMatrix("constant transition probability outside [0, 1]");
        }
        return;
    }
    if (f.kind == Kind::Sinusoid) {
        if (!std::isfinite(f.mean) || !std::isfinite(f.amplitude) || !std::isfinite(f.phase_hours)) {
            throw InvalidTransitionMatrix("sinusoid parameters must be finite");
        }
        return;
    }
    if (f.schedule.empty()) throw EmptyInput("schedule has no segments");
    if (f.schedule.front().start_hours != 0.0) {
        throw InvalidTransitionMatrix("first schedule segment must start at hour 0");
    }
    for (std::size_t i = 0; i < f.schedule.size(); ++i) {
        const auto& s = f.schedule[i];
        if (!(s.start_hours >= 0.0 && s.start_hours < TimeBinScheme::hours_per_week)) {
            throw InvalidTransitionMatrix("schedule segment start outside [0, 168)");
        }
        if (i > 0 && !(s.start_hours > f.schedule[i - 1].start_hours)) {
            throw InvalidTransitionMatrix("schedule segment starts must be ascending");
        }
        if (!std::isfinite(s.value)) throw InvalidTransitionMatrix("schedule value must be finite");
    }
}

void validate(const TransitionFunctionSpec& spec) {
    validate(spec.a_pm);
    validate(spec.a_mp);
}

void validate(const SimulationConfig& cfg) {
    if (cfg.weeks < 1) throw InvalidCount("weeks must be >= 1");
    if (cfg.steps_per_hour < 1) throw InvalidCount("steps_per_hour must be >= 1");
    if (3600 % cfg.steps_per_hour != 0) {
        throw InvalidCount("steps_per_hour must divide 3600 so step timestamps are integral");
    }
}

Eigen::Matrix2d eval_truth(const TransitionFunctionSpec& spec, double week_phase) {
    const double a_pm = spec.a_pm.eval(week_phase);
    const double a_mp = spec.a_mp.eval(week_phase);
    Eigen::Matrix2d m;
    m << 1.0 - a_pm, a_pm, a_mp, 1.0 - a_mp;
    return m;
}

StateSequence simulate_chain(const TransitionFunctionSpec& spec, const SimulationConfig& cfg,
                             std::uint64_t stream) {
    validate(spec);
    validate(cfg);
    Rng rng(cfg.seed, stream);
    const std::int64_t dt = 3600 / cfg.steps_per_hour;
    const std::int64_t n_steps = static_cast<std::int64_t>(cfg.weeks) *
                                 TimeBinScheme::hours_per_week * cfg.steps_per_hour;

    StateSequence seq;
    seq.person_id = "synth-" + std::to_string(cfg.seed) + "-" + std::to_string(stream);
    seq.entries.reserve(static_cast<std::size_t>(n_steps) + 1);
    MobilityState state = cfg.initial_state;
    seq.entries.push_back({kFirstMonday, state});
    for (std::int64_t k = 1; k <= n_steps; ++k) {
        const std::int64_t t = kFirstMonday + k * dt;
        const double phase = static_cast<double>(TimeBinScheme::week_phase_seconds(t)) /
                             static_cast<double>(TimeBinScheme::seconds_per_week);
        const double u = rng.uniform();
        if (state == MobilityState::Pause) {
            state = u < spec.a_pm.eval(phase) ? MobilityState::Move : MobilityState::Pause;
        } else {
            state = u < spec.a_mp.eval(phase) ? MobilityState::Pause : MobilityState::Move;
        }
        seq.entries.push_back({t, state});
    }
    return seq;
}

namespace {

nlohmann::json function_to_json(const PeriodicFunction& f) {
    using Kind = PeriodicFunction::Kind;
    nlohmann::json j;
    switch (f.kind) {
        case Kind::Constant:
            j["kind"] = "constant";
            j["mean"] = f.mean;
            break;
        case Kind::Sinusoid:
            j["kind"] = "sinusoid";
            j["mean"] = f.mean;
            j["amplitude"] = f.amplitude;
            j["phase_hours"] = f.phase_hours;
            break;
        case Kind::Schedule: {
            j["kind"] = "schedule";
            auto arr = nlohmann::json::array();
            for (const auto& s : f.schedule) {
                arr.push_back({{"start_hours", s.start_hours}, {"value", s.value}});
            }
            j["schedule"] = std::move(arr);
            break;
        }
    }
    return j;
}

PeriodicFunction function_from_json(const nlohmann::json& j) {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "constant") {
        return PeriodicFunction::constant(j.at("mean").get<double>());
    }
    if (kind == "sinusoid") {
        return PeriodicFunction::sinusoid(j.at("mean").get<double>(),
                                          j.at("amplitude").get<double>(),
                                          j.value("phase_hours", 0.0));
    }
    if (kind == "schedule") {
        std::vector<PeriodicFunction::Segment> segs;
        for (const auto& s : j.at("schedule")) {
            segs.push_back({s.at("start_hours").get<double>(), s.at("value").get<double>()});
        }
        return PeriodicFunction::piecewise(std::move(segs));
    }
    throw ParseError("unknown transition function kind '" + kind + "'");
}

}  // namespace

std::string to_json(const TransitionFunctionSpec& spec) {
    nlohmann::json j;
    j["a_pm"] = function_to_json(spec.a_pm);
    j["a_mp"] = function_to_json(spec.a_mp);
    return j.dump(2) + "\n";
}

TransitionFunctionSpec spec_from_json(const std::string& text) {
    try {
        const auto j = nlohmann::json::parse(text);
        TransitionFunctionSpec spec{function_from_json(j.at("a_pm")),
                                    function_from_json(j.at("a_mp"))};
        validate(spec);
        return spec;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("bad transition spec JSON: ") + e.what());
    }
}

void save_spec(const std::filesystem::path& path, const TransitionFunctionSpec& spec) {
    std::ofstream os(path);
    if (!os) throw ParseError("cannot open " + path.string() + " for writing");
    os << to_json(spec);
}

TransitionFunctionSpec load_spec(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ParseError("cannot open " + path.string());
    std::ostringstream buf;
    buf << is.rdbuf();
    return spec_from_json(buf.str());
}

TransitionFunctionSpec default_weekly_spec() {
    TransitionFunctionSpec spec;
    // a_mp mirrors a_pm (same phase, opposite sign) so the pm/mp tasks are strongly
    // anti-correlated across the week.
    spec.a_pm = PeriodicFunction::sinusoid(0.35, 0.25, 6.0);
    spec.a_mp = PeriodicFunction::sinusoid(0.45, -0.2, 6.0);
    return spec;
}

}  // namespace mobgp
