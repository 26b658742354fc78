#include "mobgp/markov.hpp"

#include <cmath>
#include <limits>

#include "mobgp/errors.hpp"

namespace mobgp {

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
// 1970-01-01 was a Thursday; Monday 00:00 is 72h earlier in week phase.
constexpr std::int64_t kEpochMondayOffset = 3 * 86400;
}  // namespace

std::optional<MobilityState> state_from_char(char c) {
    if (c == 'P' || c == 'p') return MobilityState::Pause;
    if (c == 'M' || c == 'm') return MobilityState::Move;
    return std::nullopt;
}

void validate(const StateSequence& seq) {
    if (seq.entries.empty()) throw EmptyInput("state sequence is empty");
    for (std::size_t i = 1; i < seq.entries.size(); ++i) {
        if (seq.entries[i].timestamp <= seq.entries[i - 1].timestamp) {
            throw InvalidSequence("timestamps must be strictly increasing (person " + seq.person_id +
                                  ", index " + std::to_string(i) + ")");
        }
    }
}

std::int64_t TimeBinScheme::week_phase_seconds(std::int64_t timestamp) {
    std::int64_t p = (timestamp + kEpochMondayOffset) % seconds_per_week;
    if (p < 0) p += seconds_per_week;
    return p;
}

double TimeBinScheme::week_phase_hours(std::int64_t timestamp) {
    return static_cast<double>(week_phase_seconds(timestamp)) / 3600.0;
}

int TimeBinScheme::bin_of_timestamp(std::int64_t timestamp) const {
    // integer arithmetic keeps bin-edge assignment exact
    const std::int64_t phase = week_phase_seconds(timestamp);
    return static_cast<int>(phase * bins_per_hour / 3600);
}

TimeBinScheme make_scheme(int bins_per_hour) {
    if (bins_per_hour != 1 && bins_per_hour != 2 && bins_per_hour != 4) {
        throw InvalidCount("bins_per_hour must be 1, 2 or 4 (got " + std::to_string(bins_per_hour) + ")");
    }
    return TimeBinScheme{bins_per_hour};
}

TransitionCounts::TransitionCounts(TimeBinScheme s)
    : scheme(s),
      n_pp(static_cast<std::size_t>(s.total_bins()), 0),
      n_pm(static_cast<std::size_t>(s.total_bins()), 0),
      n_mp(static_cast<std::size_t>(s.total_bins()), 0),
      n_mm(static_cast<std::size_t>(s.total_bins()), 0) {}

std::int64_t TransitionCounts::total() const {
    std::int64_t t = 0;
    for (int b = 0; b < scheme.total_bins(); ++b) t += n_pp[b] + n_pm[b] + n_mp[b] + n_mm[b];
    return t;
}

void TransitionCounts::merge(const TransitionCounts& other) {
    if (other.scheme.bins_per_hour != scheme.bins_per_hour) {
        throw DimensionError("cannot merge counts with different bin schemes");
    }
    for (int b = 0; b < scheme.total_bins(); ++b) {
        n_pp[b] += other.n_pp[b];
        n_pm[b] += other.n_pm[b];
        n_mp[b] += other.n_mp[b];
        n_mm[b] += other.n_mm[b];
    }
}

TransitionCounts bin_observations(const StateSequence& seq, TimeBinScheme scheme) {
    validate(seq);
    TransitionCounts counts(scheme);
    const std::int64_t max_gap = 3600 / scheme.bins_per_hour;
    for (std::size_t i = 1; i < seq.entries.size(); ++i) {
        const auto& prev = seq.entries[i - 1];
        const auto& cur = seq.entries[i];
        if (cur.timestamp - prev.timestamp > max_gap) continue;  // gap: not a one-step transition
        const int bin = scheme.bin_of_timestamp(cur.timestamp);
        if (prev.state == MobilityState::Pause) {
            (cur.state == MobilityState::Pause ? counts.n_pp : counts.n_pm)[bin] += 1;
        } else {
            (cur.state == MobilityState::Pause ? counts.n_mp : counts.n_mm)[bin] += 1;
        }
    }
    return counts;
}

TransitionDataset estimate_empirical(const TransitionCounts& counts) {
    TransitionDataset ds;
    ds.scheme = counts.scheme;
    ds.rows.resize(static_cast<std::size_t>(counts.scheme.total_bins()));
    for (int b = 0; b < counts.scheme.total_bins(); ++b) {
        TransitionRow& row = ds.rows[b];
        row = TransitionRow{kNaN, kNaN, kNaN, kNaN, counts.pause_origin(b), counts.move_origin(b), true, true};
        if (row.n_pause > 0) {
            row.a_pm = static_cast<double>(counts.n_pm[b]) / static_cast<double>(row.n_pause);
            row.a_pp = 1.0 - row.a_pm;
            row.missing_pause = false;
        }
        if (row.n_move > 0) {
            row.a_mp = static_cast<double>(counts.n_mp[b]) / static_cast<double>(row.n_move);
            row.a_mm = 1.0 - row.a_mp;
            row.missing_move = false;
        }
    }
    return ds;
}

int TransitionDataset::missing_pause_count() const {
    int n = 0;
    for (const auto& r : rows) n += r.missing_pause ? 1 : 0;
    return n;
}

int TransitionDataset::missing_move_count() const {
    int n = 0;
    for (const auto& r : rows) n += r.missing_move ? 1 : 0;
    return n;
}

std::vector<StateDistribution> propagate(const StateDistribution& p0,
                                         const std::vector<Eigen::Matrix2d>& transitions) {
    constexpr double tol = 1e-9;
    std::vector<StateDistribution> out;
    out.reserve(transitions.size() + 1);
    out.push_back(p0);
    Eigen::Vector2d p(p0.p_pause, p0.p_move);
    for (std::size_t t = 0; t < transitions.size(); ++t) {
        const Eigen::Matrix2d& m = transitions[t];
        for (int r = 0; r < 2; ++r) {
            const double row_sum = m(r, 0) + m(r, 1);
            if (std::abs(row_sum - 1.0) > tol || m(r, 0) < -tol || m(r, 1) < -tol) {
                throw InvalidTransitionMatrix("matrix at step " + std::to_string(t) +
                                              " is not row-stochastic");
            }
        }
        p = m.transpose() * p;
        out.push_back(StateDistribution{p(0), p(1)});
    }
    return out;
}

ConstraintReport validate_stochasticity(const TransitionDataset& ds, double tol) {
    ConstraintReport rep;
    rep.tolerance = tol;
    double min_value = kNaN;
    auto update = [&](ViolationStats& stats, double violation) {
        stats.evaluated += 1;
        stats.mean += violation;
        if (violation > stats.max) stats.max = violation;
        if (violation > tol) stats.count += 1;
    };
    auto track_min = [&](double v) {
        if (std::isnan(min_value) || v < min_value) min_value = v;
    };
    for (const auto& r : ds.rows) {
        if (!r.missing_pause) {
            update(rep.pause_row, std::abs(r.a_pp + r.a_pm - 1.0));
            rep.nonneg.evaluated += 2;
            track_min(std::min(r.a_pp, r.a_pm));
            for (double v : {r.a_pp, r.a_pm}) {
                const double neg = v < 0.0 ? -v : 0.0;
                rep.nonneg.mean += neg;
                if (neg > rep.nonneg.max) rep.nonneg.max = neg;
                if (neg > tol) rep.nonneg.count += 1;
            }
        }
        if (!r.missing_move) {
            update(rep.move_row, std::abs(r.a_mp + r.a_mm - 1.0));
            rep.nonneg.evaluated += 2;
            track_min(std::min(r.a_mp, r.a_mm));
            for (double v : {r.a_mp, r.a_mm}) {
                const double neg = v < 0.0 ? -v : 0.0;
                rep.nonneg.mean += neg;
                if (neg > rep.nonneg.max) rep.nonneg.max = neg;
                if (neg > tol) rep.nonneg.count += 1;
            }
        }
    }
    if (rep.pause_row.evaluated > 0) rep.pause_row.mean /= static_cast<double>(rep.pause_row.evaluated);
    if (rep.move_row.evaluated > 0) rep.move_row.mean /= static_cast<double>(rep.move_row.evaluated);
    if (rep.nonneg.evaluated > 0) rep.nonneg.mean /= static_cast<double>(rep.nonneg.evaluated);
    rep.min_value = min_value;
    return rep;
}

}  // namespace mobgp
