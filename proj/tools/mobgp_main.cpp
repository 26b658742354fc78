// Command-line workbench: simulate synthetic mobility data, fit constrained multi-task
// models, predict, evaluate against ground truth or held-out data, and benchmark the
// structured linear algebra. Every run writes a manifest; numerical outputs (CSV/JSON)
// are byte-stable across reruns with identical flags, so wall-clock measurements live
// only in manifests, benchmark timing columns, and plot annotations.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "mobgp/constraints.hpp"
#include "mobgp/csv.hpp"
#include "mobgp/errors.hpp"
#include "mobgp/fft.hpp"
#include "mobgp/gp.hpp"
#include "mobgp/markov.hpp"
#include "mobgp/rng.hpp"
#include "mobgp/structured.hpp"
#include "mobgp/svgplot.hpp"
#include "mobgp/synth.hpp"

namespace fs = std::filesystem;
using namespace mobgp;

namespace {

constexpr const char* kVersion = "0.1.0";

/// Configuration mistakes: bad flag combinations, malformed config/spec files. Exit 2.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    for (const char c : s) {
        hash ^= static_cast<unsigned char>(c);
        hash *= 0x100000001b3ULL;
    }
    return hash;
}

std::string hex64(std::uint64_t v) {
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[i] = "0123456789abcdef"[v & 0xF];
        v >>= 4;
    }
    return out;
}

std::string iso_utc(std::chrono::system_clock::time_point tp) {
    const std::time_t t = std::chrono::system_clock::to_time_t(tp);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

int parse_int(const std::string& text, const char* what) {
    try {
        std::size_t pos = 0;
        const int v = std::stoi(text, &pos);
        if (pos != text.size()) throw std::invalid_argument(text);
        return v;
    } catch (const std::exception&) {
        throw UsageError(std::string("cannot parse ") + what + " from '" + text + "'");
    }
}

/// Collects run provenance and writes exactly one manifest.json per command.
class Manifest {
public:
    Manifest(std::string command, std::uint64_t seed)
        : command_(std::move(command)), seed_(seed), started_(std::chrono::system_clock::now()),
          t0_(std::chrono::steady_clock::now()) {}

    void config(const std::string& key, const std::string& value) { config_[key] = value; }
    void config(const std::string& key, std::int64_t value) {
        config_[key] = std::to_string(value);
    }
    void config(const std::string& key, double value) { config_[key] = format_double(value); }
    void output(const fs::path& path) { outputs_.push_back(path.filename().string()); }

    void write(const fs::path& dir) {
        nlohmann::json j;
        j["command"] = command_;
        nlohmann::json cfg(nlohmann::json::value_t::object);
        std::string canonical;
        for (const auto& [k, v] : config_) {
            cfg[k] = v;
            canonical += k + "=" + v + "\n";
        }
        j["config"] = std::move(cfg);
        j["config_digest"] = hex64(fnv1a(command_ + "\n" + canonical));
        j["seed"] = seed_;
        j["versions"] = {{"mobgp", kVersion},
                         {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." +
                                       std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                       std::to_string(EIGEN_MINOR_VERSION)},
                         {"fftw", fft_library_version()}};
        j["started_at"] = iso_utc(started_);
        j["finished_at"] = iso_utc(std::chrono::system_clock::now());
        j["wall_time_ms"] = std::chrono::duration<double, std::milli>(
                                std::chrono::steady_clock::now() - t0_)
                                .count();
        std::sort(outputs_.begin(), outputs_.end());
        j["outputs"] = outputs_;
        std::ofstream os(dir / "manifest.json");
        if (!os) throw ParseError("cannot write manifest to " + dir.string());
        os << j.dump(2) << "\n";
    }

private:
    std::string command_;
    std::map<std::string, std::string> config_;
    std::uint64_t seed_;
    std::vector<std::string> outputs_;
    std::chrono::system_clock::time_point started_;
    std::chrono::steady_clock::time_point t0_;
};

fs::path resolve_out_dir(const std::string& flag) {
    std::string dir = flag;
    if (dir.empty()) {
        if (const char* env = std::getenv("MOBGP_OUT")) dir = env;
    }
    if (dir.empty()) dir = ".";
    fs::path p(dir);
    fs::create_directories(p);
    return p;
}

SolverKind parse_solver(const std::string& name) {
    if (name == "auto") return SolverKind::Auto;
    if (name == "dense") return SolverKind::Dense;
    if (name == "structured") return SolverKind::Structured;
    throw UsageError("--solver must be auto, dense, or structured");
}

KernelFamily parse_kernel(const std::string& name) {
    if (name == "rbf") return KernelFamily::RBF;
    if (name == "matern32") return KernelFamily::Matern32;
    throw UsageError("--kernel must be rbf or matern32");
}

/// "off" -> empty, "bins" -> bin centers, "uniform:N" -> N evenly spaced hours.
Eigen::VectorXd parse_constraint_points(const std::string& text, TimeBinScheme scheme) {
    if (text == "off") return Eigen::VectorXd();
    if (text == "bins") return bin_center_constraint_points(scheme);
    if (text.rfind("uniform:", 0) == 0) {
        const int n = parse_int(text.substr(8), "constraint count");
        if (n <= 0) throw UsageError("--constraints uniform:N needs N > 0");
        return uniform_constraint_points(n);
    }
    throw UsageError("--constraints must be off, bins, or uniform:N");
}

Eigen::VectorXd parse_queries(const std::string& text, TimeBinScheme scheme) {
    if (text == "bins") return bin_center_constraint_points(scheme);
    if (text.rfind("uniform:", 0) == 0) {
        const int n = parse_int(text.substr(8), "query count");
        if (n <= 0) throw UsageError("--queries uniform:N needs N > 0");
        return uniform_constraint_points(n);
    }
    throw UsageError("--queries must be bins or uniform:N");
}

TransitionFunctionSpec load_truth_spec(const std::string& path) {
    if (path == "default") return default_weekly_spec();
    try {
        return load_spec(path);
    } catch (const Error& e) {
        throw UsageError(std::string("bad transition spec: ") + e.what());
    }
}

/// Reads either a raw sequence CSV (binned and estimated here) or an already-binned
/// dataset CSV, sniffing the header.
TransitionDataset load_transition_data(const fs::path& path, int bins_per_hour,
                                       bool bins_explicit) {
    std::ifstream is(path);
    if (!is) throw ParseError("cannot open " + path.string());
    std::string first_line;
    std::getline(is, first_line);
    is.clear();
    is.seekg(0);
    if (first_line.rfind("person_id", 0) == 0) {
        const std::vector<StateSequence> seqs = read_sequences_csv(is);
        const TimeBinScheme scheme = make_scheme(bins_per_hour);
        TransitionCounts counts(scheme);
        for (const auto& seq : seqs) counts.merge(bin_observations(seq, scheme));
        return estimate_empirical(counts);
    }
    TransitionDataset ds = read_dataset_csv(is);
    if (bins_explicit && ds.scheme.bins_per_hour != bins_per_hour) {
        throw UsageError("--bins-per-hour " + std::to_string(bins_per_hour) +
                         " conflicts with the dataset's " +
                         std::to_string(ds.scheme.bins_per_hour));
    }
    return ds;
}

Eigen::MatrixXd truth_at(const TransitionFunctionSpec& spec, const Eigen::VectorXd& queries) {
    Eigen::MatrixXd t(queries.size(), kNumTasks);
    for (Eigen::Index u = 0; u < queries.size(); ++u) {
        double phase = std::fmod(queries[u] / TimeBinScheme::hours_per_week, 1.0);
        if (phase < 0.0) phase += 1.0;
        const Eigen::Matrix2d m = eval_truth(spec, phase);
        t(u, kTaskPP) = m(0, 0);
        t(u, kTaskPM) = m(0, 1);
        t(u, kTaskMP) = m(1, 0);
        t(u, kTaskMM) = m(1, 1);
    }
    return t;
}

void write_loss_csv(const fs::path& path, const std::vector<double>& trace) {
    std::ofstream os(path);
    if (!os) throw ParseError("cannot open " + path.string() + " for writing");
    os << "iteration,loss\n";
    for (std::size_t i = 0; i < trace.size(); ++i) {
        os << i << ',' << format_double(trace[i]) << '\n';
    }
}

void write_predictions_csv(const fs::path& path, const Eigen::VectorXd& queries,
                           const PredictiveDistribution& pred, const Eigen::MatrixXd* truth,
                           const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>* truth_mask) {
    std::ofstream os(path);
    if (!os) throw ParseError("cannot open " + path.string() + " for writing");
    os << "hours";
    for (int l = 0; l < kNumTasks; ++l) os << ",mean_" << kTaskNames[l];
    for (int l = 0; l < kNumTasks; ++l) os << ",var_" << kTaskNames[l];
    if (truth != nullptr) {
        for (int l = 0; l < kNumTasks; ++l) os << ",truth_" << kTaskNames[l];
    }
    os << '\n';
    for (Eigen::Index u = 0; u < queries.size(); ++u) {
        os << format_double(queries[u]);
        for (int l = 0; l < kNumTasks; ++l) os << ',' << format_double(pred.mean(u, l));
        for (int l = 0; l < kNumTasks; ++l) os << ',' << format_double(pred.variance(u, l));
        if (truth != nullptr) {
            for (int l = 0; l < kNumTasks; ++l) {
                os << ',';
                if (truth_mask == nullptr || (*truth_mask)(u, l)) {
                    os << format_double((*truth)(u, l));
                }
            }
        }
        os << '\n';
    }
}

struct TaskErrors {
    double rmse = 0.0;
    double mae = 0.0;
    std::int64_t n = 0;
};

std::vector<TaskErrors> error_metrics(
    const Eigen::MatrixXd& mean, const Eigen::MatrixXd& truth,
    const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>* mask) {
    std::vector<TaskErrors> out(kNumTasks);
    for (int l = 0; l < kNumTasks; ++l) {
        double ss = 0.0, sa = 0.0;
        std::int64_t n = 0;
        for (Eigen::Index u = 0; u < mean.rows(); ++u) {
            if (mask != nullptr && !(*mask)(u, l)) continue;
            const double d = mean(u, l) - truth(u, l);
            ss += d * d;
            sa += std::abs(d);
            ++n;
        }
        out[l].n = n;
        if (n > 0) {
            out[l].rmse = std::sqrt(ss / static_cast<double>(n));
            out[l].mae = sa / static_cast<double>(n);
        }
    }
    return out;
}

nlohmann::json constraint_report_json(const ConstraintReport& report) {
    return nlohmann::json::parse(report_to_json(report, /*include_wall_time=*/false));
}

/// Posterior mean +/- 2 sigma per task with training data overlaid; truth optional.
void write_task_plots(const fs::path& dir, const MultiTaskGP& model,
                      const Eigen::VectorXd& queries, const PredictiveDistribution& pred,
                      const Eigen::MatrixXd* truth, Manifest& man) {
    const TrainingSet& data = model.training();
    for (int l = 0; l < kNumTasks; ++l) {
        PlotSpec spec;
        spec.title = std::string(kTaskNames[l]) + " over the week";
        spec.x_label = "week hour";
        spec.y_label = "transition probability";

        PlotSeries posterior;
        posterior.label = "posterior mean ±2σ";
        posterior.color = "#1f77b4";
        for (Eigen::Index u = 0; u < queries.size(); ++u) {
            const double sd = std::sqrt(pred.variance(u, l));
            posterior.x.push_back(queries[u]);
            posterior.y.push_back(pred.mean(u, l));
            posterior.band_low.push_back(pred.mean(u, l) - 2.0 * sd);
            posterior.band_high.push_back(pred.mean(u, l) + 2.0 * sd);
        }
        spec.series.push_back(std::move(posterior));

        if (truth != nullptr) {
            PlotSeries ts;
            ts.label = "truth";
            ts.color = "#2ca02c";
            for (Eigen::Index u = 0; u < queries.size(); ++u) {
                ts.x.push_back(queries[u]);
                ts.y.push_back((*truth)(u, l));
            }
            spec.series.push_back(std::move(ts));
        }

        PlotSeries emp;
        emp.label = "empirical";
        emp.color = "#d62728";
        emp.line = false;
        for (Eigen::Index i = 0; i < data.points(); ++i) {
            if (data.mask(i, l)) {
                emp.x.push_back(data.inputs[i]);
                emp.y.push_back(data.targets(i, l));
            }
        }
        if (!emp.x.empty()) spec.series.push_back(std::move(emp));

        const fs::path path = dir / (std::string("eval_") + kTaskNames[l] + ".svg");
        write_plot(path, spec);
        man.output(path);
    }
}

void write_empirical_csv(const fs::path& path, const TrainingSet& data) {
    std::ofstream os(path);
    if (!os) throw ParseError("cannot open " + path.string() + " for writing");
    os << "hours,task,value\n";
    for (int l = 0; l < kNumTasks; ++l) {
        for (Eigen::Index i = 0; i < data.points(); ++i) {
            if (data.mask(i, l)) {
                os << format_double(data.inputs[i]) << ',' << kTaskNames[l] << ','
                   << format_double(data.targets(i, l)) << '\n';
            }
        }
    }
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateOpts {
    std::string spec_path;
    int weeks = 1;
    int steps_per_hour = 1;
    std::uint64_t seed = 0;
    int bins_per_hour = 1;
    std::string out_dir;
};

int cmd_simulate(const SimulateOpts& o) {
    const fs::path dir = resolve_out_dir(o.out_dir);
    Manifest man("simulate", o.seed);
    man.config("spec", o.spec_path);
    man.config("weeks", static_cast<std::int64_t>(o.weeks));
    man.config("steps_per_hour", static_cast<std::int64_t>(o.steps_per_hour));
    man.config("seed", static_cast<std::int64_t>(o.seed));
    man.config("bins_per_hour", static_cast<std::int64_t>(o.bins_per_hour));

    const TransitionFunctionSpec spec = load_truth_spec(o.spec_path);
    SimulationConfig cfg;
    cfg.weeks = o.weeks;
    cfg.steps_per_hour = o.steps_per_hour;
    cfg.seed = o.seed;
    try {
        validate(cfg);
    } catch (const Error& e) {
        throw UsageError(e.what());
    }

    const StateSequence seq = simulate_chain(spec, cfg);
    const TimeBinScheme scheme = make_scheme(o.bins_per_hour);
    const TransitionDataset ds = estimate_empirical(bin_observations(seq, scheme));

    const fs::path seq_path = dir / "sequences.csv";
    const fs::path ds_path = dir / "dataset.csv";
    write_sequence_csv(seq_path, seq);
    write_dataset_csv(ds_path, ds);
    man.output(seq_path);
    man.output(ds_path);
    man.output(dir / "manifest.json");
    man.write(dir);

    std::cout << "simulate: " << seq.entries.size() << " observations over " << o.weeks
              << " weeks -> " << seq_path.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// fit

struct FitOpts {
    std::string data_path;
    int bins_per_hour = 1;
    bool bins_explicit = false;
    std::string solver = "auto";
    std::string constraints = "off";
    double penalty_weight = 10.0;
    std::string kernel = "rbf";
    int iterations = 500;
    bool independent_tasks = false;
    std::uint64_t seed = 0;
    int threads = 1;
    std::string out_dir;
};

int cmd_fit(const FitOpts& o) {
    const fs::path dir = resolve_out_dir(o.out_dir);
    Manifest man("fit", o.seed);
    man.config("data", o.data_path);
    man.config("bins_per_hour", static_cast<std::int64_t>(o.bins_per_hour));
    man.config("solver", o.solver);
    man.config("constraints", o.constraints);
    man.config("penalty_weight", o.penalty_weight);
    man.config("kernel", o.kernel);
    man.config("iterations", static_cast<std::int64_t>(o.iterations));
    man.config("independent_tasks", o.independent_tasks ? "true" : "false");
    man.config("seed", static_cast<std::int64_t>(o.seed));

    const SolverKind solver = parse_solver(o.solver);
    const KernelFamily kernel = parse_kernel(o.kernel);
    Eigen::setNbThreads(std::max(1, o.threads));

    const TransitionDataset ds = load_transition_data(o.data_path, o.bins_per_hour,
                                                      o.bins_explicit);
    const TrainingSet training = TrainingSet::from_dataset(ds);
    const Eigen::VectorXd points = parse_constraint_points(o.constraints, ds.scheme);

    std::cout << "fit: " << training.points() << " training rows (" << training.observed_count()
              << " observed targets, bins_per_hour=" << ds.scheme.bins_per_hour << ")\n";

    FitConfig fc;
    fc.max_iterations = o.iterations;
    fc.solver = solver;
    fc.kernel_family = kernel;
    fc.diagonal_task = o.independent_tasks;

    ConstraintConfig cc;
    cc.penalty_weight = o.penalty_weight;

    const ConstrainedFitOutcome outcome = fit_constrained(training, fc, points, cc);

    const fs::path model_path = dir / "model.json";
    const fs::path loss_path = dir / "loss.csv";
    save_model(model_path, outcome.model);
    write_loss_csv(loss_path, outcome.report.loss_trace);
    man.output(model_path);
    man.output(loss_path);
    if (points.size() > 0) {
        const fs::path report_path = dir / "constraint_report.json";
        std::ofstream os(report_path);
        os << report_to_json(outcome.constraints, /*include_wall_time=*/false);
        man.output(report_path);
    }
    man.output(dir / "manifest.json");
    man.write(dir);

    const char* solver_name =
        outcome.report.solver_used == SolverKind::Structured ? "structured" : "dense";
    std::cout << "fit: solver=" << solver_name << " iterations=" << outcome.report.iterations
              << " initial_loss=" << format_double(outcome.report.initial_nll)
              << " final_loss=" << format_double(outcome.report.final_nll) << " -> "
              << model_path.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// predict

struct PredictOpts {
    std::string model_path;
    std::string queries = "bins";
    std::uint64_t seed = 0;
    std::string out_dir;
};

MultiTaskGP load_model_checked(const std::string& path) {
    try {
        return load_model(path);
    } catch (const ModelMismatch&) {
        throw;
    } catch (const Error& e) {
        throw ModelMismatch(std::string("cannot load model: ") + e.what());
    }
}

int cmd_predict(const PredictOpts& o) {
    const fs::path dir = resolve_out_dir(o.out_dir);
    Manifest man("predict", o.seed);
    man.config("model", o.model_path);
    man.config("queries", o.queries);

    const MultiTaskGP model = load_model_checked(o.model_path);
    const Eigen::VectorXd queries = parse_queries(o.queries, model.training().scheme);
    const PredictiveDistribution pred = model.predict(queries);

    const fs::path pred_path = dir / "predictions.csv";
    write_predictions_csv(pred_path, queries, pred, nullptr, nullptr);
    man.output(pred_path);
    man.output(dir / "manifest.json");
    man.write(dir);

    std::cout << "predict: " << queries.size() << " query points -> " << pred_path.string()
              << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateOpts {
    std::string model_path;
    std::string truth_spec;
    std::string holdout;
    std::string queries = "bins";
    bool sweep = false;
    std::string sequences;
    std::string constraints = "bins";
    double penalty_weight = 10.0;
    int iterations = 500;
    std::uint64_t seed = 0;
    int threads = 1;
    std::string out_dir;
};

int evaluate_single(const EvaluateOpts& o, const fs::path& dir, Manifest& man) {
    if (o.model_path.empty()) throw UsageError("--model is required");
    const bool has_truth = !o.truth_spec.empty();
    const bool has_holdout = !o.holdout.empty();
    if (has_truth == has_holdout) {
        throw UsageError("provide exactly one of --truth-spec or --holdout");
    }

    const MultiTaskGP model = load_model_checked(o.model_path);
    const TimeBinScheme scheme = model.training().scheme;

    Eigen::VectorXd queries;
    Eigen::MatrixXd truth;
    Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> truth_mask;
    if (has_holdout) {
        const TransitionDataset ds = read_dataset_csv(fs::path(o.holdout));
        if (ds.scheme.bins_per_hour != scheme.bins_per_hour) {
            throw ModelMismatch("holdout uses " + std::to_string(ds.scheme.bins_per_hour) +
                                " bins/hour but the model was trained at " +
                                std::to_string(scheme.bins_per_hour));
        }
        const TrainingSet held = TrainingSet::from_dataset(ds);
        queries = held.inputs;
        truth = held.targets;
        truth_mask = held.mask;
    } else {
        const TransitionFunctionSpec spec = load_truth_spec(o.truth_spec);
        queries = parse_queries(o.queries, scheme);
        truth = truth_at(spec, queries);
        truth_mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(
            queries.size(), kNumTasks, true);
    }

    const PredictiveDistribution pred = model.predict(queries);
    const std::vector<TaskErrors> errors = error_metrics(pred.mean, truth, &truth_mask);
    const ConstraintReport report = evaluate_constraints(model, queries);

    const fs::path pred_path = dir / "predictions.csv";
    write_predictions_csv(pred_path, queries, pred, &truth, &truth_mask);
    man.output(pred_path);

    nlohmann::json metrics;
    metrics["final_nll"] = model.nll();
    metrics["queries"] = queries.size();
    nlohmann::json tasks(nlohmann::json::value_t::object);
    for (int l = 0; l < kNumTasks; ++l) {
        if (errors[l].n > 0) {
            tasks[kTaskNames[l]] = {{"rmse", errors[l].rmse},
                                    {"mae", errors[l].mae},
                                    {"points", errors[l].n}};
        } else {
            tasks[kTaskNames[l]] = nullptr;
        }
    }
    metrics["tasks"] = std::move(tasks);
    metrics["constraints"] = constraint_report_json(report);
    const fs::path metrics_path = dir / "metrics.json";
    {
        std::ofstream os(metrics_path);
        if (!os) throw ParseError("cannot open " + metrics_path.string() + " for writing");
        os << metrics.dump(2) << "\n";
    }
    man.output(metrics_path);

    write_task_plots(dir, model, queries, pred, &truth, man);
    const fs::path emp_path = dir / "empirical.csv";
    write_empirical_csv(emp_path, model.training());
    man.output(emp_path);
    man.output(dir / "manifest.json");
    man.write(dir);

    std::cout << "evaluate: final_nll=" << format_double(model.nll());
    for (int l = 0; l < kNumTasks; ++l) {
        std::cout << " rmse_" << kTaskNames[l] << "="
                  << (errors[l].n > 0 ? format_double(errors[l].rmse) : "n/a");
    }
    std::cout << "\nevaluate: constraints mean|row_sum-1|="
              << format_double(report.mean_stochasticity())
              << " min_posterior=" << format_double(report.min_value) << " ("
              << format_double(report.wall_time_ms) << " ms) -> " << metrics_path.string()
              << "\n";
    return 0;
}

struct SweepLevel {
    int bins_per_hour = 0;
    std::optional<ConstrainedFitOutcome> outcome;
    std::vector<TaskErrors> errors;
    double fit_seconds = 0.0;
};

int evaluate_sweep(const EvaluateOpts& o, const fs::path& dir, Manifest& man) {
    if (o.sequences.empty() || o.truth_spec.empty()) {
        throw UsageError("--sweep needs --sequences and --truth-spec");
    }
    const std::vector<StateSequence> seqs = read_sequences_csv(fs::path(o.sequences));
    const TransitionFunctionSpec spec = load_truth_spec(o.truth_spec);

    // a common fine evaluation grid keeps the comparison across levels fair
    const Eigen::VectorXd eval_queries = uniform_constraint_points(672);
    const Eigen::MatrixXd truth = truth_at(spec, eval_queries);

    const int levels[] = {1, 2, 4};
    std::vector<SweepLevel> rows(3);
    const auto run_level = [&](int idx) {
        const int bph = levels[idx];
        const TimeBinScheme scheme = make_scheme(bph);
        TransitionCounts counts(scheme);
        for (const auto& seq : seqs) counts.merge(bin_observations(seq, scheme));
        const TrainingSet training = TrainingSet::from_dataset(estimate_empirical(counts));
        const Eigen::VectorXd points = parse_constraint_points(o.constraints, scheme);

        FitConfig fc;
        fc.max_iterations = o.iterations;
        ConstraintConfig cc;
        cc.penalty_weight = o.penalty_weight;

        const auto t0 = std::chrono::steady_clock::now();
        ConstrainedFitOutcome outcome = fit_constrained(training, fc, points, cc);
        SweepLevel& row = rows[idx];
        row.fit_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                              .count();
        row.bins_per_hour = bph;
        row.errors = error_metrics(outcome.model.posterior_mean(eval_queries), truth, nullptr);
        row.outcome = std::move(outcome);
    };

    if (o.threads > 1) {
        std::vector<std::future<void>> futs;
        for (int i = 0; i < 3; ++i) {
            futs.push_back(std::async(std::launch::async, run_level, i));
        }
        for (auto& f : futs) f.get();
    } else {
        for (int i = 0; i < 3; ++i) run_level(i);
    }

    for (const SweepLevel& row : rows) {
        if (row.outcome->report.solver_used == SolverKind::Dense) {
            std::cerr << "note: bins_per_hour=" << row.bins_per_hour
                      << " grid has unobserved cells; the dense solver was used, which is much "
                         "slower at fine resolutions\n";
        }
    }

    const fs::path table_path = dir / "sweep_comparison.csv";
    {
        std::ofstream os(table_path);
        if (!os) throw ParseError("cannot open " + table_path.string() + " for writing");
        os << "bins_per_hour,bins";
        for (int l = 0; l < kNumTasks; ++l) os << ",rmse_" << kTaskNames[l];
        for (int l = 0; l < kNumTasks; ++l) os << ",mae_" << kTaskNames[l];
        os << ",final_loss,mean_violation,max_violation,min_posterior\n";
        for (const SweepLevel& row : rows) {
            os << row.bins_per_hour << ',' << row.bins_per_hour * 168;
            for (int l = 0; l < kNumTasks; ++l) os << ',' << format_double(row.errors[l].rmse);
            for (int l = 0; l < kNumTasks; ++l) os << ',' << format_double(row.errors[l].mae);
            const ConstraintReport& cr = row.outcome->constraints;
            os << ',' << format_double(row.outcome->report.final_nll) << ','
               << format_double(cr.mean_stochasticity()) << ','
               << format_double(cr.worst_stochasticity()) << ','
               << format_double(cr.min_value) << '\n';
        }
    }
    man.output(table_path);

    for (const SweepLevel& row : rows) {
        const std::string tag = std::to_string(row.bins_per_hour);
        const fs::path model_path = dir / ("model_bph" + tag + ".json");
        const fs::path loss_path = dir / ("loss_bph" + tag + ".csv");
        save_model(model_path, row.outcome->model);
        write_loss_csv(loss_path, row.outcome->report.loss_trace);
        man.output(model_path);
        man.output(loss_path);
    }

    {  // constraint satisfaction and runtime per level
        PlotSpec ps;
        ps.title = "constraint satisfaction vs discretization";
        ps.x_label = "bins per week";
        ps.y_label = "mean |row sum - 1| at constraint points";
        ps.y2_label = "fit wall time (s)";
        PlotSeries viol, secs;
        viol.label = "mean violation";
        viol.markers = true;
        secs.label = "fit time";
        secs.markers = true;
        secs.right_axis = true;
        secs.color = "#7f7f7f";
        for (const SweepLevel& row : rows) {
            viol.x.push_back(row.bins_per_hour * 168);
            viol.y.push_back(row.outcome->constraints.mean_stochasticity());
            secs.x.push_back(row.bins_per_hour * 168);
            secs.y.push_back(row.fit_seconds);
        }
        ps.series = {std::move(viol), std::move(secs)};
        write_plot(dir / "sweep_satisfaction.svg", ps);
        man.output(dir / "sweep_satisfaction.svg");
    }
    {  // error metrics per level
        PlotSpec ps;
        ps.title = "held-out error vs discretization";
        ps.x_label = "bins per week";
        ps.y_label = "RMSE vs truth";
        for (int l = 0; l < kNumTasks; ++l) {
            PlotSeries s;
            s.label = std::string("rmse ") + kTaskNames[l];
            s.markers = true;
            for (const SweepLevel& row : rows) {
                s.x.push_back(row.bins_per_hour * 168);
                s.y.push_back(row.errors[l].rmse);
            }
            ps.series.push_back(std::move(s));
        }
        write_plot(dir / "sweep_error.svg", ps);
        man.output(dir / "sweep_error.svg");
    }
    {  // loss progression per level
        PlotSpec ps;
        ps.title = "loss progression";
        ps.x_label = "iteration";
        ps.y_label = "penalized negative log-likelihood";
        for (const SweepLevel& row : rows) {
            PlotSeries s;
            s.label = std::to_string(row.bins_per_hour) + " bins/hour";
            const auto& trace = row.outcome->report.loss_trace;
            for (std::size_t i = 0; i < trace.size(); ++i) {
                s.x.push_back(static_cast<double>(i));
                s.y.push_back(trace[i]);
            }
            ps.series.push_back(std::move(s));
        }
        write_plot(dir / "sweep_loss.svg", ps);
        man.output(dir / "sweep_loss.svg");
    }

    man.output(dir / "manifest.json");
    man.write(dir);

    std::cout << "sweep: bins_per_hour bins mean_violation final_loss fit_s\n";
    for (const SweepLevel& row : rows) {
        std::cout << "sweep: " << row.bins_per_hour << ' ' << row.bins_per_hour * 168 << ' '
                  << format_double(row.outcome->constraints.mean_stochasticity()) << ' '
                  << format_double(row.outcome->report.final_nll) << ' '
                  << format_double(row.fit_seconds) << "\n";
    }
    std::cout << "sweep: table -> " << table_path.string() << "\n";
    return 0;
}

int cmd_evaluate(const EvaluateOpts& o) {
    const fs::path dir = resolve_out_dir(o.out_dir);
    Manifest man("evaluate", o.seed);
    man.config("model", o.model_path);
    man.config("truth_spec", o.truth_spec);
    man.config("holdout", o.holdout);
    man.config("queries", o.queries);
    man.config("sweep", o.sweep ? "true" : "false");
    man.config("sequences", o.sequences);
    man.config("constraints", o.constraints);
    man.config("penalty_weight", o.penalty_weight);
    man.config("iterations", static_cast<std::int64_t>(o.iterations));
    man.config("seed", static_cast<std::int64_t>(o.seed));
    Eigen::setNbThreads(std::max(1, o.threads));
    if (o.sweep) return evaluate_sweep(o, dir, man);
    return evaluate_single(o, dir, man);
}

// ---------------------------------------------------------------------------
// bench

struct BenchOpts {
    std::string sizes = "1024,2048,4096,8192,16384";
    int reps = 7;
    std::uint64_t seed = 0;
    std::string out_dir;
};

double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

template <typename F>
std::vector<double> time_reps(int reps, const F& f) {
    std::vector<double> ms;
    ms.reserve(reps);
    f();  // warm-up, untimed
    for (int r = 0; r < reps; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        f();
        ms.push_back(
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                .count());
    }
    return ms;
}

int cmd_bench(const BenchOpts& o) {
    if (o.reps < 5) throw UsageError("--reps must be at least 5");
    std::vector<int> sizes;
    {
        std::stringstream ss(o.sizes);
        std::string item;
        while (std::getline(ss, item, ',')) {
            const int n = parse_int(item, "size");
            if (n < 64) throw UsageError("sizes must be >= 64");
            sizes.push_back(n);
        }
        if (sizes.empty()) throw UsageError("--sizes is empty");
    }

    const fs::path dir = resolve_out_dir(o.out_dir);
    Manifest man("bench", o.seed);
    man.config("sizes", o.sizes);
    man.config("reps", static_cast<std::int64_t>(o.reps));
    man.config("seed", static_cast<std::int64_t>(o.seed));

    const fs::path csv_path = dir / "bench.csv";
    std::ofstream os(csv_path);
    if (!os) throw ParseError("cannot open " + csv_path.string() + " for writing");
    os << "operation,structure,n,median_ms,speedup_vs_dense\n";

    for (const int n : sizes) {
        Rng rng(o.seed, static_cast<std::uint64_t>(n));
        Eigen::VectorXd col(n), x(n);
        for (int i = 0; i < n; ++i) col[i] = rng.normal();
        for (int i = 0; i < n; ++i) x[i] = rng.normal();

        const ToeplitzMatrix toeplitz(col);
        Eigen::VectorXd y_fast = toeplitz.matvec(x);
        // O(n^2) oracle straight from the first column; no n x n allocation
        Eigen::VectorXd y_dense(n);
        const auto dense_matvec = [&] {
            for (int i = 0; i < n; ++i) {
                double acc = 0.0;
                for (int j = 0; j < n; ++j) acc += col[i > j ? i - j : j - i] * x[j];
                y_dense[i] = acc;
            }
        };
        dense_matvec();
        const double rel = (y_fast - y_dense).norm() / y_dense.norm();
        if (!(rel < 1e-10)) {
            throw Error("bench correctness check failed at n=" + std::to_string(n) +
                        " (rel error " + format_double(rel) + ")");
        }

        const double dense_med = median_of(time_reps(o.reps, dense_matvec));
        const double fast_med =
            median_of(time_reps(o.reps, [&] { y_fast = toeplitz.matvec(x); }));
        os << "matvec,dense," << n << ',' << format_double(dense_med) << ",1\n";
        os << "matvec,toeplitz_fft," << n << ',' << format_double(fast_med) << ','
           << format_double(dense_med / fast_med) << '\n';
        std::cout << "bench: matvec n=" << n << " dense=" << format_double(dense_med)
                  << "ms structured=" << format_double(fast_med)
                  << "ms speedup=" << format_double(dense_med / fast_med) << "\n";
    }

    {  // Kronecker product operator vs a materialized dense matrix at 64 x 64
        const int fa = 64, fb = 64, n = fa * fb;
        Rng rng(o.seed, 97);
        Eigen::MatrixXd A(fa, fa), B(fb, fb);
        for (int i = 0; i < fa; ++i) {
            for (int j = 0; j < fa; ++j) A(i, j) = rng.normal();
        }
        for (int i = 0; i < fb; ++i) {
            for (int j = 0; j < fb; ++j) B(i, j) = rng.normal();
        }
        Eigen::VectorXd x(n);
        for (int i = 0; i < n; ++i) x[i] = rng.normal();

        std::vector<KroneckerFactor> factors;
        factors.emplace_back(A);
        factors.emplace_back(B);
        const KroneckerOperator op(std::move(factors));
        Eigen::VectorXd y_fast = op.matvec(x);
        const Eigen::MatrixXd dense = op.dense();
        Eigen::VectorXd y_dense = dense * x;
        const double rel = (y_fast - y_dense).norm() / y_dense.norm();
        if (!(rel < 1e-10)) {
            throw Error("bench kron correctness check failed (rel error " + format_double(rel) +
                        ")");
        }
        const double dense_med = median_of(time_reps(o.reps, [&] { y_dense = dense * x; }));
        const double fast_med = median_of(time_reps(o.reps, [&] { y_fast = op.matvec(x); }));
        os << "kron_matvec,dense," << n << ',' << format_double(dense_med) << ",1\n";
        os << "kron_matvec,kronecker," << n << ',' << format_double(fast_med) << ','
           << format_double(dense_med / fast_med) << '\n';
        std::cout << "bench: kron_matvec n=" << n << " dense=" << format_double(dense_med)
                  << "ms structured=" << format_double(fast_med)
                  << "ms speedup=" << format_double(dense_med / fast_med) << "\n";
    }

    man.output(csv_path);
    man.output(dir / "manifest.json");
    man.write(dir);
    std::cout << "bench: -> " << csv_path.string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"mobgp: constrained multi-task GP estimation of weekly move/pause "
                 "transition probabilities"};
    app.require_subcommand(1);

    SimulateOpts sim;
    CLI::App* c_sim = app.add_subcommand("simulate", "simulate a synthetic state sequence");
    c_sim->add_option("--spec", sim.spec_path,
                      "transition spec JSON path, or 'default' for the built-in weekly spec")
        ->required();
    c_sim->add_option("--weeks", sim.weeks, "number of weeks to simulate")
        ->check(CLI::PositiveNumber);
    c_sim->add_option("--steps-per-hour", sim.steps_per_hour, "simulation steps per hour")
        ->check(CLI::PositiveNumber);
    c_sim->add_option("--seed", sim.seed, "random seed");
    c_sim->add_option("--bins-per-hour", sim.bins_per_hour, "weekly binning resolution")
        ->check(CLI::IsMember({1, 2, 4}));
    c_sim->add_option("--out-dir", sim.out_dir, "output directory (default $MOBGP_OUT or .)");

    FitOpts fit_o;
    CLI::App* c_fit = app.add_subcommand("fit", "fit a multi-task GP to transition data");
    c_fit->add_option("--data", fit_o.data_path, "sequences CSV or binned dataset CSV")
        ->required();
    CLI::Option* fit_bins =
        c_fit->add_option("--bins-per-hour", fit_o.bins_per_hour, "weekly binning resolution")
            ->check(CLI::IsMember({1, 2, 4}));
    c_fit->add_option("--solver", fit_o.solver, "auto | dense | structured");
    c_fit->add_option("--constraints", fit_o.constraints, "off | bins | uniform:N");
    c_fit->add_option("--penalty-weight", fit_o.penalty_weight,
                      "stochasticity penalty weight (first escalation stage)");
    c_fit->add_option("--kernel", fit_o.kernel, "rbf | matern32");
    c_fit->add_option("--iterations", fit_o.iterations, "optimizer iteration budget")
        ->check(CLI::PositiveNumber);
    c_fit->add_flag("--independent-tasks", fit_o.independent_tasks,
                    "restrict the task covariance to a diagonal");
    c_fit->add_option("--seed", fit_o.seed, "random seed (recorded; the fit is deterministic)");
    c_fit->add_option("--threads", fit_o.threads, "worker thread cap")->check(CLI::PositiveNumber);
    c_fit->add_option("--out-dir", fit_o.out_dir, "output directory (default $MOBGP_OUT or .)");

    PredictOpts pre;
    CLI::App* c_pre = app.add_subcommand("predict", "posterior mean/variance from a saved model");
    c_pre->add_option("--model", pre.model_path, "model JSON path")->required();
    c_pre->add_option("--queries", pre.queries, "bins | uniform:N");
    c_pre->add_option("--seed", pre.seed, "random seed (recorded)");
    c_pre->add_option("--out-dir", pre.out_dir, "output directory (default $MOBGP_OUT or .)");

    EvaluateOpts ev;
    CLI::App* c_ev = app.add_subcommand(
        "evaluate", "compare a model against ground truth or held-out data; emit plots");
    c_ev->add_option("--model", ev.model_path, "model JSON path");
    c_ev->add_option("--truth-spec", ev.truth_spec,
                     "transition spec JSON path, or 'default' for the built-in weekly spec");
    c_ev->add_option("--holdout", ev.holdout, "held-out dataset CSV");
    c_ev->add_option("--queries", ev.queries, "bins | uniform:N");
    c_ev->add_flag("--sweep", ev.sweep,
                   "fit and evaluate at 1/2/4 bins per hour (needs --sequences and --truth-spec)");
    c_ev->add_option("--sequences", ev.sequences, "sequences CSV for --sweep");
    c_ev->add_option("--constraints", ev.constraints, "off | bins | uniform:N (sweep fits)");
    c_ev->add_option("--penalty-weight", ev.penalty_weight, "sweep fit penalty weight");
    c_ev->add_option("--iterations", ev.iterations, "sweep fit iteration budget")
        ->check(CLI::PositiveNumber);
    c_ev->add_option("--seed", ev.seed, "random seed (recorded)");
    c_ev->add_option("--threads", ev.threads, "worker thread cap")->check(CLI::PositiveNumber);
    c_ev->add_option("--out-dir", ev.out_dir, "output directory (default $MOBGP_OUT or .)");

    BenchOpts be;
    CLI::App* c_be = app.add_subcommand("bench", "time structured vs dense matrix-vector products");
    c_be->add_option("--sizes", be.sizes, "comma-separated problem sizes (each >= 64)");
    c_be->add_option("--reps", be.reps, "repetitions per measurement (median reported)");
    c_be->add_option("--seed", be.seed, "random seed for benchmark inputs");
    c_be->add_option("--out-dir", be.out_dir, "output directory (default $MOBGP_OUT or .)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (app.got_subcommand(c_sim)) return cmd_simulate(sim);
        if (app.got_subcommand(c_fit)) {
            fit_o.bins_explicit = fit_bins->count() > 0;
            return cmd_fit(fit_o);
        }
        if (app.got_subcommand(c_pre)) return cmd_predict(pre);
        if (app.got_subcommand(c_ev)) return cmd_evaluate(ev);
        if (app.got_subcommand(c_be)) return cmd_bench(be);
    } catch (const UsageError& e) {
        std::cerr << "mobgp: error: " << e.what() << "\n";
        return 2;
    } catch (const ModelMismatch& e) {
        std::cerr << "mobgp: error: " << e.what() << "\n";
        return 4;
    } catch (const Error& e) {
        std::cerr << "mobgp: error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "mobgp: internal error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
