#include "mobgp/csv.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>

#include "mobgp/errors.hpp"

namespace mobgp {

namespace {

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

double parse_double(const std::string& s, const char* what, std::size_t line_no) {
    double v{};
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
        throw ParseError(std::string("bad ") + what + " at line " + std::to_string(line_no) + ": '" + s + "'");
    }
    return v;
}

std::int64_t parse_int(const std::string& s, const char* what, std::size_t line_no) {
    std::int64_t v{};
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
        throw ParseError(std::string("bad ") + what + " at line " + std::to_string(line_no) + ": '" + s + "'");
    }
    return v;
}

std::ifstream open_input(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ParseError("cannot open " + path.string());
    return is;
}

std::ofstream open_output(const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) throw ParseError("cannot open " + path.string() + " for writing");
    return os;
}

}  // namespace

std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

void write_sequence_csv(std::ostream& os, const StateSequence& seq) {
    os << "person_id,timestamp,state\n";
    for (const auto& e : seq.entries) {
        os << seq.person_id << ',' << e.timestamp << ',' << state_char(e.state) << '\n';
    }
}

void write_sequence_csv(const std::filesystem::path& path, const StateSequence& seq) {
    auto os = open_output(path);
    write_sequence_csv(os, seq);
}

std::vector<StateSequence> read_sequences_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw ParseError("empty sequence CSV");
    if (split_fields(line) != std::vector<std::string>{"person_id", "timestamp", "state"}) {
        throw ParseError("unexpected sequence CSV header: '" + line + "'");
    }
    std::vector<StateSequence> out;
    std::size_t line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto f = split_fields(line);
        if (f.size() != 3) throw ParseError("expected 3 fields at line " + std::to_string(line_no));
        const auto state = state_from_char(f[2].size() == 1 ? f[2][0] : '\0');
        if (!state) throw ParseError("bad state at line " + std::to_string(line_no) + ": '" + f[2] + "'");
        StateObservation obs{parse_int(f[1], "timestamp", line_no), *state};
        if (out.empty() || out.back().person_id != f[0]) {
            auto it = std::find_if(out.begin(), out.end(),
                                   [&](const StateSequence& s) { return s.person_id == f[0]; });
            if (it != out.end()) {
                it->entries.push_back(obs);
                continue;
            }
            out.push_back(StateSequence{f[0], {}});
        }
        out.back().entries.push_back(obs);
    }
    if (out.empty()) throw EmptyInput("sequence CSV has no data rows");
    for (const auto& seq : out) validate(seq);
    return out;
}

std::vector<StateSequence> read_sequences_csv(const std::filesystem::path& path) {
    auto is = open_input(path);
    return read_sequences_csv(is);
}

void write_dataset_csv(std::ostream& os, const TransitionDataset& ds) {
    os << "bin,a_pp,a_pm,a_mm,a_mp,n_pause,n_move,missing_pause,missing_move\n";
    for (std::size_t b = 0; b < ds.rows.size(); ++b) {
        const TransitionRow& r = ds.rows[b];
        os << b << ',';
        if (r.missing_pause) {
            os << ",,";
        } else {
            os << format_double(r.a_pp) << ',' << format_double(r.a_pm) << ',';
        }
        if (r.missing_move) {
            os << ",,";
        } else {
            os << format_double(r.a_mm) << ',' << format_double(r.a_mp) << ',';
        }
        os << r.n_pause << ',' << r.n_move << ',' << (r.missing_pause ? 1 : 0) << ','
           << (r.missing_move ? 1 : 0) << '\n';
    }
}

void write_dataset_csv(const std::filesystem::path& path, const TransitionDataset& ds) {
    auto os = open_output(path);
    write_dataset_csv(os, ds);
}

TransitionDataset read_dataset_csv(std::istream& is) {
    constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
    std::string line;
    if (!std::getline(is, line)) throw ParseError("empty dataset CSV");
    const std::string expected = "bin,a_pp,a_pm,a_mm,a_mp,n_pause,n_move,missing_pause,missing_move";
    {
        std::string got = line;
        if (!got.empty() && got.back() == '\r') got.pop_back();
        if (got != expected) throw ParseError("unexpected dataset CSV header: '" + line + "'");
    }
    std::vector<TransitionRow> rows;
    std::size_t line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto f = split_fields(line);
        if (f.size() != 9) throw ParseError("expected 9 fields at line " + std::to_string(line_no));
        const auto bin = parse_int(f[0], "bin", line_no);
        if (bin != static_cast<std::int64_t>(rows.size())) {
            throw ParseError("non-contiguous bin index at line " + std::to_string(line_no));
        }
        TransitionRow r{kNaN, kNaN, kNaN, kNaN, 0, 0, true, true};
        r.n_pause = parse_int(f[5], "n_pause", line_no);
        r.n_move = parse_int(f[6], "n_move", line_no);
        r.missing_pause = parse_int(f[7], "missing_pause", line_no) != 0;
        r.missing_move = parse_int(f[8], "missing_move", line_no) != 0;
        if (!r.missing_pause) {
            r.a_pp = parse_double(f[1], "a_pp", line_no);
            r.a_pm = parse_double(f[2], "a_pm", line_no);
        }
        if (!r.missing_move) {
            r.a_mm = parse_double(f[3], "a_mm", line_no);
            r.a_mp = parse_double(f[4], "a_mp", line_no);
        }
        rows.push_back(r);
    }
    TransitionDataset ds;
    const std::size_t n = rows.size();
    int bph = 0;
    for (int candidate : {1, 2, 4}) {
        if (n == static_cast<std::size_t>(168 * candidate)) bph = candidate;
    }
    if (bph == 0) throw ParseError("dataset has " + std::to_string(n) + " rows; expected 168, 336 or 672");
    ds.scheme = make_scheme(bph);
    ds.rows = std::move(rows);
    return ds;
}

TransitionDataset read_dataset_csv(const std::filesystem::path& path) {
    auto is = open_input(path);
    return read_dataset_csv(is);
}

}  // namespace mobgp
