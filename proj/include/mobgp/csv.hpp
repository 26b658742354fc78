#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "mobgp/markov.hpp"

namespace mobgp {

/// Shortest round-trip decimal representation of a double.
std::string format_double(double v);

/// Writes `person_id,timestamp,state` rows, state in {P, M}.
void write_sequence_csv(std::ostream& os, const StateSequence& seq);
void write_sequence_csv(const std::filesystem::path& path, const StateSequence& seq);

/// Reads sequences grouped by person_id (order of first appearance). Rows for one person
/// must already be in timestamp order.
std::vector<StateSequence> read_sequences_csv(std::istream& is);
std::vector<StateSequence> read_sequences_csv(const std::filesystem::path& path);

/// Writes `bin,a_pp,a_pm,a_mm,a_mp,n_pause,n_move,missing_pause,missing_move`. Probability
/// cells of a missing origin are left empty.
void write_dataset_csv(std::ostream& os, const TransitionDataset& ds);
void write_dataset_csv(const std::filesystem::path& path, const TransitionDataset& ds);

TransitionDataset read_dataset_csv(std::istream& is);
TransitionDataset read_dataset_csv(const std::filesystem::path& path);

}  // namespace mobgp
