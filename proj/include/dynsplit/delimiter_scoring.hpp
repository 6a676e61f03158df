// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <set>
#include <span>
#include <vector>

#include "dynsplit/core_types.hpp"

namespace dynsplit {

struct ScoringConfig {
    /// Future queries i+1 .. i+W that probe the boundary.
    std::size_t future_window = 8;
    /// Retained context i-R+1 .. i; everything before it counts as dropped.
    std::size_t overlap_size = 128;
    /// Weight of the dropped-context mass.
    double penalty = 1.0;

    void validate() const;
};

/// Attention-dependency score of one candidate boundary position.
///
/// Future window F = {i+1, ..., min(i+W, S-1)}, retained region O = {max(0, i-R+1), ..., i},
/// dropped region D = {0, ..., i-R} (empty for i < R). The masses are means over every
/// (layer, head, q in F) of the attention that q places on O and D respectively, and
/// score = overlap_mass - penalty * drop_mass. A candidate with an empty future window
/// (i = S-1) is reported with valid = false and a NaN score.
struct DelimiterScore {
    std::size_t position = 0;
    double score = 0.0;
    double overlap_mass = 0.0;
    double drop_mass = 0.0;
    bool valid = false;
};

/// Scores in candidate order. Throws CandidateOutOfRange for positions >= S.
std::vector<DelimiterScore> score_positions(const AttentionTensor& attn, std::span<const std::size_t> candidates,
                                            const ScoringConfig& cfg);

/// Positions whose token id belongs to `ids`, ascending.
std::vector<std::size_t> candidate_positions(const TokenSequence& seq, const std::set<TokenId>& ids);

enum class Normalization { minmax, clamp };

struct TableOptions {
    Normalization normalization = Normalization::minmax;
    /// Round weights to one decimal place.
    bool round_to_tenth = true;
};

/// Averages valid scores per token id and maps the averages into [0, 1].
/// Minmax over a single distinct value maps everything to 1.0.
/// Throws EmptyInput when there is no valid score to aggregate.
DelimiterTable build_table(std::span<const DelimiterScore> scores, const TokenSequence& token_at,
                           const TableOptions& options = {});

}  // namespace dynsplit
