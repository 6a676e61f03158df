// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "dynsplit/core_types.hpp"

namespace dynsplit {

/// Which side of the chosen delimiter the cut falls on.
///   after:  the delimiter closes its block, block = [start, e + 1)
///   before: the delimiter opens the next block, block = [start, e)
enum class BoundarySide { before, after };

struct SegmentConfig {
    /// Target block length C.
    std::size_t chunk_size = 64;
    /// Maximum deviation from the target end, 0 <= delta < C.
    std::size_t max_deviation = 14;
    /// Mix between delimiter weight (1.0) and proximity to the target end (0.0).
    double mix = 0.5;
    BoundarySide boundary_side = BoundarySide::after;

    void validate() const;
};

/// Proximity of a delimiter at `pos` to the target end: 1 - |pos - target| / (delta + 1).
double proximity(std::size_t pos, std::size_t target_end, std::size_t max_deviation);

/// Greedy length-regularized segmentation.
///
/// From each block start s the target end is s + C. When s + C >= L the tail [s, L) is emitted.
/// Otherwise every table delimiter e with |e - (s + C)| <= delta (and, in `after` mode,
/// e < s + C + delta so the block never exceeds C + delta) inside [s + 1, L - 1] is scored as
/// mix * w_e + (1 - mix) * proximity(e); the highest score wins, ties go to the smallest position.
/// Without candidates the block ends at s + C.
SegmentPlan segment(const TokenSequence& seq, const DelimiterTable& table, const SegmentConfig& cfg);

/// Re-segments after `extended` grew past the sequence `previous` was computed on. Blocks whose
/// decision window lies entirely inside the old sequence are kept; the rest is recomputed.
/// The result equals segment(extended, table, cfg).
/// Throws PlanMismatch when `previous` cannot have come from a prefix of `extended` under `cfg`.
SegmentPlan segment_incremental(const SegmentPlan& previous, const TokenSequence& extended,
                                const DelimiterTable& table, const SegmentConfig& cfg);

/// True when the block starting at `start` is decided by tokens inside [0, prefix_len) alone.
bool block_is_frozen(std::size_t start, std::size_t prefix_len, const SegmentConfig& cfg);

}  // namespace dynsplit
