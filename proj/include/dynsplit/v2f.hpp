// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <vector>

#include "dynsplit/core_types.hpp"

namespace dynsplit {

/// How a variable-length block of keys is summarized into a fixed-size digest.
enum class DigestVariant {
    minmax,  ///< elementwise min and max box, two d-vectors per block
    mean,    ///< elementwise mean, one d-vector per block
};

struct BlockScore {
    std::size_t block = 0;
    double score = 0.0;
};

/// Digests for one head. `keys` is S x d; the plan must tile exactly [0, S).
std::vector<BlockDigest> build_head_digests(const Matrix& keys, const SegmentPlan& plan, DigestVariant variant,
                                            std::size_t head = 0);

/// Digests for every head, indexed [head][block].
std::vector<std::vector<BlockDigest>> build_digests(std::span<const Matrix> keys, const SegmentPlan& plan,
                                                    DigestVariant variant);

/// minmax: sum_j max(q_j * max_j, q_j * min_j), an upper bound on q.k over the block's keys.
/// mean:   q . mean.
std::vector<BlockScore> score_blocks(std::span<const double> query, std::span<const BlockDigest> digests,
                                     DigestVariant variant);

/// The min(k, n) best blocks, ties toward the lower index, returned in ascending block order.
std::vector<std::size_t> select_blocks(std::span<const BlockScore> scores, std::size_t k);

/// Within the marginal block the budget cut keeps the lowest (head) or highest (tail) positions.
enum class CutSide { head, tail };

struct TokenMapping {
    /// Strictly ascending token indices.
    std::vector<std::size_t> tokens;
    /// Set when the selected blocks held fewer tokens than the budget; `tokens` then holds all of them.
    bool budget_exceeds_selected = false;
};

/// Every token inherits its block's score; the `token_budget` best tokens of the selected blocks are
/// kept. Ranking is by score descending, then token index ascending (head) or descending (tail).
/// `scores` is indexed by block.
TokenMapping map_block_to_tokens(std::span<const std::size_t> selected, std::span<const BlockScore> scores,
                                 const SegmentPlan& plan, std::size_t token_budget, CutSide cut = CutSide::head);

/// Default block count for a token budget: the fewest blocks whose combined length is guaranteed
/// to reach the budget (counting the shortest blocks first), plus one, capped at the block count.
std::size_t default_block_count(const SegmentPlan& plan, std::size_t token_budget);

}  // namespace dynsplit
