// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <span>
#include <vector>

#include "dynsplit/core_types.hpp"
#include "dynsplit/v2f.hpp"

namespace dynsplit {

/// One d-vector per head.
using HeadVectors = std::vector<std::vector<double>>;

/// Per-head key/value matrices (S x d each) with an optional segmentation and its digests.
/// Build it, attach a plan, then share it read-only.
class KvCache {
public:
    KvCache() = default;
    KvCache(std::vector<Matrix> keys, std::vector<Matrix> values);

    std::size_t heads() const noexcept { return m_keys.size(); }
    std::size_t head_dim() const noexcept { return m_head_dim; }
    std::size_t seq_len() const noexcept { return m_seq_len; }

    const Matrix& keys(std::size_t head) const { return m_keys.at(head); }
    const Matrix& values(std::size_t head) const { return m_values.at(head); }

    /// Builds digests for every head. The plan must cover exactly [0, S).
    void attach_plan(SegmentPlan plan, DigestVariant variant);
    bool has_plan() const noexcept { return m_plan.has_value(); }
    const SegmentPlan& plan() const;
    DigestVariant variant() const noexcept { return m_variant; }
    const std::vector<BlockDigest>& digests(std::size_t head) const { return m_digests.at(head); }

private:
    std::vector<Matrix> m_keys;
    std::vector<Matrix> m_values;
    std::size_t m_head_dim = 0;
    std::size_t m_seq_len = 0;
    std::optional<SegmentPlan> m_plan;
    DigestVariant m_variant = DigestVariant::minmax;
    std::vector<std::vector<BlockDigest>> m_digests;
};

/// Which blocks feed the token-level top-k.
enum class TokenPool {
    selected_blocks,  ///< only the top-k blocks
    all_blocks,       ///< every block competes through its mapped score
};

struct SelectOptions {
    /// Blocks kept by the block stage; default_block_count() when unset.
    std::optional<std::size_t> block_count;
    CutSide cut_side = CutSide::head;
    TokenPool pool = TokenPool::selected_blocks;
    /// Adds the last N positions to every head's selection.
    std::size_t keep_recent = 0;
};

struct DecodeStepInput {
    std::span<const std::vector<double>> query;
    const KvCache& cache;
    std::size_t token_budget;
};

/// Per head: score_blocks -> select_blocks -> map_block_to_tokens.
SelectionResult select_step(const DecodeStepInput& input, const SelectOptions& options = {});

/// Softmax(q K_sel^T * scale) V_sel per head over the selected tokens only.
/// `scale` defaults to 1 / sqrt(d). Throws EmptySelection when a head selects nothing.
HeadVectors sparse_attention(std::span<const std::vector<double>> query, const KvCache& cache,
                             const SelectionResult& selection, std::optional<double> scale = std::nullopt);

/// Scaled dot-product attention over all S tokens.
HeadVectors dense_attention(std::span<const std::vector<double>> query, const KvCache& cache,
                            std::optional<double> scale = std::nullopt);

/// Attention of one head over `indices` (ascending), softmax with max subtraction.
std::vector<double> attend(std::span<const double> query, const Matrix& keys, const Matrix& values,
                           std::span<const std::size_t> indices, double scale);

struct ReusePlan {
    /// Per head, the first reuse_len entries of prev ∩ next in ascending order.
    std::vector<std::vector<std::size_t>> reused;
    /// Per head, next minus reused.
    std::vector<std::vector<std::size_t>> fresh;
    std::size_t reuse_len = 0;
};

/// Equalizes reusable KV across heads: reuse_len is the smallest per-head overlap.
ReusePlan plan_reuse(const SelectionResult& prev, const SelectionResult& next);

struct DecodeStats {
    /// 1-based step number.
    std::size_t step = 0;
    /// Largest per-head count of freshly loaded tokens.
    std::size_t fresh = 0;
    /// Uniform per-head count of tokens carried over from the previous step.
    std::size_t reused = 0;
    /// Digests scored across all heads.
    std::size_t blocks_scored = 0;
};

struct DecodeTrace {
    std::vector<HeadVectors> outputs;
    std::vector<DecodeStats> stats;
    std::vector<SelectionResult> selections;
};

/// Runs select_step + sparse_attention for each query. With reuse on, each step's gather set is
/// assembled from the reused and fresh index lists; outputs match reuse off bit for bit.
DecodeTrace decode_loop(const KvCache& cache, std::span<const HeadVectors> queries, std::size_t token_budget,
                        bool reuse, const SelectOptions& options = {});

}  // namespace dynsplit
