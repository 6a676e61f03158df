// SPDX-License-Identifier: Apache-2.0

#include "dynsplit/kv_pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <iterator>
#include <limits>

#include <fmt/format.h>

namespace dynsplit {

KvCache::KvCache(std::vector<Matrix> keys, std::vector<Matrix> values)
    : m_keys(std::move(keys)), m_values(std::move(values)) {
    if (m_keys.size() != m_values.size()) {
        throw Error(ErrorCode::ShapeMismatch,
                    fmt::format("{} key heads but {} value heads", m_keys.size(), m_values.size()));
    }
    if (!m_keys.empty()) {
        m_seq_len = m_keys.front().rows();
        m_head_dim = m_keys.front().cols();
    }
    for (std::size_t h = 0; h < m_keys.size(); ++h) {
        for (const Matrix* m : {&m_keys[h], &m_values[h]}) {
            if (m->rows() != m_seq_len || m->cols() != m_head_dim) {
                throw Error(ErrorCode::ShapeMismatch,
                            fmt::format("head {} matrix is {}x{}, expected {}x{}", h, m->rows(), m->cols(), m_seq_len,
                                        m_head_dim));
            }
        }
    }
}

void KvCache::attach_plan(SegmentPlan plan, DigestVariant variant) {
    if (plan.length() != m_seq_len) {
        throw Error(ErrorCode::PlanCoverageMismatch,
                    fmt::format("plan covers {} tokens, cache holds {}", plan.length(), m_seq_len));
    }
    m_digests = build_digests(m_keys, plan, variant);
    m_plan = std::move(plan);
    m_variant = variant;
}

const SegmentPlan& KvCache::plan() const {
    if (!m_plan) {
        throw Error(ErrorCode::InvalidArgument, "cache has no segment plan attached");
    }
    return *m_plan;
}

namespace {

void check_query(std::span<const std::vector<double>> query, const KvCache& cache) {
    if (query.size() != cache.heads()) {
        throw Error(ErrorCode::DimensionMismatch,
                    fmt::format("query has {} heads, cache has {}", query.size(), cache.heads()));
    }
    for (std::size_t h = 0; h < query.size(); ++h) {
        if (query[h].size() != cache.head_dim()) {
            throw Error(ErrorCode::DimensionMismatch,
                        fmt::format("query head {} has dim {}, cache head dim is {}", h, query[h].size(),
                                    cache.head_dim()));
        }
    }
}

double default_scale(const KvCache& cache, std::optional<double> scale) {
    if (scale) {
        return *scale;
    }
    return cache.head_dim() == 0 ? 1.0 : 1.0 / std::sqrt(static_cast<double>(cache.head_dim()));
}

std::vector<std::size_t> merge_sorted(std::span<const std::size_t> a, std::span<const std::size_t> b) {
    std::vector<std::size_t> out;
    out.reserve(a.size() + b.size());
    std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
    return out;
}

}  // namespace

SelectionResult select_step(const DecodeStepInput& input, const SelectOptions& options) {
    const KvCache& cache = input.cache;
    check_query(input.query, cache);
    if (input.token_budget == 0) {
        throw Error(ErrorCode::InvalidArgument, "token budget must be at least 1");
    }
    const SegmentPlan& plan = cache.plan();

    SelectionResult result;
    result.token_budget = input.token_budget;
    const std::size_t heads = cache.heads();
    result.tokens.resize(heads);
    result.block_scores.resize(heads);
    result.blocks.resize(heads);
    result.short_of_budget.assign(heads, false);

    std::size_t k = options.pool == TokenPool::all_blocks ? plan.size()
                                                           : options.block_count.value_or(
                                                                 default_block_count(plan, input.token_budget));
    k = std::max<std::size_t>(k, 1);

    std::vector<std::size_t> recent;
    const std::size_t keep = std::min(options.keep_recent, cache.seq_len());
    for (std::size_t t = cache.seq_len() - keep; t < cache.seq_len(); ++t) {
        recent.push_back(t);
    }

    for (std::size_t h = 0; h < heads; ++h) {
        const auto scores = score_blocks(input.query[h], cache.digests(h), cache.variant());
        auto chosen = select_blocks(scores, k);
        auto mapping = map_block_to_tokens(chosen, scores, plan, input.token_budget, options.cut_side);

        result.block_scores[h].reserve(scores.size());
        for (const auto& s : scores) {
            result.block_scores[h].push_back(s.score);
        }
        result.blocks[h] = std::move(chosen);
        result.short_of_budget[h] = mapping.budget_exceeds_selected;
        result.tokens[h] = recent.empty() ? std::move(mapping.tokens) : merge_sorted(mapping.tokens, recent);
    }
    return result;
}

std::vector<double> attend(std::span<const double> query, const Matrix& keys, const Matrix& values,
                           std::span<const std::size_t> indices, double scale) {
    if (indices.empty()) {
        throw Error(ErrorCode::EmptySelection, "attention over an empty selection");
    }
    const std::size_t d = keys.cols();
    std::vector<double> logits(indices.size());
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= keys.rows()) {
            throw Error(ErrorCode::InvalidArgument, fmt::format("token index {} outside cache", indices[i]));
        }
        auto k = keys.row(indices[i]);
        double dot = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            dot += query[j] * k[j];
        }
        logits[i] = dot * scale;
        peak = std::max(peak, logits[i]);
    }
    double total = 0.0;
    for (double& l : logits) {
        l = std::exp(l - peak);
        total += l;
    }
    std::vector<double> out(values.cols(), 0.0);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const double w = logits[i] / total;
        auto v = values.row(indices[i]);
        for (std::size_t j = 0; j < out.size(); ++j) {
            out[j] += w * v[j];
        }
    }
    return out;
}

HeadVectors sparse_attention(std::span<const std::vector<double>> query, const KvCache& cache,
                             const SelectionResult& selection, std::optional<double> scale) {
    check_query(query, cache);
    if (selection.heads() != cache.heads()) {
        throw Error(ErrorCode::ShapeMismatch,
                    fmt::format("selection has {} heads, cache has {}", selection.heads(), cache.heads()));
    }
    const double s = default_scale(cache, scale);
    HeadVectors out;
    out.reserve(cache.heads());
    for (std::size_t h = 0; h < cache.heads(); ++h) {
        out.push_back(attend(query[h], cache.keys(h), cache.values(h), selection.tokens[h], s));
    }
    return out;
}

HeadVectors dense_attention(std::span<const std::vector<double>> query, const KvCache& cache,
                            std::optional<double> scale) {
    check_query(query, cache);
    const double s = default_scale(cache, scale);
    std::vector<std::size_t> all(cache.seq_len());
    for (std::size_t t = 0; t < all.size(); ++t) {
        all[t] = t;
    }
    HeadVectors out;
    out.reserve(cache.heads());
    for (std::size_t h = 0; h < cache.heads(); ++h) {
        out.push_back(attend(query[h], cache.keys(h), cache.values(h), all, s));
    }
    return out;
}

ReusePlan plan_reuse(const SelectionResult& prev, const SelectionResult& next) {
    if (prev.heads() != next.heads()) {
        throw Error(ErrorCode::ShapeMismatch,
                    fmt::format("previous selection has {} heads, next has {}", prev.heads(), next.heads()));
    }
    const std::size_t heads = next.heads();
    std::vector<std::vector<std::size_t>> reusable(heads);
    std::size_t reuse_len = std::numeric_limits<std::size_t>::max();
    for (std::size_t h = 0; h < heads; ++h) {
        std::set_intersection(prev.tokens[h].begin(), prev.tokens[h].end(), next.tokens[h].begin(),
                              next.tokens[h].end(), std::back_inserter(reusable[h]));
        reuse_len = std::min(reuse_len, reusable[h].size());
    }
    ReusePlan plan;
    plan.reuse_len = heads == 0 ? 0 : reuse_len;
    plan.reused.resize(heads);
    plan.fresh.resize(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        reusable[h].resize(plan.reuse_len);
        plan.reused[h] = std::move(reusable[h]);
        std::set_difference(next.tokens[h].begin(), next.tokens[h].end(), plan.reused[h].begin(),
                            plan.reused[h].end(), std::back_inserter(plan.fresh[h]));
    }
    return plan;
}

DecodeTrace decode_loop(const KvCache& cache, std::span<const HeadVectors> queries, std::size_t token_budget,
                        bool reuse, const SelectOptions& options) {
    DecodeTrace trace;
    trace.outputs.reserve(queries.size());
    trace.stats.reserve(queries.size());
    const double scale = default_scale(cache, std::nullopt);

    std::size_t digests_per_step = 0;
    for (std::size_t h = 0; h < cache.heads(); ++h) {
        digests_per_step += cache.digests(h).size();
    }

    for (std::size_t step = 0; step < queries.size(); ++step) {
        const HeadVectors& q = queries[step];
        SelectionResult sel = select_step({q, cache, token_budget}, options);

        DecodeStats stats;
        stats.step = step + 1;
        stats.blocks_scored = digests_per_step;

        HeadVectors out;
        out.reserve(cache.heads());
        if (reuse && !trace.selections.empty()) {
            const ReusePlan rp = plan_reuse(trace.selections.back(), sel);
            stats.reused = rp.reuse_len;
            for (std::size_t h = 0; h < cache.heads(); ++h) {
                stats.fresh = std::max(stats.fresh, rp.fresh[h].size());
                const auto gathered = merge_sorted(rp.reused[h], rp.fresh[h]);
                out.push_back(attend(q[h], cache.keys(h), cache.values(h), gathered, scale));
            }
        } else {
            for (std::size_t h = 0; h < cache.heads(); ++h) {
                stats.fresh = std::max(stats.fresh, sel.tokens[h].size());
                out.push_back(attend(q[h], cache.keys(h), cache.values(h), sel.tokens[h], scale));
            }
        }
        trace.outputs.push_back(std::move(out));
        trace.stats.push_back(stats);
        trace.selections.push_back(std::move(sel));
    }
    return trace;
}

}  // namespace dynsplit
