// SPDX-License-Identifier: Apache-2.0

#include "dynsplit/v2f.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

namespace dynsplit {

std::vector<BlockDigest> build_head_digests(const Matrix& keys, const SegmentPlan& plan, DigestVariant variant,
                                            std::size_t head) {
    if (plan.length() != keys.rows()) {
        throw Error(ErrorCode::PlanCoverageMismatch,
                    fmt::format("plan covers {} tokens but the key matrix has {} rows", plan.length(), keys.rows()));
    }
    const std::size_t d = keys.cols();
    std::vector<BlockDigest> digests;
    digests.reserve(plan.size());
    for (const Span& span : plan.spans()) {
        BlockDigest dg;
        dg.span = span;
        dg.head = head;
        if (variant == DigestVariant::minmax) {
            auto first = keys.row(span.start);
            dg.key_max.assign(first.begin(), first.end());
            dg.key_min.assign(first.begin(), first.end());
            for (std::size_t t = span.start + 1; t < span.end; ++t) {
                auto k = keys.row(t);
                for (std::size_t j = 0; j < d; ++j) {
                    dg.key_max[j] = std::max(dg.key_max[j], k[j]);
                    dg.key_min[j] = std::min(dg.key_min[j], k[j]);
                }
            }
        } else {
            dg.key_mean.assign(d, 0.0);
            for (std::size_t t = span.start; t < span.end; ++t) {
                auto k = keys.row(t);
                for (std::size_t j = 0; j < d; ++j) {
                    dg.key_mean[j] += k[j];
                }
            }
            const double n = static_cast<double>(span.length());
            for (double& v : dg.key_mean) {
                v /= n;
            }
        }
        digests.push_back(std::move(dg));
    }
    return digests;
}

std::vector<std::vector<BlockDigest>> build_digests(std::span<const Matrix> keys, const SegmentPlan& plan,
                                                    DigestVariant variant) {
    std::vector<std::vector<BlockDigest>> out;
    out.reserve(keys.size());
    for (std::size_t h = 0; h < keys.size(); ++h) {
        out.push_back(build_head_digests(keys[h], plan, variant, h));
    }
    return out;
}

std::vector<BlockScore> score_blocks(std::span<const double> query, std::span<const BlockDigest> digests,
                                     DigestVariant variant) {
    std::vector<BlockScore> out;
    out.reserve(digests.size());
    for (std::size_t b = 0; b < digests.size(); ++b) {
        const BlockDigest& dg = digests[b];
        double s = 0.0;
        if (variant == DigestVariant::minmax) {
            if (dg.key_max.size() != query.size() || dg.key_min.size() != query.size()) {
                throw Error(ErrorCode::DimensionMismatch,
                            fmt::format("query has {} dims, block {} min/max digest has {}", query.size(), b,
                                        dg.key_max.size()));
            }
            for (std::size_t j = 0; j < query.size(); ++j) {
                s += std::max(query[j] * dg.key_max[j], query[j] * dg.key_min[j]);
            }
        } else {
            if (dg.key_mean.size() != query.size()) {
                throw Error(ErrorCode::DimensionMismatch,
                            fmt::format("query has {} dims, block {} mean digest has {}", query.size(), b,
                                        dg.key_mean.size()));
            }
            for (std::size_t j = 0; j < query.size(); ++j) {
                s += query[j] * dg.key_mean[j];
            }
        }
        out.push_back({b, s});
    }
    return out;
}

std::vector<std::size_t> select_blocks(std::span<const BlockScore> scores, std::size_t k) {
    if (k == 0) {
        throw Error(ErrorCode::InvalidArgument, "block count k must be at least 1");
    }
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const std::size_t take = std::min(k, order.size());
    auto better = [&](std::size_t a, std::size_t b) {
        if (scores[a].score != scores[b].score) {
            return scores[a].score > scores[b].score;
        }
        return scores[a].block < scores[b].block;
    };
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(), better);
    std::vector<std::size_t> out;
    out.reserve(take);
    for (std::size_t i = 0; i < take; ++i) {
        out.push_back(scores[order[i]].block);
    }
    std::sort(out.begin(), out.end());
    return out;
}

TokenMapping map_block_to_tokens(std::span<const std::size_t> selected, std::span<const BlockScore> scores,
                                 const SegmentPlan& plan, std::size_t token_budget, CutSide cut) {
    if (token_budget == 0) {
        throw Error(ErrorCode::InvalidArgument, "token budget must be at least 1");
    }
    if (scores.size() != plan.size()) {
        throw Error(ErrorCode::ShapeMismatch,
                    fmt::format("{} block scores for a plan of {} blocks", scores.size(), plan.size()));
    }
    std::vector<std::size_t> blocks(selected.begin(), selected.end());
    for (std::size_t b : blocks) {
        if (b >= plan.size()) {
            throw Error(ErrorCode::InvalidArgument, fmt::format("selected block {} outside plan", b));
        }
    }
    std::sort(blocks.begin(), blocks.end());
    blocks.erase(std::unique(blocks.begin(), blocks.end()), blocks.end());

    // Tokens of one block share a score, so ranking whole blocks and cutting inside the last one
    // reproduces the per-token ranking.
    std::stable_sort(blocks.begin(), blocks.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a].score != scores[b].score) {
            return scores[a].score > scores[b].score;
        }
        return cut == CutSide::head ? a < b : a > b;
    });

    TokenMapping out;
    std::size_t remaining = token_budget;
    for (std::size_t b : blocks) {
        if (remaining == 0) {
            break;
        }
        const Span& span = plan[b];
        const std::size_t take = std::min(remaining, span.length());
        const std::size_t first = cut == CutSide::head ? span.start : span.end - take;
        for (std::size_t t = first; t < first + take; ++t) {
            out.tokens.push_back(t);
        }
        remaining -= take;
    }
    out.budget_exceeds_selected = remaining > 0;
    std::sort(out.tokens.begin(), out.tokens.end());
    return out;
}

std::size_t default_block_count(const SegmentPlan& plan, std::size_t token_budget) {
    std::vector<std::size_t> lengths;
    lengths.reserve(plan.size());
    for (const Span& s : plan.spans()) {
        lengths.push_back(s.length());
    }
    std::sort(lengths.begin(), lengths.end());
    std::size_t covered = 0;
    std::size_t count = 0;
    while (count < lengths.size() && covered < token_budget) {
        covered += lengths[count];
        ++count;
    }
    return std::max<std::size_t>(1, std::min(count + 1, lengths.size()));
}

}  // namespace dynsplit
