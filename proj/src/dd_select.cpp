// SPDX-License-Identifier: Apache-2.0

#include "dynsplit/dd_select.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace dynsplit {

void SegmentConfig::validate() const {
    if (chunk_size < 1 || max_deviation >= chunk_size || !(mix >= 0.0 && mix <= 1.0)) {
        throw Error(ErrorCode::InvalidArgument,
                    fmt::format("segment config needs C >= 1, 0 <= delta < C, mix in [0, 1] (C={}, delta={}, mix={})",
                                chunk_size, max_deviation, mix));
    }
}

double proximity(std::size_t pos, std::size_t target_end, std::size_t max_deviation) {
    const std::size_t dist = pos > target_end ? pos - target_end : target_end - pos;
    return 1.0 - static_cast<double>(dist) / static_cast<double>(max_deviation + 1);
}

namespace {

// End (exclusive) of the block starting at `start`.
std::size_t block_end(const TokenSequence& seq, const DelimiterTable& table, const SegmentConfig& cfg,
                      std::size_t start) {
    const std::size_t len = seq.size();
    const std::size_t target = start + cfg.chunk_size;
    if (target >= len) {
        return len;
    }
    const std::size_t delta = cfg.max_deviation;
    const bool after = cfg.boundary_side == BoundarySide::after;

    std::size_t lo = std::max(target >= delta ? target - delta : 0, start + 1);
    std::size_t hi = target + delta;
    if (after) {
        hi -= 1;
    }
    hi = std::min(hi, len - 1);

    bool found = false;
    std::size_t best_pos = 0;
    double best_score = 0.0;
    for (std::size_t e = lo; e <= hi; ++e) {
        auto w = table.weight(seq[e]);
        if (!w) {
            continue;
        }
        const double score = cfg.mix * *w + (1.0 - cfg.mix) * proximity(e, target, delta);
        if (!found || score > best_score) {
            found = true;
            best_pos = e;
            best_score = score;
        }
    }
    if (!found) {
        return target;
    }
    return after ? best_pos + 1 : best_pos;
}

void segment_from(const TokenSequence& seq, const DelimiterTable& table, const SegmentConfig& cfg, std::size_t start,
                  std::vector<Span>& spans) {
    while (start < seq.size()) {
        const std::size_t end = block_end(seq, table, cfg, start);
        spans.push_back({start, end});
        start = end;
    }
}

}  // namespace

bool block_is_frozen(std::size_t start, std::size_t prefix_len, const SegmentConfig& cfg) {
    // Highest position the block decision reads: target + delta - 1 (after) or target + delta (before).
    const std::size_t reach = start + cfg.chunk_size + cfg.max_deviation;
    return cfg.boundary_side == BoundarySide::after ? reach <= prefix_len : reach < prefix_len;
}

SegmentPlan segment(const TokenSequence& seq, const DelimiterTable& table, const SegmentConfig& cfg) {
    cfg.validate();
    if (seq.empty()) {
        throw Error(ErrorCode::EmptySequence, "cannot segment an empty sequence");
    }
    std::vector<Span> spans;
    segment_from(seq, table, cfg, 0, spans);
    return SegmentPlan(std::move(spans), cfg.chunk_size, cfg.max_deviation);
}

SegmentPlan segment_incremental(const SegmentPlan& previous, const TokenSequence& extended,
                                const DelimiterTable& table, const SegmentConfig& cfg) {
    cfg.validate();
    if (extended.empty()) {
        throw Error(ErrorCode::EmptySequence, "cannot segment an empty sequence");
    }
    const std::size_t prev_len = previous.length();
    if (previous.empty() || prev_len > extended.size()) {
        throw Error(ErrorCode::PlanMismatch,
                    fmt::format("previous plan covers {} tokens, extended sequence has {}", prev_len, extended.size()));
    }
    if (previous.chunk_size() != cfg.chunk_size || previous.max_deviation() != cfg.max_deviation) {
        throw Error(ErrorCode::PlanMismatch,
                    fmt::format("previous plan used C={}, delta={}; config has C={}, delta={}", previous.chunk_size(),
                                previous.max_deviation(), cfg.chunk_size, cfg.max_deviation));
    }
    if (prev_len == extended.size()) {
        return previous;
    }

    std::vector<Span> spans;
    for (const Span& s : previous.spans()) {
        if (!block_is_frozen(s.start, prev_len, cfg)) {
            break;
        }
        spans.push_back(s);
    }
    const std::size_t resume = spans.empty() ? 0 : spans.back().end;
    segment_from(extended, table, cfg, resume, spans);
    return SegmentPlan(std::move(spans), cfg.chunk_size, cfg.max_deviation);
}

}  // namespace dynsplit
