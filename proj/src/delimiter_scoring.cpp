// SPDX-License-Identifier: Apache-2.0

#include "dynsplit/delimiter_scoring.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include <fmt/format.h>

namespace dynsplit {

void ScoringConfig::validate() const {
    if (future_window < 1 || overlap_size < 1 || !(penalty >= 0.0) || !std::isfinite(penalty)) {
        throw Error(ErrorCode::InvalidArgument,
                    fmt::format("scoring config needs W >= 1, R >= 1, penalty >= 0 (W={}, R={}, penalty={})",
                                future_window, overlap_size, penalty));
    }
}

namespace {

// prefix[(lh * S + q) * (S + 1) + k] = sum of row q over keys [0, k).
std::vector<double> row_prefix_sums(const AttentionTensor& attn) {
    const std::size_t s = attn.seq_len();
    std::vector<double> prefix(attn.layers() * attn.heads() * s * (s + 1), 0.0);
    std::size_t base = 0;
    for (std::size_t l = 0; l < attn.layers(); ++l) {
        for (std::size_t h = 0; h < attn.heads(); ++h) {
            for (std::size_t q = 0; q < s; ++q) {
                auto row = attn.row(l, h, q);
                double acc = 0.0;
                prefix[base] = 0.0;
                for (std::size_t k = 0; k < s; ++k) {
                    acc += row[k];
                    prefix[base + k + 1] = acc;
                }
                base += s + 1;
            }
        }
    }
    return prefix;
}

}  // namespace

std::vector<DelimiterScore> score_positions(const AttentionTensor& attn, std::span<const std::size_t> candidates,
                                            const ScoringConfig& cfg) {
    cfg.validate();
    const std::size_t s = attn.seq_len();
    for (std::size_t i : candidates) {
        if (i >= s) {
            throw Error(ErrorCode::CandidateOutOfRange, fmt::format("candidate {} outside sequence of length {}", i, s));
        }
    }

    const auto prefix = row_prefix_sums(attn);
    const std::size_t maps = attn.layers() * attn.heads();

    std::vector<DelimiterScore> out;
    out.reserve(candidates.size());
    for (std::size_t i : candidates) {
        DelimiterScore ds;
        ds.position = i;
        const std::size_t future_last = std::min(i + cfg.future_window, s - 1);
        if (future_last <= i || maps == 0) {
            ds.valid = false;
            ds.score = std::numeric_limits<double>::quiet_NaN();
            out.push_back(ds);
            continue;
        }
        const std::size_t overlap_first = i + 1 >= cfg.overlap_size ? i + 1 - cfg.overlap_size : 0;
        // D = [0, overlap_first) is exactly {0, ..., i-R}, empty when i < R.
        double overlap_total = 0.0;
        double drop_total = 0.0;
        for (std::size_t m = 0; m < maps; ++m) {
            for (std::size_t q = i + 1; q <= future_last; ++q) {
                const double* p = prefix.data() + (m * s + q) * (s + 1);
                overlap_total += p[i + 1] - p[overlap_first];
                drop_total += p[overlap_first];
            }
        }
        const double count = static_cast<double>(maps * (future_last - i));
        ds.overlap_mass = overlap_total / count;
        ds.drop_mass = drop_total / count;
        ds.score = ds.overlap_mass - cfg.penalty * ds.drop_mass;
        ds.valid = true;
        out.push_back(ds);
    }
    return out;
}

std::vector<std::size_t> candidate_positions(const TokenSequence& seq, const std::set<TokenId>& ids) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < seq.size(); ++i) {
        if (ids.count(seq[i]) != 0) {
            out.push_back(i);
        }
    }
    return out;
}

DelimiterTable build_table(std::span<const DelimiterScore> scores, const TokenSequence& token_at,
                           const TableOptions& options) {
    std::map<TokenId, std::pair<double, std::size_t>> sums;
    for (const auto& ds : scores) {
        if (ds.position >= token_at.size()) {
            throw Error(ErrorCode::CandidateOutOfRange,
                        fmt::format("scored position {} outside token sequence of length {}", ds.position,
                                    token_at.size()));
        }
        if (!ds.valid) {
            continue;
        }
        auto& [sum, n] = sums[token_at[ds.position]];
        sum += ds.score;
        ++n;
    }
    if (sums.empty()) {
        throw Error(ErrorCode::EmptyInput, "no valid scores to aggregate");
    }

    std::map<TokenId, double> means;
    for (const auto& [id, acc] : sums) {
        means.emplace(id, acc.first / static_cast<double>(acc.second));
    }

    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (const auto& [id, m] : means) {
        lo = std::min(lo, m);
        hi = std::max(hi, m);
    }

    std::map<TokenId, double> weights;
    for (const auto& [id, m] : means) {
        double w = 0.0;
        if (options.normalization == Normalization::minmax) {
            w = hi > lo ? (m - lo) / (hi - lo) : 1.0;
        } else {
            w = std::clamp(m, 0.0, 1.0);
        }
        if (options.round_to_tenth) {
            w = std::round(w * 10.0) / 10.0;
        }
        weights.emplace(id, std::clamp(w, 0.0, 1.0));
    }
    return DelimiterTable(std::move(weights));
}

}  // namespace dynsplit
