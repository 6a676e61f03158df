// SPDX-License-Identifier: Apache-2.0

#include "dynsplit/core_types.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <fmt/format.h>

namespace dynsplit {

std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::InvalidArgument: return "InvalidArgument";
        case ErrorCode::RowNotNormalized: return "RowNotNormalized";
        case ErrorCode::NonCausalEntry: return "NonCausalEntry";
        case ErrorCode::NegativeEntry: return "NegativeEntry";
        case ErrorCode::CandidateOutOfRange: return "CandidateOutOfRange";
        case ErrorCode::EmptyInput: return "EmptyInput";
        case ErrorCode::EmptySequence: return "EmptySequence";
        case ErrorCode::PlanMismatch: return "PlanMismatch";
        case ErrorCode::PlanCoverageMismatch: return "PlanCoverageMismatch";
        case ErrorCode::DimensionMismatch: return "DimensionMismatch";
        case ErrorCode::EmptySelection: return "EmptySelection";
        case ErrorCode::ShapeMismatch: return "ShapeMismatch";
        case ErrorCode::Format: return "Format";
        case ErrorCode::Io: return "Io";
    }
    return "Unknown";
}

TokenSequence::TokenSequence(std::vector<TokenId> ids) : tokens(std::move(ids)) {
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i] < 0) {
            throw Error(ErrorCode::InvalidArgument, fmt::format("negative token id {} at position {}", tokens[i], i));
        }
    }
}

DelimiterTable::DelimiterTable(std::map<TokenId, double> entries) : m_entries(std::move(entries)) {
    for (const auto& [id, w] : m_entries) {
        if (id < 0) {
            throw Error(ErrorCode::InvalidArgument, fmt::format("negative token id {} in delimiter table", id));
        }
        if (!(w >= 0.0 && w <= 1.0)) {
            throw Error(ErrorCode::InvalidArgument, fmt::format("weight {} for token {} outside [0, 1]", w, id));
        }
    }
}

std::optional<double> DelimiterTable::weight(TokenId id) const {
    auto it = m_entries.find(id);
    if (it == m_entries.end()) {
        return std::nullopt;
    }
    return it->second;
}

DelimiterTable DelimiterTable::reversed() const {
    std::map<TokenId, double> flipped;
    for (const auto& [id, w] : m_entries) {
        flipped.emplace(id, 1.0 - w);
    }
    return DelimiterTable(std::move(flipped));
}

DelimiterTable reference_delimiter_table() {
    return DelimiterTable({
        {28723, 1.0},  // .
        {609, 1.0},    // !
        {28804, 0.9},  // ?
        {1101, 1.0},   // ...
        {28745, 0.7},  // ;
        {28747, 0.7},  // :
        {28725, 0.6},  // ,
        {28742, 0.5},  // '
        {28808, 0.9},  // "
        {28732, 0.5},  // (
        {557, 0.6},    // )
        {28792, 0.5},  // [
        {28793, 0.5},  // ]
    });
}

AttentionTensor::AttentionTensor(std::size_t layers, std::size_t heads, std::size_t seq_len)
    : AttentionTensor(layers, heads, seq_len, std::vector<double>(layers * heads * seq_len * seq_len, 0.0)) {}

AttentionTensor::AttentionTensor(std::size_t layers, std::size_t heads, std::size_t seq_len, std::vector<double> values)
    : m_layers(layers), m_heads(heads), m_seq_len(seq_len), m_values(std::move(values)) {
    if (m_values.size() != layers * heads * seq_len * seq_len) {
        throw Error(ErrorCode::ShapeMismatch,
                    fmt::format("attention tensor expects {} values, got {}", layers * heads * seq_len * seq_len,
                                m_values.size()));
    }
}

std::string AttentionIssue::describe() const {
    switch (code) {
        case ErrorCode::NonCausalEntry:
            return fmt::format("non-causal entry at l={} h={} q={} k={}", layer, head, query, key);
        case ErrorCode::NegativeEntry:
            return fmt::format("negative entry at l={} h={} q={} k={}", layer, head, query, key);
        case ErrorCode::RowNotNormalized:
            return fmt::format("row not normalized at l={} h={} q={}", layer, head, query);
        default:
            return std::string(to_string(code));
    }
}

std::optional<AttentionIssue> validate_attention(const AttentionTensor& attn) {
    const std::size_t s = attn.seq_len();
    for (std::size_t l = 0; l < attn.layers(); ++l) {
        for (std::size_t h = 0; h < attn.heads(); ++h) {
            for (std::size_t q = 0; q < s; ++q) {
                auto row = attn.row(l, h, q);
                double sum = 0.0;
                for (std::size_t k = 0; k < s; ++k) {
                    const double a = row[k];
                    if (!(a >= 0.0)) {
                        return AttentionIssue{ErrorCode::NegativeEntry, l, h, q, k};
                    }
                    if (k > q) {
                        if (a != 0.0) {
                            return AttentionIssue{ErrorCode::NonCausalEntry, l, h, q, k};
                        }
                    } else {
                        sum += a;
                    }
                }
                if (std::abs(sum - 1.0) > kRowSumTolerance) {
                    return AttentionIssue{ErrorCode::RowNotNormalized, l, h, q, 0};
                }
            }
        }
    }
    return std::nullopt;
}

void require_valid_attention(const AttentionTensor& attn) {
    if (auto issue = validate_attention(attn)) {
        throw Error(issue->code, issue->describe());
    }
}

std::optional<std::string> check_plan(std::span<const Span> spans, std::size_t chunk_size, std::size_t max_deviation) {
    std::size_t expected_start = 0;
    for (std::size_t i = 0; i < spans.size(); ++i) {
        const Span& s = spans[i];
        if (s.start != expected_start) {
            return fmt::format("span {} starts at {}, expected {}", i, s.start, expected_start);
        }
        if (s.end <= s.start) {
            return fmt::format("span {} is empty or inverted [{}, {})", i, s.start, s.end);
        }
        const bool is_final = i + 1 == spans.size();
        const std::size_t len = s.length();
        if (len > chunk_size + max_deviation) {
            return fmt::format("span {} length {} exceeds C + delta = {}", i, len, chunk_size + max_deviation);
        }
        if (!is_final && len + max_deviation < chunk_size) {
            return fmt::format("span {} length {} below C - delta = {}", i, len, chunk_size - max_deviation);
        }
        expected_start = s.end;
    }
    return std::nullopt;
}

SegmentPlan::SegmentPlan(std::vector<Span> spans, std::size_t chunk_size, std::size_t max_deviation)
    : m_spans(std::move(spans)), m_chunk_size(chunk_size), m_max_deviation(max_deviation) {
    if (chunk_size == 0 || max_deviation >= chunk_size) {
        throw Error(ErrorCode::InvalidArgument,
                    fmt::format("plan parameters need C >= 1 and delta < C (C={}, delta={})", chunk_size, max_deviation));
    }
    if (auto problem = check_plan(m_spans, chunk_size, max_deviation)) {
        throw Error(ErrorCode::InvalidArgument, *problem);
    }
}

SegmentPlan SegmentPlan::fixed(std::size_t length, std::size_t chunk_size) {
    if (chunk_size == 0) {
        throw Error(ErrorCode::InvalidArgument, "chunk size must be positive");
    }
    std::vector<Span> spans;
    for (std::size_t start = 0; start < length; start += chunk_size) {
        spans.push_back({start, std::min(start + chunk_size, length)});
    }
    return SegmentPlan(std::move(spans), chunk_size, 0);
}

std::size_t SegmentPlan::block_of(std::size_t pos) const {
    if (pos >= length()) {
        throw Error(ErrorCode::InvalidArgument, fmt::format("position {} outside plan of length {}", pos, length()));
    }
    auto it = std::upper_bound(m_spans.begin(), m_spans.end(), pos,
                               [](std::size_t p, const Span& s) { return p < s.end; });
    return static_cast<std::size_t>(it - m_spans.begin());
}

double Rng::uniform() {
    return static_cast<double>(m_engine() >> 11) * 0x1.0p-53;
}

std::uint64_t Rng::uniform_int(std::uint64_t n) {
    if (n == 0) {
        throw Error(ErrorCode::InvalidArgument, "uniform_int needs a positive bound");
    }
    // Rejection sampling keeps the draw unbiased for bounds that do not divide 2^64.
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x = 0;
    do {
        x = m_engine();
    } while (x >= limit);
    return x % n;
}

double Rng::normal() {
    if (m_spare_normal) {
        const double v = *m_spare_normal;
        m_spare_normal.reset();
        return v;
    }
    double u1 = 0.0;
    do {
        u1 = uniform();
    } while (u1 == 0.0);
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    m_spare_normal = radius * std::sin(theta);
    return radius * std::cos(theta);
}

}  // namespace dynsplit
