// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dynsplit/error.hpp"

namespace dynsplit {

using TokenId = std::int64_t;

/// Opaque token ids; the library never tokenizes text itself.
struct TokenSequence {
    std::vector<TokenId> tokens;

    TokenSequence() = default;
    explicit TokenSequence(std::vector<TokenId> ids);

    std::size_t size() const noexcept { return tokens.size(); }
    bool empty() const noexcept { return tokens.empty(); }
    TokenId operator[](std::size_t i) const { return tokens[i]; }

    friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

/// Token id -> importance weight in [0, 1].
class DelimiterTable {
public:
    DelimiterTable() = default;
    explicit DelimiterTable(std::map<TokenId, double> entries);

    std::optional<double> weight(TokenId id) const;
    bool contains(TokenId id) const { return m_entries.count(id) != 0; }
    std::size_t size() const noexcept { return m_entries.size(); }
    bool empty() const noexcept { return m_entries.empty(); }
    const std::map<TokenId, double>& entries() const noexcept { return m_entries; }

    /// Same ids with w -> 1 - w, which inverts the importance order.
    DelimiterTable reversed() const;

    friend bool operator==(const DelimiterTable&, const DelimiterTable&) = default;

private:
    std::map<TokenId, double> m_entries;
};

/// Example weights measured on Mistral-7B-Instruct-v0.2 token ids
/// (. ! ? ... ; : , ' " ( ) [ ]).
DelimiterTable reference_delimiter_table();

/// Causal attention probabilities A[l][h][q][k], stored row-major.
class AttentionTensor {
public:
    AttentionTensor() = default;
    AttentionTensor(std::size_t layers, std::size_t heads, std::size_t seq_len);
    AttentionTensor(std::size_t layers, std::size_t heads, std::size_t seq_len, std::vector<double> values);

    std::size_t layers() const noexcept { return m_layers; }
    std::size_t heads() const noexcept { return m_heads; }
    std::size_t seq_len() const noexcept { return m_seq_len; }

    double& at(std::size_t l, std::size_t h, std::size_t q, std::size_t k) { return m_values[index(l, h, q, k)]; }
    double at(std::size_t l, std::size_t h, std::size_t q, std::size_t k) const {
        return m_values[index(l, h, q, k)];
    }
    std::span<const double> row(std::size_t l, std::size_t h, std::size_t q) const {
        return {m_values.data() + index(l, h, q, 0), m_seq_len};
    }
    std::span<double> row(std::size_t l, std::size_t h, std::size_t q) {
        return {m_values.data() + index(l, h, q, 0), m_seq_len};
    }
    std::span<const double> values() const noexcept { return m_values; }

private:
    std::size_t index(std::size_t l, std::size_t h, std::size_t q, std::size_t k) const {
        return ((l * m_heads + h) * m_seq_len + q) * m_seq_len + k;
    }

    std::size_t m_layers = 0;
    std::size_t m_heads = 0;
    std::size_t m_seq_len = 0;
    std::vector<double> m_values;
};

struct AttentionIssue {
    ErrorCode code;
    std::size_t layer = 0;
    std::size_t head = 0;
    std::size_t query = 0;
    std::size_t key = 0;

    std::string describe() const;
};

inline constexpr double kRowSumTolerance = 1e-5;

/// Returns the first violated invariant in (l, h, q, k) order, or nullopt when the tensor is a valid
/// causal attention map. Within a row, entry checks (negative, non-causal) run before the row sum.
std::optional<AttentionIssue> validate_attention(const AttentionTensor& attn);

/// Throws Error with the issue's code when validate_attention reports one.
void require_valid_attention(const AttentionTensor& attn);

/// Dense row-major matrix of doubles; rows are token positions.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0) : m_rows(rows), m_cols(cols), m_data(rows * cols, fill) {}

    std::size_t rows() const noexcept { return m_rows; }
    std::size_t cols() const noexcept { return m_cols; }

    std::span<double> row(std::size_t r) { return {m_data.data() + r * m_cols, m_cols}; }
    std::span<const double> row(std::size_t r) const { return {m_data.data() + r * m_cols, m_cols}; }
    double& operator()(std::size_t r, std::size_t c) { return m_data[r * m_cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return m_data[r * m_cols + c]; }

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t m_rows = 0;
    std::size_t m_cols = 0;
    std::vector<double> m_data;
};

/// Half-open token range [start, end).
struct Span {
    std::size_t start = 0;
    std::size_t end = 0;

    std::size_t length() const noexcept { return end - start; }
    bool contains(std::size_t pos) const noexcept { return pos >= start && pos < end; }

    friend bool operator==(const Span&, const Span&) = default;
};

/// Gapless tiling of [0, L) into blocks. Non-final blocks obey the length law
/// C - delta <= len <= C + delta for the recorded chunk size C and deviation delta.
class SegmentPlan {
public:
    SegmentPlan() = default;
    SegmentPlan(std::vector<Span> spans, std::size_t chunk_size, std::size_t max_deviation);

    /// Fixed intervals of `chunk_size`, recorded with zero deviation.
    static SegmentPlan fixed(std::size_t length, std::size_t chunk_size);

    const std::vector<Span>& spans() const noexcept { return m_spans; }
    std::size_t size() const noexcept { return m_spans.size(); }
    bool empty() const noexcept { return m_spans.empty(); }
    const Span& operator[](std::size_t i) const { return m_spans[i]; }
    std::size_t length() const noexcept { return m_spans.empty() ? 0 : m_spans.back().end; }
    std::size_t chunk_size() const noexcept { return m_chunk_size; }
    std::size_t max_deviation() const noexcept { return m_max_deviation; }

    /// Index of the block containing `pos`.
    std::size_t block_of(std::size_t pos) const;

    friend bool operator==(const SegmentPlan&, const SegmentPlan&) = default;

private:
    std::vector<Span> m_spans;
    std::size_t m_chunk_size = 0;
    std::size_t m_max_deviation = 0;
};

/// Describes the first tiling or length-law violation in `spans`, if any.
std::optional<std::string> check_plan(std::span<const Span> spans, std::size_t chunk_size, std::size_t max_deviation);

/// Per-block key summary. Min/max vectors are filled for the minmax variant,
/// the mean vector for the mean variant.
struct BlockDigest {
    Span span;
    std::size_t head = 0;
    std::vector<double> key_max;
    std::vector<double> key_min;
    std::vector<double> key_mean;
};

struct SelectionResult {
    /// Per head, strictly ascending token indices.
    std::vector<std::vector<std::size_t>> tokens;
    /// Per head, one score per plan block.
    std::vector<std::vector<double>> block_scores;
    /// Per head, selected block indices (ascending).
    std::vector<std::vector<std::size_t>> blocks;
    /// Per head, set when the selected blocks held fewer tokens than the budget.
    std::vector<bool> short_of_budget;
    std::size_t token_budget = 0;

    std::size_t heads() const noexcept { return tokens.size(); }
};

/// Deterministic generator backed by std::mt19937_64, whose output sequence is fixed by the
/// C++ standard. Uniform and normal draws are derived here rather than through the
/// implementation-defined <random> distributions so streams match across toolchains.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : m_engine(seed) {}

    std::uint64_t next_u64() { return m_engine(); }
    /// Uniform on [0, 1) with 53 random bits.
    double uniform();
    /// Uniform integer in [0, n); n must be positive.
    std::uint64_t uniform_int(std::uint64_t n);
    /// Standard normal via Box-Muller.
    double normal();

private:
    std::mt19937_64 m_engine;
    std::optional<double> m_spare_normal;
};

}  // namespace dynsplit
