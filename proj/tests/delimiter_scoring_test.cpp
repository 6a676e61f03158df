// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <numeric>

#include "dynsplit/delimiter_scoring.hpp"
#include "test_support.hpp"

using namespace dynsplit;

namespace {

/// Every query puts all of its mass on position 0.
AttentionTensor sink_attention(std::size_t layers, std::size_t heads, std::size_t s) {
    AttentionTensor attn(layers, heads, s);
    for (std::size_t l = 0; l < layers; ++l) {
        for (std::size_t h = 0; h < heads; ++h) {
            for (std::size_t q = 0; q < s; ++q) {
                attn.at(l, h, q, 0) = 1.0;
            }
        }
    }
    return attn;
}

/// Stationary family: row q weights key k by exp(-(q - k) / tau) with a small per-entry jitter.
AttentionTensor stationary_attention(std::size_t s, double tau, double jitter, Rng& rng) {
    AttentionTensor attn(1, 2, s);
    for (std::size_t h = 0; h < 2; ++h) {
        for (std::size_t q = 0; q < s; ++q) {
            auto row = attn.row(0, h, q);
            double total = 0.0;
            for (std::size_t k = 0; k <= q; ++k) {
                row[k] = std::exp(-static_cast<double>(q - k) / tau) * (1.0 + jitter * rng.uniform());
                total += row[k];
            }
            for (std::size_t k = 0; k <= q; ++k) {
                row[k] /= total;
            }
        }
    }
    return attn;
}

}  // namespace

TEST_CASE("full mass on the retained region scores 1") {
    // Every future query attends to the candidate itself.
    AttentionTensor attn(1, 1, 40);
    for (std::size_t q = 0; q < 40; ++q) {
        attn.at(0, 0, q, std::min<std::size_t>(q, 10)) = 1.0;
    }
    auto s = score_positions(attn, std::vector<std::size_t>{10}, {8, 16, 1.0});
    REQUIRE(s.size() == 1);
    CHECK(s[0].valid);
    CHECK(s[0].score == 1.0);
    CHECK(s[0].drop_mass == 0.0);
}

TEST_CASE("full mass on the dropped region scores -penalty") {
    auto attn = sink_attention(2, 2, 200);
    ScoringConfig cfg;  // W 8, R 128, penalty 1
    auto s = score_positions(attn, std::vector<std::size_t>{150}, cfg);
    REQUIRE(s.size() == 1);
    CHECK(s[0].valid);
    CHECK(s[0].score == -1.0);
    CHECK(s[0].overlap_mass == 0.0);
    CHECK(s[0].drop_mass == 1.0);
}

TEST_CASE("position 0 is retained, not dropped, while i < R") {
    auto attn = sink_attention(1, 1, 50);
    auto s = score_positions(attn, std::vector<std::size_t>{10}, {8, 16, 1.0});
    CHECK(s[0].score == 1.0);
}

TEST_CASE("seed 42 example matches the brute-force oracle") {
    Rng rng(42);
    auto attn = testing::random_attention(2, 2, 64, rng);
    const std::vector<std::size_t> cands{8, 31, 60};
    const ScoringConfig cfg{8, 16, 1.0};
    auto got = score_positions(attn, cands, cfg);
    REQUIRE(got.size() == 3);
    for (std::size_t j = 0; j < cands.size(); ++j) {
        auto want = testing::brute_force_score(attn, cands[j], 8, 16, 1.0);
        CHECK(got[j].position == cands[j]);
        CHECK(got[j].valid == want.valid);
        CHECK(std::abs(got[j].score - want.score) <= 1e-9);
        CHECK(std::abs(got[j].overlap_mass - want.overlap) <= 1e-9);
        CHECK(std::abs(got[j].drop_mass - want.drop) <= 1e-9);
    }
}

TEST_CASE("oracle equivalence over random tensors") {
    Rng rng(2024);
    for (int trial = 0; trial < 60; ++trial) {
        const std::size_t s = 2 + rng.uniform_int(63);
        auto attn = testing::random_attention(1 + rng.uniform_int(3), 1 + rng.uniform_int(3), s, rng);
        const ScoringConfig cfg{1 + rng.uniform_int(12), 1 + rng.uniform_int(40), 3.0 * rng.uniform()};
        std::vector<std::size_t> cands(s);
        std::iota(cands.begin(), cands.end(), std::size_t{0});
        auto got = score_positions(attn, cands, cfg);
        for (std::size_t i = 0; i < s; ++i) {
            auto want = testing::brute_force_score(attn, i, cfg.future_window, cfg.overlap_size, cfg.penalty);
            REQUIRE(got[i].valid == want.valid);
            if (want.valid) {
                REQUIRE(std::abs(got[i].score - want.score) <= 1e-9);
            }
        }
    }
}

TEST_CASE("last position has an empty future window") {
    Rng rng(1);
    auto attn = testing::random_attention(1, 1, 10, rng);
    auto s = score_positions(attn, std::vector<std::size_t>{9}, {});
    CHECK_FALSE(s[0].valid);
    CHECK(std::isnan(s[0].score));
}

TEST_CASE("out-of-range candidates and bad configs") {
    Rng rng(1);
    auto attn = testing::random_attention(1, 1, 10, rng);
    CHECK_THROWS_AS(score_positions(attn, std::vector<std::size_t>{10}, {}), Error);
    try {
        score_positions(attn, std::vector<std::size_t>{10}, {});
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::CandidateOutOfRange);
    }
    CHECK_THROWS_AS(score_positions(attn, std::vector<std::size_t>{1}, {0, 16, 1.0}), Error);
    CHECK_THROWS_AS(score_positions(attn, std::vector<std::size_t>{1}, {8, 0, 1.0}), Error);
    CHECK_THROWS_AS(score_positions(attn, std::vector<std::size_t>{1}, {8, 16, -1.0}), Error);
}

TEST_CASE("score is non-increasing in the penalty") {
    Rng rng(8);
    for (int trial = 0; trial < 20; ++trial) {
        auto attn = testing::random_attention(2, 2, 48, rng);
        std::vector<std::size_t> cands{5, 20, 30, 40};
        std::vector<double> prev(cands.size(), std::numeric_limits<double>::infinity());
        for (double pen : {0.0, 0.5, 1.0, 2.0, 4.0}) {
            auto s = score_positions(attn, cands, {6, 10, pen});
            for (std::size_t j = 0; j < cands.size(); ++j) {
                if (s[j].drop_mass > 0.0) {
                    CHECK(s[j].score < prev[j]);
                } else {
                    CHECK(s[j].score <= prev[j]);
                }
                prev[j] = s[j].score;
            }
        }
    }
}

TEST_CASE("scores converge within 0.1 from W = 4 to W = 8 on stationary attention") {
    // Decay lengths of 24+ tokens. Measured maximum 0.095 at tau 24 near the sequence start.
    // Sharply local attention (tau <= 16) breaks the bound: future queries then look mostly at themselves.
    Rng rng(77);
    double worst = 0.0;
    for (double tau : {24.0, 32.0, 48.0, 64.0}) {
        auto attn = stationary_attention(160, tau, 0.2, rng);
        std::vector<std::size_t> cands;
        for (std::size_t i = 20; i < 150; i += 7) {
            cands.push_back(i);
        }
        auto short_w = score_positions(attn, cands, {4, 64, 1.0});
        auto long_w = score_positions(attn, cands, {8, 64, 1.0});
        for (std::size_t j = 0; j < cands.size(); ++j) {
            worst = std::max(worst, std::abs(short_w[j].score - long_w[j].score));
        }
    }
    MESSAGE("max |s(W=4) - s(W=8)| = " << worst);
    CHECK(worst <= 0.1);
}

TEST_CASE("candidate positions follow the id set") {
    TokenSequence seq({5, 1, 7, 1, 9});
    CHECK(candidate_positions(seq, {1, 9}) == std::vector<std::size_t>{1, 3, 4});
    CHECK(candidate_positions(seq, {}).empty());
}

TEST_CASE("build_table: singleton maps to 1.0") {
    TokenSequence seq({3, 4, 5});
    std::vector<DelimiterScore> scores{{1, -0.3, 0.1, 0.4, true}};
    auto t = build_table(scores, seq);
    CHECK(t.size() == 1);
    CHECK(t.weight(4) == 1.0);
}

TEST_CASE("build_table: minmax endpoints") {
    TokenSequence seq({10, 20, 10, 20, 30});
    std::vector<DelimiterScore> scores{
        {0, 0.1, 0, 0, true}, {2, 0.3, 0, 0, true},    // id 10 mean 0.2
        {1, 0.8, 0, 0, true}, {3, 0.8, 0, 0, true},    // id 20 mean 0.8
        {4, 99.0, 0, 0, false},                         // invalid, ignored
    };
    auto t = build_table(scores, seq);
    CHECK(t.size() == 2);
    CHECK(t.weight(10) == 0.0);
    CHECK(t.weight(20) == 1.0);
    CHECK_FALSE(t.contains(30));
}

TEST_CASE("build_table: clamp and rounding") {
    TokenSequence seq({1, 2, 3});
    std::vector<DelimiterScore> scores{{0, -0.4, 0, 0, true}, {1, 0.46, 0, 0, true}, {2, 1.7, 0, 0, true}};
    auto t = build_table(scores, seq, {Normalization::clamp, true});
    CHECK(t.weight(1) == 0.0);
    CHECK(t.weight(2) == 0.5);
    CHECK(t.weight(3) == 1.0);
    auto raw = build_table(scores, seq, {Normalization::clamp, false});
    CHECK(raw.weight(2) == 0.46);
}

TEST_CASE("build_table needs at least one valid score") {
    TokenSequence seq({1});
    std::vector<DelimiterScore> scores{{0, 0.0, 0, 0, false}};
    try {
        build_table(scores, seq);
        FAIL("expected EmptyInput");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::EmptyInput);
    }
}
