// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>

#include "dynsplit/harness.hpp"
#include "test_support.hpp"

using namespace dynsplit;
using namespace dynsplit::harness;

namespace {

SyntheticSpec one_span(std::size_t s, std::size_t heads, double depth, double strength, std::size_t length,
                       std::uint64_t seed) {
    SyntheticSpec spec;
    spec.seq_len = s;
    spec.head_dim = 16;
    spec.heads = heads;
    spec.planted = {PlantedSpan{depth, strength, length}};
    spec.seed = seed;
    return spec;
}

}  // namespace

TEST_CASE("synthetic spec validation") {
    auto spec = one_span(100, 1, 0.5, 10.0, 8, 0);
    CHECK_NOTHROW(spec.validate());
    spec.planted[0].depth = 1.5;
    CHECK_THROWS_AS(spec.validate(), Error);
    spec = one_span(4, 1, 0.5, 10.0, 8, 0);
    CHECK_THROWS_AS(spec.validate(), Error);
}

TEST_CASE("strength 10 makes the planted token the dense top-1") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto inst = gen_synthetic(one_span(1024, 1, seed_depth(seed), 10.0, 1, seed));
        const std::size_t planted = inst.planted[0].start;
        auto top = dense_top_tokens(inst.query[0], inst.cache.keys(0), 1, 0.25);
        REQUIRE(top.size() == 1);
        CHECK(top[0] == planted);
    }
}

TEST_CASE("strength 0 plants nothing the block selector can see") {
    // Probability that the planted position lands in a budget-64 selection over 32-token fixed
    // blocks; by symmetry it should be close to 64 / 1024.
    const std::size_t seeds = 800;
    std::size_t hits = 0;
    for (std::uint64_t seed = 0; seed < seeds; ++seed) {
        auto inst = gen_synthetic(one_span(1024, 1, seed_depth(seed), 0.0, 1, seed));
        inst.cache.attach_plan(SegmentPlan::fixed(1024, 32), DigestVariant::minmax);
        auto sel = select_step({inst.query, inst.cache, 64});
        auto m = measure_selection(inst, inst.cache, sel);
        hits += m.passkey_hit ? 1 : 0;
    }
    const double rate = static_cast<double>(hits) / seeds;
    MESSAGE("c = 0 hit rate " << rate);
    CHECK(std::abs(rate - 64.0 / 1024.0) < 0.03);
}

TEST_CASE("same seed, same instance") {
    auto a = gen_synthetic(one_span(300, 2, 0.3, 5.0, 4, 77));
    auto b = gen_synthetic(one_span(300, 2, 0.3, 5.0, 4, 77));
    auto c = gen_synthetic(one_span(300, 2, 0.3, 5.0, 4, 78));
    CHECK(a.query == b.query);
    for (std::size_t h = 0; h < 2; ++h) {
        CHECK(a.cache.keys(h) == b.cache.keys(h));
        CHECK(a.cache.values(h) == b.cache.values(h));
    }
    CHECK(a.planted == b.planted);
    CHECK_FALSE(a.cache.keys(0) == c.cache.keys(0));
}

TEST_CASE("planted span placement") {
    auto inst = gen_synthetic(one_span(1000, 1, 0.5, 10.0, 8, 1));
    CHECK(inst.planted[0] == Span{496, 504});
    auto end = gen_synthetic(one_span(1000, 1, 1.0, 10.0, 8, 1));
    CHECK(end.planted[0] == Span{992, 1000});
}

TEST_CASE("passkey token stream frames the span with the strongest delimiter") {
    Rng rng(4);
    const auto table = reference_delimiter_table();
    const std::vector<Span> planted{{200, 208}};
    auto seq = passkey_token_stream(512, planted, table, rng);
    REQUIRE(seq.size() == 512);
    CHECK(table.weight(seq[199]) == 1.0);
    CHECK(table.weight(seq[207]) == 1.0);
    for (std::size_t t = 200; t < 207; ++t) {
        CHECK_FALSE(table.contains(seq[t]));
    }
}

TEST_CASE("budget >= S always hits") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        auto spec = one_span(512, 2, seed_depth(seed), 10.0, 8, seed);
        const std::vector<std::size_t> budgets{512, 600};
        for (auto source : {PlanSource::fixed, PlanSource::ddselect}) {
            for (const auto& m : run_passkey(spec, source, budgets)) {
                CHECK(m.passkey_hit);
                CHECK(m.recall_at_budget == 1.0);
                CHECK(m.mass_recall == doctest::Approx(1.0));
                CHECK(m.kv_usage_rate == 1.0);
            }
        }
    }
}

TEST_CASE("one block's worth of budget finds a span-aligned block") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto inst = gen_synthetic(one_span(1024, 4, seed_depth(seed), 10.0, 8, seed));
        const std::size_t start = inst.planted[0].start;
        std::vector<Span> spans;
        std::size_t pos = 0;
        if (start % 8 != 0) {
            spans.push_back({0, start % 8});
            pos = start % 8;
        }
        while (pos < 1024) {
            spans.push_back({pos, std::min<std::size_t>(pos + 8, 1024)});
            pos += 8;
        }
        inst.cache.attach_plan(SegmentPlan(spans, 8, 7), DigestVariant::minmax);
        auto sel = select_step({inst.query, inst.cache, 8});
        CHECK(measure_selection(inst, inst.cache, sel).passkey_hit);
    }
}

TEST_CASE("hit rate is non-decreasing in the budget") {
    PasskeySweepConfig cfg;
    cfg.seeds = 20;
    cfg.seq_len = 4096;
    for (auto plan : {PlanSource::fixed, PlanSource::ddselect}) {
        cfg.plan = plan;
        auto rows = run_passkey_sweep(cfg);
        REQUIRE(rows.size() == 5);
        for (std::size_t i = 1; i < rows.size(); ++i) {
            CHECK(rows[i].hit_rate >= rows[i - 1].hit_rate);
        }
        CHECK(rows.back().hit_rate == 1.0);
    }
}

TEST_CASE("mass recall grows along a budget sweep") {
    auto spec = one_span(2048, 4, 0.3, 10.0, 8, 5);
    const std::vector<std::size_t> budgets{16, 32, 64, 128, 256, 512, 1024, 2048};
    auto rows = run_passkey(spec, PlanSource::ddselect, budgets);
    for (std::size_t i = 1; i < rows.size(); ++i) {
        CHECK(rows[i].mass_recall >= rows[i - 1].mass_recall - 1e-12);
        CHECK(rows[i].kv_usage_rate > rows[i - 1].kv_usage_rate);
    }
}

TEST_CASE("memory accounting: full budget with no blocks") {
    auto m = account_memory(CacheShape{4, 1000, 16, 0}, 1000, DigestVariant::minmax);
    CHECK(m.resident_bytes_full == 2ULL * 4 * 1000 * 16 * 4);
    CHECK(m.digest_overhead_bytes == 0);
    CHECK(m.resident_bytes_compressed == m.resident_bytes_full);
}

TEST_CASE("memory accounting at a 0.1 usage rate") {
    // H=32, S=32768, d=128, fp32, C=64 fixed blocks, budget 3276.
    //   full       = 2 * 32 * 32768 * 128 * 4            = 1,073,741,824
    //   kept       = 2 * 32 * 3276 * 128 * 4             =   107,347,968
    //   blocks     = 32768 / 64                          =           512
    //   digests    = 32 * 512 * 2 * 128 * 4              =    16,777,216
    //   compressed = kept + digests                      =   124,125,184
    auto m = account_memory(CacheShape{32, 32768, 128, 512}, 3276, DigestVariant::minmax);
    CHECK(m.resident_bytes_full == 1073741824ULL);
    CHECK(m.digest_overhead_bytes == 16777216ULL);
    CHECK(m.resident_bytes_compressed == 124125184ULL);
    // 0.1 * full = 107,374,182.4 >= kept
    CHECK(static_cast<double>(m.resident_bytes_compressed) <=
          0.1 * static_cast<double>(m.resident_bytes_full) + static_cast<double>(m.digest_overhead_bytes));
    CHECK(static_cast<double>(m.resident_bytes_full) / static_cast<double>(m.resident_bytes_compressed) ==
          doctest::Approx(1073741824.0 / 124125184.0));
    auto mean = account_memory(CacheShape{32, 32768, 128, 512}, 3276, DigestVariant::mean);
    CHECK(mean.digest_overhead_bytes == 8388608ULL);
    auto half = account_memory(CacheShape{32, 32768, 128, 512}, 3276, DigestVariant::minmax, 2);
    CHECK(half.resident_bytes_full == 536870912ULL);
}

TEST_CASE("boundary matching") {
    const std::vector<std::size_t> truth{10, 50, 90};
    auto exact = match_boundaries(truth, truth);
    CHECK(exact.f1() == 1.0);
    const std::vector<std::size_t> near{12, 47, 200};
    auto c = match_boundaries(near, truth, 2);
    CHECK(c.matched == 1);
    CHECK(c.predicted == 3);
    CHECK(c.truth == 3);
    CHECK(c.f1() == doctest::Approx(1.0 / 3.0));
    // one prediction can claim only one truth
    const std::vector<std::size_t> crowded_truth{10, 11};
    const std::vector<std::size_t> one{10};
    CHECK(match_boundaries(one, crowded_truth).matched == 1);
    CHECK(match_boundaries({}, {}).f1() == 1.0);
}

TEST_CASE("plan boundaries are interior ends") {
    SegmentPlan plan({{0, 5}, {5, 9}, {9, 12}}, 5, 2);
    CHECK(plan_boundaries(plan) == std::vector<std::size_t>{5, 9});
}

TEST_CASE("reversal ablation on the planted-boundary corpus") {
    const auto table = reference_delimiter_table();
    const SegmentConfig cfg{64, 14, 1.0, BoundarySide::after};
    Rng rng(3);
    auto corpus = generate_boundary_corpus(table, cfg, {10, 2048, 2, 3, false}, rng);
    REQUIRE(corpus.size() == 10);
    for (const auto& entry : corpus) {
        CHECK(plan_boundaries(segment(entry.tokens, table, cfg)) == entry.boundaries);
    }
    auto r = run_reversal_ablation(corpus, table, cfg);
    CHECK(r.f1_normal == 1.0);
    CHECK(r.f1_reversed < r.f1_normal);
}

TEST_CASE("reversal is vacuous with a single delimiter type") {
    const auto table = reference_delimiter_table();
    const SegmentConfig cfg{64, 14, 1.0, BoundarySide::after};
    Rng rng(8);
    auto corpus = generate_boundary_corpus(table, cfg, {10, 2048, 2, 3, true}, rng);
    auto r = run_reversal_ablation(corpus, table, cfg);
    CHECK(r.f1_normal == r.f1_reversed);
}

TEST_CASE("bench output is deterministic and thread-count independent") {
    BenchConfig cfg;
    cfg.seeds = 2;
    cfg.seq_len = 1024;
    cfg.budgets = {36, 128};
    cfg.steps = 6;
    const auto a = run_bench(cfg);
    const auto b = run_bench(cfg);
    CHECK(a == b);
    cfg.threads = 3;
    CHECK(run_bench(cfg) == a);
    CHECK(a.rfind(std::string(kBenchCsvHeader) + "\n", 0) == 0);
    std::size_t lines = 0;
    for (char ch : a) {
        lines += ch == '\n' ? 1 : 0;
    }
    CHECK(lines == 1 + 2 * 2 * 2 * 2);
}
