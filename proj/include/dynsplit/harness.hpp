// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dynsplit/core_types.hpp"
#include "dynsplit/dd_select.hpp"
#include "dynsplit/kv_pipeline.hpp"
#include "dynsplit/v2f.hpp"

namespace dynsplit::harness {

/// A run of tokens whose keys align with the query: key = strength * q/|q| + N(0, 0.01 I).
struct PlantedSpan {
    /// Relative position of the span start in [0, 1]; start = floor(depth * (S - length)).
    double depth = 0.5;
    double strength = 10.0;
    std::size_t length = 1;
};

struct SyntheticSpec {
    std::size_t seq_len = 1024;
    std::size_t head_dim = 16;
    std::size_t heads = 1;
    std::vector<PlantedSpan> planted;
    std::uint64_t seed = 0;

    void validate() const;
};

struct SyntheticInstance {
    KvCache cache;  // no plan attached
    HeadVectors query;
    std::vector<Span> planted;
};

/// Filler keys and values ~ N(0, I_d), one N(0, I_d) query per head, then planted spans.
/// Bit-identical for identical specs.
SyntheticInstance gen_synthetic(const SyntheticSpec& spec);

/// Queries drifting from `start`: q_{t+1} = q_t + drift * N(0, I). The first query is `start`.
std::vector<HeadVectors> random_walk_queries(const HeadVectors& start, std::size_t steps, double drift, Rng& rng);

/// Synthetic token stream of length `seq_len`: filler ids with sprinkled table delimiters,
/// planted span interiors kept delimiter-free, and the table's strongest delimiter placed on
/// the last token before each span and on each span's last token.
TokenSequence passkey_token_stream(std::size_t seq_len, std::span<const Span> planted, const DelimiterTable& table,
                                   Rng& rng);

enum class PlanSource { fixed, ddselect };

std::string_view label(PlanSource source);
std::string_view label(DigestVariant variant);

struct CacheShape {
    std::size_t heads = 0;
    std::size_t seq_len = 0;
    std::size_t head_dim = 0;
    std::size_t block_count = 0;
};

struct MemoryAccount {
    std::uint64_t resident_bytes_full = 0;
    std::uint64_t resident_bytes_compressed = 0;
    std::uint64_t digest_overhead_bytes = 0;
};

/// full = 2 H S d b; compressed = 2 H min(budget, S) d b + digests, with digests =
/// H * blocks * 2 d b (minmax) or H * blocks * d b (mean), b = bytes per element.
MemoryAccount account_memory(const CacheShape& shape, std::size_t token_budget, DigestVariant variant,
                             std::size_t bytes_per_elem = 4);
MemoryAccount account_memory(const KvCache& cache, std::size_t token_budget, std::size_t bytes_per_elem = 4);

struct RunMetrics {
    std::size_t budget = 0;
    /// |selected ∩ dense top-budget tokens| / min(budget, S), averaged over heads.
    double recall_at_budget = 0.0;
    /// Dense attention mass falling on the selected tokens, averaged over heads.
    double mass_recall = 0.0;
    /// Every planted token selected on every head.
    bool passkey_hit = false;
    double kv_usage_rate = 0.0;
    std::uint64_t digest_overhead_bytes = 0;
    std::uint64_t resident_bytes_full = 0;
    std::uint64_t resident_bytes_compressed = 0;
};

/// Tokens with the highest dense attention weight for one head (ties to the lower index), ascending.
std::vector<std::size_t> dense_top_tokens(std::span<const double> query, const Matrix& keys, std::size_t budget,
                                          double scale);

/// Dense softmax weights for one head.
std::vector<double> dense_weights(std::span<const double> query, const Matrix& keys, double scale);

/// Metrics of one selection against the dense oracle of `instance`. The cache must carry a plan.
RunMetrics measure_selection(const SyntheticInstance& instance, const KvCache& cache, const SelectionResult& selection,
                             std::size_t bytes_per_elem = 4);

struct PasskeyOptions {
    SegmentConfig segment{32, 14, 0.5, BoundarySide::after};
    DigestVariant variant = DigestVariant::minmax;
    DelimiterTable table = reference_delimiter_table();
    SelectOptions select;
    std::size_t bytes_per_elem = 4;
};

/// Builds the requested plan over `spec`'s synthetic cache and measures one selection per budget.
std::vector<RunMetrics> run_passkey(const SyntheticSpec& spec, PlanSource plan_source,
                                    std::span<const std::size_t> budgets, const PasskeyOptions& options = {});

/// Segmentation plan for an instance: fixed intervals of C, or DD-Select over passkey_token_stream.
SegmentPlan build_plan(const SyntheticInstance& instance, PlanSource plan_source, const PasskeyOptions& options,
                       std::uint64_t stream_seed);

struct PasskeySweepConfig {
    std::size_t seeds = 100;
    std::uint64_t first_seed = 0;
    std::size_t seq_len = 10240;
    std::size_t heads = 4;
    std::size_t head_dim = 16;
    double strength = 10.0;
    std::size_t span_length = 8;
    PlanSource plan = PlanSource::ddselect;
    std::vector<std::size_t> budgets = {36, 64, 128, 256, 512};
    PasskeyOptions options;
};

struct PasskeySweepRow {
    std::size_t budget = 0;
    double hit_rate = 0.0;
    double mean_recall = 0.0;
};

/// One planted span per seed at a seed-derived depth; hit rate and recall per budget.
std::vector<PasskeySweepRow> run_passkey_sweep(const PasskeySweepConfig& config);

/// Seed of the token stream that DD-Select segments for workload `seed`.
std::uint64_t stream_seed(std::uint64_t seed);
/// Seed of the decode-query random walk for workload `seed`.
std::uint64_t query_seed(std::uint64_t seed);

/// Depth in [0, 1) assigned to the planted span of `seed` by the sweeps.
double seed_depth(std::uint64_t seed);

struct BoundaryCorpusEntry {
    TokenSequence tokens;
    /// Interior cut positions (block ends other than L), ascending.
    std::vector<std::size_t> boundaries;
};

struct CorpusOptions {
    std::size_t sequences = 20;
    std::size_t length = 2048;
    /// Lower-weight delimiters placed in every decision window.
    std::size_t distractors = 2;
    /// Minimum distance between a distractor and the true boundary delimiter.
    std::size_t min_separation = 3;
    /// Use one delimiter id for boundaries and distractors alike.
    bool single_type = false;
};

/// Sequences whose true cuts sit on the table's highest-weight delimiters, one per decision window of
/// `cfg`, with lower-weight distractors nearby. Segmenting with mix = 1 recovers them exactly as long
/// as consecutive windows cannot overlap (3 * delta < C + 2).
std::vector<BoundaryCorpusEntry> generate_boundary_corpus(const DelimiterTable& table, const SegmentConfig& cfg,
                                                          const CorpusOptions& options, Rng& rng);

/// Interior cut positions of a plan.
std::vector<std::size_t> plan_boundaries(const SegmentPlan& plan);

struct BoundaryCounts {
    std::size_t matched = 0;
    std::size_t predicted = 0;
    std::size_t truth = 0;

    double f1() const;
};

/// One-to-one matching of predicted to true cuts within ±tolerance positions.
BoundaryCounts match_boundaries(std::span<const std::size_t> predicted, std::span<const std::size_t> truth,
                                std::size_t tolerance = 2);

struct ReversalResult {
    double f1_normal = 0.0;
    double f1_reversed = 0.0;
};

/// Boundary F1 (pooled over the corpus) of segmenting with `table` and with table.reversed().
ReversalResult run_reversal_ablation(std::span<const BoundaryCorpusEntry> corpus, const DelimiterTable& table,
                                     const SegmentConfig& cfg, std::size_t tolerance = 2);

/// Mean of run_reversal_ablation over `seeds` independently generated corpora.
ReversalResult run_reversal_sweep(const DelimiterTable& table, const SegmentConfig& cfg, const CorpusOptions& corpus,
                                  std::size_t seeds, std::uint64_t first_seed = 0, std::size_t tolerance = 2);

struct BenchConfig {
    std::size_t seeds = 3;
    std::uint64_t first_seed = 0;
    std::size_t seq_len = 4096;
    std::size_t heads = 4;
    std::size_t head_dim = 16;
    std::size_t chunk = 32;
    std::size_t delta = 14;
    double mix = 0.5;
    std::vector<std::size_t> budgets = {36, 64, 128, 256, 512};
    std::size_t steps = 16;
    double drift = 0.05;
    /// Planted span per seed; its depth is drawn from the seed.
    double strength = 10.0;
    std::size_t span_length = 8;
    std::size_t bytes_per_elem = 4;
    std::size_t threads = 1;
};

inline constexpr std::string_view kBenchCsvHeader =
    "seed,S,H,d,C,delta,mix,variant,plan,budget,recall,hit,fresh_loads,reused_loads,resident_full,"
    "resident_compressed";

/// Sweeps budget x plan source x digest variant for each seed and returns the CSV text,
/// rows ordered by (seed, plan, variant, budget) whatever the thread count.
std::string run_bench(const BenchConfig& config);

}  // namespace dynsplit::harness
