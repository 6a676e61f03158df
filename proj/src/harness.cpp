// SPDX-License-Identifier: Apache-2.0

#include "dynsplit/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iterator>
#include <numeric>
#include <thread>

#include <fmt/format.h>

namespace dynsplit::harness {

namespace {

constexpr std::uint64_t kStreamSalt = 0x9E3779B97F4A7C15ull;
constexpr std::uint64_t kQuerySalt = 0xD1B54A32D192ED03ull;
constexpr std::uint64_t kDepthSalt = 0x94D049BB133111EBull;
constexpr double kPlantNoiseStd = 0.1;  // N(0, 0.01 I)
constexpr TokenId kFillerFirst = 100;
constexpr TokenId kFillerLast = 500;  // exclusive; clear of every id in the reference table
constexpr double kDelimiterRate = 0.06;

double scale_for(std::size_t head_dim) {
    return 1.0 / std::sqrt(static_cast<double>(head_dim));
}

TokenId filler_id(Rng& rng, const DelimiterTable& table) {
    for (;;) {
        const TokenId id = kFillerFirst + static_cast<TokenId>(rng.uniform_int(kFillerLast - kFillerFirst));
        if (!table.contains(id)) {
            return id;
        }
    }
}

TokenId strongest_delimiter(const DelimiterTable& table) {
    TokenId best = table.entries().begin()->first;
    double best_w = -1.0;
    for (const auto& [id, w] : table.entries()) {
        if (w > best_w) {
            best = id;
            best_w = w;
        }
    }
    return best;
}

}  // namespace

void SyntheticSpec::validate() const {
    if (seq_len == 0 || head_dim == 0 || heads == 0) {
        throw Error(ErrorCode::InvalidArgument, "synthetic spec needs S, d, H >= 1");
    }
    for (const auto& p : planted) {
        if (!(p.depth >= 0.0 && p.depth <= 1.0) || !std::isfinite(p.strength) || p.strength < 0.0 ||
            p.length == 0 || p.length > seq_len) {
            throw Error(ErrorCode::InvalidArgument,
                        fmt::format("planted span (depth={}, strength={}, length={}) invalid for S={}", p.depth,
                                    p.strength, p.length, seq_len));
        }
    }
}

SyntheticInstance gen_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    const std::size_t s = spec.seq_len;
    const std::size_t d = spec.head_dim;

    HeadVectors query(spec.heads, std::vector<double>(d));
    for (auto& q : query) {
        for (double& v : q) {
            v = rng.normal();
        }
    }
    std::vector<Matrix> keys;
    std::vector<Matrix> values;
    for (std::size_t h = 0; h < spec.heads; ++h) {
        Matrix k(s, d);
        Matrix v(s, d);
        for (std::size_t t = 0; t < s; ++t) {
            for (std::size_t j = 0; j < d; ++j) {
                k(t, j) = rng.normal();
            }
        }
        for (std::size_t t = 0; t < s; ++t) {
            for (std::size_t j = 0; j < d; ++j) {
                v(t, j) = rng.normal();
            }
        }
        keys.push_back(std::move(k));
        values.push_back(std::move(v));
    }

    std::vector<Span> planted;
    for (const auto& p : spec.planted) {
        const auto start = static_cast<std::size_t>(std::floor(p.depth * static_cast<double>(s - p.length)));
        const Span span{start, start + p.length};
        planted.push_back(span);
        for (std::size_t h = 0; h < spec.heads; ++h) {
            double norm = 0.0;
            for (double v : query[h]) {
                norm += v * v;
            }
            norm = std::sqrt(norm);
            for (std::size_t t = span.start; t < span.end; ++t) {
                for (std::size_t j = 0; j < d; ++j) {
                    const double dir = norm > 0.0 ? query[h][j] / norm : 0.0;
                    keys[h](t, j) = p.strength * dir + kPlantNoiseStd * rng.normal();
                }
            }
        }
    }
    return SyntheticInstance{KvCache(std::move(keys), std::move(values)), std::move(query), std::move(planted)};
}

std::vector<HeadVectors> random_walk_queries(const HeadVectors& start, std::size_t steps, double drift, Rng& rng) {
    std::vector<HeadVectors> out;
    out.reserve(steps);
    HeadVectors q = start;
    for (std::size_t i = 0; i < steps; ++i) {
        if (i > 0) {
            for (auto& head : q) {
                for (double& v : head) {
                    v += drift * rng.normal();
                }
            }
        }
        out.push_back(q);
    }
    return out;
}

TokenSequence passkey_token_stream(std::size_t seq_len, std::span<const Span> planted, const DelimiterTable& table,
                                   Rng& rng) {
    if (table.empty()) {
        throw Error(ErrorCode::InvalidArgument, "passkey token stream needs a non-empty delimiter table");
    }
    std::vector<TokenId> ids;
    ids.reserve(table.size());
    for (const auto& [id, w] : table.entries()) {
        ids.push_back(id);
    }
    std::vector<TokenId> tokens(seq_len);
    for (auto& t : tokens) {
        if (rng.uniform() < kDelimiterRate) {
            t = ids[rng.uniform_int(ids.size())];
        } else {
            t = filler_id(rng, table);
        }
    }
    const TokenId marker = strongest_delimiter(table);
    for (const Span& span : planted) {
        for (std::size_t t = span.start; t < span.end; ++t) {
            if (table.contains(tokens[t])) {
                tokens[t] = filler_id(rng, table);
            }
        }
        if (span.start > 0) {
            tokens[span.start - 1] = marker;
        }
        tokens[span.end - 1] = marker;
    }
    return TokenSequence(std::move(tokens));
}

std::string_view label(PlanSource source) {
    return source == PlanSource::fixed ? "fixed" : "ddselect";
}

std::string_view label(DigestVariant variant) {
    return variant == DigestVariant::minmax ? "minmax" : "mean";
}

MemoryAccount account_memory(const CacheShape& shape, std::size_t token_budget, DigestVariant variant,
                             std::size_t bytes_per_elem) {
    const std::uint64_t h = shape.heads;
    const std::uint64_t d = shape.head_dim;
    const std::uint64_t b = bytes_per_elem;
    const std::uint64_t kept = std::min(token_budget, shape.seq_len);
    const std::uint64_t vectors_per_block = variant == DigestVariant::minmax ? 2 : 1;

    MemoryAccount acc;
    acc.resident_bytes_full = 2 * h * shape.seq_len * d * b;
    acc.digest_overhead_bytes = h * shape.block_count * vectors_per_block * d * b;
    acc.resident_bytes_compressed = 2 * h * kept * d * b + acc.digest_overhead_bytes;
    return acc;
}

MemoryAccount account_memory(const KvCache& cache, std::size_t token_budget, std::size_t bytes_per_elem) {
    const CacheShape shape{cache.heads(), cache.seq_len(), cache.head_dim(), cache.has_plan() ? cache.plan().size() : 0};
    return account_memory(shape, token_budget, cache.variant(), bytes_per_elem);
}

std::vector<double> dense_weights(std::span<const double> query, const Matrix& keys, double scale) {
    std::vector<double> w(keys.rows());
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < keys.rows(); ++t) {
        auto k = keys.row(t);
        double dot = 0.0;
        for (std::size_t j = 0; j < query.size(); ++j) {
            dot += query[j] * k[j];
        }
        w[t] = dot * scale;
        peak = std::max(peak, w[t]);
    }
    double total = 0.0;
    for (double& v : w) {
        v = std::exp(v - peak);
        total += v;
    }
    for (double& v : w) {
        v /= total;
    }
    return w;
}

std::vector<std::size_t> dense_top_tokens(std::span<const double> query, const Matrix& keys, std::size_t budget,
                                          double scale) {
    std::vector<double> logits(keys.rows());
    for (std::size_t t = 0; t < keys.rows(); ++t) {
        auto k = keys.row(t);
        double dot = 0.0;
        for (std::size_t j = 0; j < query.size(); ++j) {
            dot += query[j] * k[j];
        }
        logits[t] = dot * scale;
    }
    std::vector<std::size_t> order(keys.rows());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const std::size_t take = std::min(budget, order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(),
                      [&](std::size_t a, std::size_t b) {
                          if (logits[a] != logits[b]) {
                              return logits[a] > logits[b];
                          }
                          return a < b;
                      });
    order.resize(take);
    std::sort(order.begin(), order.end());
    return order;
}

RunMetrics measure_selection(const SyntheticInstance& instance, const KvCache& cache, const SelectionResult& selection,
                             std::size_t bytes_per_elem) {
    RunMetrics m;
    m.budget = selection.token_budget;
    const std::size_t s = cache.seq_len();
    const std::size_t kept = std::min(selection.token_budget, s);
    const double scale = scale_for(cache.head_dim());
    m.kv_usage_rate = s == 0 ? 0.0 : static_cast<double>(kept) / static_cast<double>(s);

    bool hit = true;
    double recall = 0.0;
    double mass = 0.0;
    for (std::size_t h = 0; h < cache.heads(); ++h) {
        const auto& sel = selection.tokens[h];
        const auto top = dense_top_tokens(instance.query[h], cache.keys(h), kept, scale);
        std::vector<std::size_t> common;
        std::set_intersection(sel.begin(), sel.end(), top.begin(), top.end(), std::back_inserter(common));
        recall += top.empty() ? 1.0 : static_cast<double>(common.size()) / static_cast<double>(top.size());

        const auto w = dense_weights(instance.query[h], cache.keys(h), scale);
        double captured = 0.0;
        for (std::size_t t : sel) {
            captured += w[t];
        }
        mass += captured;

        for (const Span& span : instance.planted) {
            for (std::size_t t = span.start; t < span.end; ++t) {
                if (!std::binary_search(sel.begin(), sel.end(), t)) {
                    hit = false;
                }
            }
        }
    }
    const double heads = static_cast<double>(std::max<std::size_t>(cache.heads(), 1));
    m.recall_at_budget = recall / heads;
    m.mass_recall = mass / heads;
    m.passkey_hit = hit;

    const MemoryAccount acc = account_memory(cache, selection.token_budget, bytes_per_elem);
    m.digest_overhead_bytes = acc.digest_overhead_bytes;
    m.resident_bytes_full = acc.resident_bytes_full;
    m.resident_bytes_compressed = acc.resident_bytes_compressed;
    return m;
}

SegmentPlan build_plan(const SyntheticInstance& instance, PlanSource plan_source, const PasskeyOptions& options,
                       std::uint64_t stream_seed) {
    const std::size_t s = instance.cache.seq_len();
    if (plan_source == PlanSource::fixed) {
        return SegmentPlan::fixed(s, options.segment.chunk_size);
    }
    Rng rng(stream_seed);
    const TokenSequence stream = passkey_token_stream(s, instance.planted, options.table, rng);
    return segment(stream, options.table, options.segment);
}

std::vector<RunMetrics> run_passkey(const SyntheticSpec& spec, PlanSource plan_source,
                                    std::span<const std::size_t> budgets, const PasskeyOptions& options) {
    SyntheticInstance instance = gen_synthetic(spec);
    SegmentPlan plan = build_plan(instance, plan_source, options, stream_seed(spec.seed));
    KvCache& cache = instance.cache;
    cache.attach_plan(std::move(plan), options.variant);

    std::vector<RunMetrics> out;
    out.reserve(budgets.size());
    for (std::size_t budget : budgets) {
        const SelectionResult sel = select_step({instance.query, cache, budget}, options.select);
        out.push_back(measure_selection(instance, cache, sel, options.bytes_per_elem));
    }
    return out;
}

std::uint64_t stream_seed(std::uint64_t seed) {
    return seed ^ kStreamSalt;
}

std::uint64_t query_seed(std::uint64_t seed) {
    return seed ^ kQuerySalt;
}

double seed_depth(std::uint64_t seed) {
    Rng rng(seed ^ kDepthSalt);
    return rng.uniform();
}

std::vector<PasskeySweepRow> run_passkey_sweep(const PasskeySweepConfig& config) {
    std::vector<PasskeySweepRow> rows(config.budgets.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        rows[i].budget = config.budgets[i];
    }
    for (std::size_t n = 0; n < config.seeds; ++n) {
        SyntheticSpec spec;
        spec.seq_len = config.seq_len;
        spec.heads = config.heads;
        spec.head_dim = config.head_dim;
        spec.seed = config.first_seed + n;
        spec.planted.push_back({seed_depth(spec.seed), config.strength, config.span_length});
        const auto metrics = run_passkey(spec, config.plan, config.budgets, config.options);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            rows[i].hit_rate += metrics[i].passkey_hit ? 1.0 : 0.0;
            rows[i].mean_recall += metrics[i].recall_at_budget;
        }
    }
    if (config.seeds > 0) {
        for (auto& r : rows) {
            r.hit_rate /= static_cast<double>(config.seeds);
            r.mean_recall /= static_cast<double>(config.seeds);
        }
    }
    return rows;
}

std::vector<BoundaryCorpusEntry> generate_boundary_corpus(const DelimiterTable& table, const SegmentConfig& cfg,
                                                          const CorpusOptions& options, Rng& rng) {
    cfg.validate();
    if (table.empty()) {
        throw Error(ErrorCode::InvalidArgument, "boundary corpus needs a non-empty delimiter table");
    }
    double top_w = -1.0;
    for (const auto& [id, w] : table.entries()) {
        top_w = std::max(top_w, w);
    }
    std::vector<TokenId> strong;
    std::vector<TokenId> weak;
    for (const auto& [id, w] : table.entries()) {
        (w == top_w ? strong : weak).push_back(id);
    }
    if (options.single_type) {
        weak.assign(1, strong.front());
        strong.assign(1, strong.front());
    } else if (weak.empty() && options.distractors > 0) {
        throw Error(ErrorCode::InvalidArgument, "distractors need a delimiter weaker than the strongest one");
    }

    const bool after = cfg.boundary_side == BoundarySide::after;
    const std::size_t c = cfg.chunk_size;
    const std::size_t delta = cfg.max_deviation;

    std::vector<BoundaryCorpusEntry> corpus;
    corpus.reserve(options.sequences);
    for (std::size_t n = 0; n < options.sequences; ++n) {
        std::vector<TokenId> tokens(options.length);
        for (auto& t : tokens) {
            t = filler_id(rng, table);
        }
        BoundaryCorpusEntry entry;
        std::size_t start = 0;
        while (start + c < options.length) {
            const std::size_t target = start + c;
            const std::size_t lo = std::max(target - delta, start + 1);
            const std::size_t hi = std::min(after ? target + delta - 1 : target + delta, options.length - 1);
            if (hi < lo) {
                // No decision window: the block falls back to the target end.
                entry.boundaries.push_back(target);
                start = target;
                continue;
            }
            const std::size_t window = hi - lo + 1;
            const std::size_t pos = lo + rng.uniform_int(window);
            tokens[pos] = strong[rng.uniform_int(strong.size())];

            std::vector<std::size_t> free;
            for (std::size_t e = lo; e <= hi; ++e) {
                const std::size_t dist = e > pos ? e - pos : pos - e;
                if (dist >= options.min_separation) {
                    free.push_back(e);
                }
            }
            for (std::size_t k = 0; k < options.distractors && !free.empty(); ++k) {
                const std::size_t pick = rng.uniform_int(free.size());
                tokens[free[pick]] = weak[rng.uniform_int(weak.size())];
                free.erase(free.begin() + static_cast<std::ptrdiff_t>(pick));
            }
            const std::size_t cut = after ? pos + 1 : pos;
            if (cut >= options.length) {
                break;
            }
            entry.boundaries.push_back(cut);
            start = cut;
        }
        entry.tokens = TokenSequence(std::move(tokens));
        corpus.push_back(std::move(entry));
    }
    return corpus;
}

std::vector<std::size_t> plan_boundaries(const SegmentPlan& plan) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i + 1 < plan.size(); ++i) {
        out.push_back(plan[i].end);
    }
    return out;
}

double BoundaryCounts::f1() const {
    if (predicted == 0 && truth == 0) {
        return 1.0;
    }
    if (predicted == 0 || truth == 0 || matched == 0) {
        return 0.0;
    }
    const double precision = static_cast<double>(matched) / static_cast<double>(predicted);
    const double recall = static_cast<double>(matched) / static_cast<double>(truth);
    return 2.0 * precision * recall / (precision + recall);
}

BoundaryCounts match_boundaries(std::span<const std::size_t> predicted, std::span<const std::size_t> truth,
                                std::size_t tolerance) {
    BoundaryCounts counts{0, predicted.size(), truth.size()};
    std::size_t p = 0;
    for (std::size_t t : truth) {
        while (p < predicted.size() && predicted[p] + tolerance < t) {
            ++p;
        }
        if (p < predicted.size() && predicted[p] <= t + tolerance) {
            ++counts.matched;
            ++p;
        }
    }
    return counts;
}

ReversalResult run_reversal_ablation(std::span<const BoundaryCorpusEntry> corpus, const DelimiterTable& table,
                                     const SegmentConfig& cfg, std::size_t tolerance) {
    if (corpus.empty()) {
        throw Error(ErrorCode::EmptyInput, "reversal ablation needs a non-empty corpus");
    }
    const DelimiterTable reversed = table.reversed();
    BoundaryCounts normal;
    BoundaryCounts flipped;
    for (const auto& entry : corpus) {
        const auto a = match_boundaries(plan_boundaries(segment(entry.tokens, table, cfg)), entry.boundaries, tolerance);
        const auto b =
            match_boundaries(plan_boundaries(segment(entry.tokens, reversed, cfg)), entry.boundaries, tolerance);
        normal.matched += a.matched;
        normal.predicted += a.predicted;
        normal.truth += a.truth;
        flipped.matched += b.matched;
        flipped.predicted += b.predicted;
        flipped.truth += b.truth;
    }
    return {normal.f1(), flipped.f1()};
}

ReversalResult run_reversal_sweep(const DelimiterTable& table, const SegmentConfig& cfg, const CorpusOptions& corpus,
                                  std::size_t seeds, std::uint64_t first_seed, std::size_t tolerance) {
    ReversalResult mean;
    for (std::size_t n = 0; n < seeds; ++n) {
        Rng rng(first_seed + n);
        const auto entries = generate_boundary_corpus(table, cfg, corpus, rng);
        const auto r = run_reversal_ablation(entries, table, cfg, tolerance);
        mean.f1_normal += r.f1_normal;
        mean.f1_reversed += r.f1_reversed;
    }
    if (seeds > 0) {
        mean.f1_normal /= static_cast<double>(seeds);
        mean.f1_reversed /= static_cast<double>(seeds);
    }
    return mean;
}

namespace {

struct BenchCell {
    std::uint64_t seed;
    PlanSource plan;
    DigestVariant variant;
};

std::string run_bench_cell(const BenchConfig& config, const BenchCell& cell) {
    SyntheticSpec spec;
    spec.seq_len = config.seq_len;
    spec.head_dim = config.head_dim;
    spec.heads = config.heads;
    spec.seed = cell.seed;
    spec.planted.push_back({seed_depth(cell.seed), config.strength, config.span_length});
    SyntheticInstance instance = gen_synthetic(spec);

    Rng query_rng(query_seed(cell.seed));
    const auto queries = random_walk_queries(instance.query, config.steps, config.drift, query_rng);

    PasskeyOptions options;
    options.segment = SegmentConfig{config.chunk, config.delta, config.mix, BoundarySide::after};
    options.variant = cell.variant;
    options.bytes_per_elem = config.bytes_per_elem;
    SegmentPlan plan = build_plan(instance, cell.plan, options, stream_seed(cell.seed));
    const std::size_t plan_c = plan.chunk_size();
    const std::size_t plan_delta = plan.max_deviation();
    instance.cache.attach_plan(std::move(plan), cell.variant);

    std::string rows;
    for (std::size_t budget : config.budgets) {
        const SelectionResult sel = select_step({instance.query, instance.cache, budget});
        const RunMetrics m = measure_selection(instance, instance.cache, sel, config.bytes_per_elem);
        const DecodeTrace trace = decode_loop(instance.cache, queries, budget, true);
        std::size_t fresh = 0;
        std::size_t reused = 0;
        for (const auto& st : trace.stats) {
            fresh += st.fresh;
            reused += st.reused;
        }
        rows += fmt::format("{},{},{},{},{},{},{},{},{},{},{:.6f},{},{},{},{},{}\n", cell.seed, config.seq_len,
                            config.heads, config.head_dim, plan_c, plan_delta, config.mix, label(cell.variant),
                            label(cell.plan), budget, m.recall_at_budget, m.passkey_hit ? 1 : 0, fresh, reused,
                            m.resident_bytes_full, m.resident_bytes_compressed);
    }
    return rows;
}

}  // namespace

std::string run_bench(const BenchConfig& config) {
    std::vector<BenchCell> cells;
    for (std::size_t i = 0; i < config.seeds; ++i) {
        for (PlanSource plan : {PlanSource::fixed, PlanSource::ddselect}) {
            for (DigestVariant variant : {DigestVariant::minmax, DigestVariant::mean}) {
                cells.push_back({config.first_seed + i, plan, variant});
            }
        }
    }

    std::vector<std::string> rows(cells.size());
    const std::size_t workers = std::max<std::size_t>(1, std::min(config.threads, cells.size()));
    if (workers == 1) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            rows[i] = run_bench_cell(config, cells[i]);
        }
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::exception_ptr> errors(workers);
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&, w] {
                try {
                    for (std::size_t i = next++; i < cells.size(); i = next++) {
                        rows[i] = run_bench_cell(config, cells[i]);
                    }
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
        }
        for (auto& t : pool) {
            t.join();
        }
        for (const auto& e : errors) {
            if (e) {
                std::rethrow_exception(e);
            }
        }
    }

    std::string csv(kBenchCsvHeader);
    csv += '\n';
    for (const auto& r : rows) {
        csv += r;
    }
    return csv;
}

}  // namespace dynsplit::harness
