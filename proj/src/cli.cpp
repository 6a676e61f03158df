// SPDX-License-Identifier: Apache-2.0

#include "dynsplit/cli.hpp"

#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "dynsplit/delimiter_scoring.hpp"
#include "dynsplit/dd_select.hpp"
#include "dynsplit/harness.hpp"
#include "dynsplit/io.hpp"
#include "dynsplit/kv_pipeline.hpp"

namespace dynsplit {

using nlohmann::json;

namespace {

const std::map<std::string, Normalization> kNormNames{{"minmax", Normalization::minmax},
                                                      {"clamp", Normalization::clamp}};
const std::map<std::string, BoundarySide> kSideNames{{"after", BoundarySide::after}, {"before", BoundarySide::before}};
const std::map<std::string, DigestVariant> kVariantNames{{"minmax", DigestVariant::minmax},
                                                         {"mean", DigestVariant::mean}};
const std::map<std::string, harness::PlanSource> kPlanNames{{"fixed", harness::PlanSource::fixed},
                                                            {"ddselect", harness::PlanSource::ddselect}};
const std::map<std::string, CutSide> kCutNames{{"head", CutSide::head}, {"tail", CutSide::tail}};
const std::map<std::string, TokenPool> kPoolNames{{"selected", TokenPool::selected_blocks},
                                                  {"global", TokenPool::all_blocks}};

/// Writes to --out when given, else to the tool's stdout.
class Sink {
public:
    Sink(const std::string& path, std::ostream& fallback) : m_out(&fallback) {
        if (!path.empty()) {
            m_file.open(path, std::ios::out | std::ios::binary);
            if (!m_file) {
                throw Error(ErrorCode::Io, fmt::format("cannot write {}", path));
            }
            m_out = &m_file;
        }
    }
    std::ostream& stream() { return *m_out; }

private:
    std::ofstream m_file;
    std::ostream* m_out;
};

std::set<TokenId> parse_candidate_ids(const std::string& arg) {
    json doc;
    try {
        if (!arg.empty() && arg.front() == '[') {
            doc = json::parse(arg);
        } else {
            std::ifstream in(arg);
            if (!in) {
                throw Error(ErrorCode::Io, fmt::format("cannot open {}", arg));
            }
            doc = json::parse(in);
        }
    } catch (const json::exception& e) {
        throw Error(ErrorCode::Format, fmt::format("candidate id list: {}", e.what()));
    }
    if (!doc.is_array()) {
        throw Error(ErrorCode::Format, "candidate id list must be a JSON array of token ids");
    }
    std::set<TokenId> ids;
    for (const auto& v : doc) {
        if (!v.is_number_integer()) {
            throw Error(ErrorCode::Format, "candidate ids must be integers");
        }
        ids.insert(v.get<TokenId>());
    }
    return ids;
}

struct ScoreArgs {
    std::string attn;
    std::string tokens;
    std::string candidates;
    ScoringConfig scoring;
    Normalization norm = Normalization::minmax;
    bool no_round = false;
    std::string out;
};

int run_score(const ScoreArgs& a, std::ostream& out) {
    const AttentionTensor attn = io::load_attention(a.attn);
    require_valid_attention(attn);
    const auto seqs = io::load_token_stream(a.tokens);
    if (seqs.empty()) {
        throw Error(ErrorCode::EmptyInput, "token stream is empty");
    }
    const TokenSequence& seq = seqs.front();
    if (seq.size() != attn.seq_len()) {
        throw Error(ErrorCode::ShapeMismatch,
                    fmt::format("token sequence has {} tokens, attention maps are {}x{}", seq.size(), attn.seq_len(),
                                attn.seq_len()));
    }
    const auto positions = candidate_positions(seq, parse_candidate_ids(a.candidates));
    const auto scores = score_positions(attn, positions, a.scoring);
    const auto table = build_table(scores, seq, {a.norm, !a.no_round});
    Sink sink(a.out, out);
    io::write_delimiter_table(sink.stream(), table);
    return 0;
}

struct SegmentArgs {
    std::string tokens;
    std::string weights;
    SegmentConfig cfg;
    std::string out;
};

int run_segment(const SegmentArgs& a, std::ostream& out) {
    const auto seqs = io::load_token_stream(a.tokens);
    const DelimiterTable table = io::load_delimiter_table(a.weights);
    Sink sink(a.out, out);
    for (const auto& seq : seqs) {
        const SegmentPlan plan = segment(seq, table, a.cfg);
        json spans = json::array();
        for (const Span& s : plan.spans()) {
            spans.push_back({s.start, s.end});
        }
        sink.stream() << json{{"spans", spans}}.dump() << '\n';
    }
    return 0;
}

struct WorkloadArgs {
    std::size_t seq_len = 4096;
    std::size_t heads = 4;
    std::size_t head_dim = 16;
    double strength = 10.0;
    std::size_t span_length = 8;
    std::size_t chunk = 32;
    std::size_t delta = 14;
    double mix = 0.5;
    std::string weights;
    DigestVariant variant = DigestVariant::minmax;
    harness::PlanSource plan = harness::PlanSource::ddselect;
};

void add_workload_options(CLI::App* app, WorkloadArgs& w) {
    app->add_option("--seq-len", w.seq_len, "Sequence length S")->capture_default_str()->check(CLI::PositiveNumber);
    app->add_option("--heads", w.heads, "Attention heads H")->capture_default_str()->check(CLI::PositiveNumber);
    app->add_option("--head-dim", w.head_dim, "Head dimension d")->capture_default_str()->check(CLI::PositiveNumber);
    app->add_option("--strength", w.strength, "Planted alignment strength c")->capture_default_str();
    app->add_option("--span-length", w.span_length, "Planted span length")->capture_default_str();
    app->add_option("--chunk", w.chunk, "Target block length C")->capture_default_str()->check(CLI::PositiveNumber);
    app->add_option("--delta", w.delta, "Maximum deviation from C")->capture_default_str();
    app->add_option("--mix", w.mix, "Delimiter weight vs proximity mix")->capture_default_str()->check(
        CLI::Range(0.0, 1.0));
    app->add_option("--weights", w.weights, "Delimiter table JSON (default: built-in reference table)");
    app->add_option("--variant", w.variant, "Digest variant")
        ->transform(CLI::CheckedTransformer(kVariantNames, CLI::ignore_case));
    app->add_option("--plan", w.plan, "Plan source")->transform(CLI::CheckedTransformer(kPlanNames, CLI::ignore_case));
}

harness::PasskeyOptions passkey_options(const WorkloadArgs& w) {
    harness::PasskeyOptions opts;
    opts.segment = SegmentConfig{w.chunk, w.delta, w.mix, BoundarySide::after};
    opts.segment.validate();
    opts.variant = w.variant;
    if (!w.weights.empty()) {
        opts.table = io::load_delimiter_table(w.weights);
    }
    return opts;
}

struct SimulateArgs {
    WorkloadArgs workload;
    std::size_t budget = 64;
    std::size_t steps = 32;
    double drift = 0.05;
    bool reuse = true;
    std::size_t keep_recent = 0;
    CutSide cut = CutSide::head;
    TokenPool pool = TokenPool::selected_blocks;
    std::size_t blocks = 0;
    std::uint64_t seed = 0;
    std::string out;
};

int run_simulate(const SimulateArgs& a, std::ostream& out) {
    const auto& w = a.workload;
    harness::SyntheticSpec spec;
    spec.seq_len = w.seq_len;
    spec.heads = w.heads;
    spec.head_dim = w.head_dim;
    spec.seed = a.seed;
    spec.planted.push_back({harness::seed_depth(a.seed), w.strength, w.span_length});
    harness::SyntheticInstance inst = harness::gen_synthetic(spec);

    auto opts = passkey_options(w);
    opts.select.keep_recent = a.keep_recent;
    opts.select.cut_side = a.cut;
    opts.select.pool = a.pool;
    if (a.blocks > 0) {
        opts.select.block_count = a.blocks;
    }
    SegmentPlan plan = harness::build_plan(inst, w.plan, opts, harness::stream_seed(a.seed));
    inst.cache.attach_plan(std::move(plan), w.variant);

    Rng rng(harness::query_seed(a.seed));
    const auto queries = harness::random_walk_queries(inst.query, a.steps, a.drift, rng);
    const DecodeTrace trace = decode_loop(inst.cache, queries, a.budget, a.reuse, opts.select);

    Sink sink(a.out, out);
    for (const auto& st : trace.stats) {
        sink.stream() << json{{"step", st.step}, {"fresh", st.fresh}, {"reused", st.reused},
                              {"blocks_scored", st.blocks_scored}}
                             .dump()
                      << '\n';
    }
    return 0;
}

struct PasskeyArgs {
    WorkloadArgs workload;
    std::size_t seeds = 100;
    std::uint64_t first_seed = 0;
    std::vector<std::size_t> budgets = {36, 64, 128, 256, 512};
    std::string out;
};

int run_passkey_cmd(const PasskeyArgs& a, std::ostream& out) {
    harness::PasskeySweepConfig cfg;
    cfg.seeds = a.seeds;
    cfg.first_seed = a.first_seed;
    cfg.seq_len = a.workload.seq_len;
    cfg.heads = a.workload.heads;
    cfg.head_dim = a.workload.head_dim;
    cfg.strength = a.workload.strength;
    cfg.span_length = a.workload.span_length;
    cfg.plan = a.workload.plan;
    cfg.budgets = a.budgets;
    cfg.options = passkey_options(a.workload);
    const auto rows = harness::run_passkey_sweep(cfg);

    Sink sink(a.out, out);
    for (const auto& r : rows) {
        sink.stream() << json{{"budget", r.budget},
                              {"kv_usage_rate", static_cast<double>(r.budget) / static_cast<double>(cfg.seq_len)},
                              {"hit_rate", r.hit_rate},
                              {"recall", r.mean_recall}}
                             .dump()
                      << '\n';
    }
    return 0;
}

struct BenchArgs {
    harness::BenchConfig cfg;
    std::string out;
};

int run_bench_cmd(const BenchArgs& a, std::ostream& out) {
    const std::string csv = harness::run_bench(a.cfg);
    Sink sink(a.out, out);
    sink.stream() << csv;
    return 0;
}

struct AblateArgs {
    std::size_t seeds = 50;
    std::uint64_t first_seed = 0;
    harness::CorpusOptions corpus;
    std::size_t chunk = 64;
    std::size_t delta = 14;
    double mix = 1.0;
    std::size_t tolerance = 2;
    std::string weights;
    std::string out;
};

int run_ablate(const AblateArgs& a, std::ostream& out) {
    const DelimiterTable table = a.weights.empty() ? reference_delimiter_table() : io::load_delimiter_table(a.weights);
    const SegmentConfig cfg{a.chunk, a.delta, a.mix, BoundarySide::after};
    cfg.validate();
    const auto r = harness::run_reversal_sweep(table, cfg, a.corpus, a.seeds, a.first_seed, a.tolerance);
    Sink sink(a.out, out);
    sink.stream() << json{{"seeds", a.seeds},
                          {"f1_normal", r.f1_normal},
                          {"f1_reversed", r.f1_reversed},
                          {"f1_drop", r.f1_normal - r.f1_reversed}}
                         .dump()
                  << '\n';
    return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"dynsplit: dynamic semantic segmentation and budgeted KV selection toolkit", "dynsplit"};
    app.require_subcommand(1);

    ScoreArgs score;
    auto* score_cmd = app.add_subcommand("score-delimiters", "Score delimiter importance from attention maps");
    score_cmd->add_option("--attn", score.attn, "ATN1 attention file")->required()->check(CLI::ExistingFile);
    score_cmd->add_option("--tokens", score.tokens, "Token stream JSONL (first line is scored)")
        ->required()
        ->check(CLI::ExistingFile);
    score_cmd->add_option("--candidates", score.candidates, "JSON list of candidate token ids (file or inline)")
        ->required();
    score_cmd->add_option("--window", score.scoring.future_window, "Future window W")->capture_default_str();
    score_cmd->add_option("--overlap", score.scoring.overlap_size, "Retained region R")->capture_default_str();
    score_cmd->add_option("--penalty", score.scoring.penalty, "Dropped-mass penalty")->capture_default_str();
    score_cmd->add_option("--norm", score.norm, "Normalization into [0, 1]")
        ->transform(CLI::CheckedTransformer(kNormNames, CLI::ignore_case));
    score_cmd->add_flag("--no-round", score.no_round, "Keep full precision instead of one decimal");
    score_cmd->add_option("--out", score.out, "Output path (default stdout)");

    SegmentArgs seg;
    auto* seg_cmd = app.add_subcommand("segment", "Segment token streams with DD-Select");
    seg_cmd->add_option("--tokens", seg.tokens, "Token stream JSONL")->required()->check(CLI::ExistingFile);
    seg_cmd->add_option("--weights", seg.weights, "Delimiter table JSON")->required()->check(CLI::ExistingFile);
    seg_cmd->add_option("--chunk", seg.cfg.chunk_size, "Target block length C")->required();
    seg_cmd->add_option("--delta", seg.cfg.max_deviation, "Maximum deviation")->capture_default_str();
    seg_cmd->add_option("--mix", seg.cfg.mix, "Delimiter weight vs proximity mix")->capture_default_str();
    seg_cmd->add_option("--boundary-side", seg.cfg.boundary_side, "Delimiter closes (after) or opens (before) a block")
        ->transform(CLI::CheckedTransformer(kSideNames, CLI::ignore_case));
    seg_cmd->add_option("--out", seg.out, "Output path (default stdout)");

    SimulateArgs sim;
    auto* sim_cmd = app.add_subcommand("simulate", "Run a synthetic decode loop and stream per-step load stats");
    add_workload_options(sim_cmd, sim.workload);
    sim_cmd->add_option("--budget", sim.budget, "Token budget per step")->capture_default_str()->check(
        CLI::PositiveNumber);
    sim_cmd->add_option("--steps", sim.steps, "Decode steps")->capture_default_str();
    sim_cmd->add_option("--drift", sim.drift, "Query random-walk step size")->capture_default_str();
    sim_cmd->add_flag("--reuse,!--no-reuse", sim.reuse, "Reuse KV across steps (default on)");
    sim_cmd->add_option("--keep-recent", sim.keep_recent, "Always include the last N tokens")->capture_default_str();
    sim_cmd->add_option("--cut-side", sim.cut, "Budget cut inside the marginal block")
        ->transform(CLI::CheckedTransformer(kCutNames, CLI::ignore_case));
    sim_cmd->add_option("--pool", sim.pool, "Token pool: selected blocks or all blocks")
        ->transform(CLI::CheckedTransformer(kPoolNames, CLI::ignore_case));
    sim_cmd->add_option("--blocks", sim.blocks, "Explicit block count k (0 = derive from budget)");
    sim_cmd->add_option("--seed", sim.seed, "Workload seed")->capture_default_str();
    sim_cmd->add_option("--out", sim.out, "Output path (default stdout)");

    PasskeyArgs pk;
    pk.workload.seq_len = 10240;
    auto* pk_cmd = app.add_subcommand("passkey", "Planted-span retrieval hit rate per budget");
    add_workload_options(pk_cmd, pk.workload);
    pk_cmd->add_option("--seeds", pk.seeds, "Number of seeds")->capture_default_str();
    pk_cmd->add_option("--first-seed", pk.first_seed, "First seed")->capture_default_str();
    pk_cmd->add_option("--budgets", pk.budgets, "Token budgets")->delimiter(',')->capture_default_str();
    pk_cmd->add_option("--out", pk.out, "Output path (default stdout)");

    BenchArgs bench;
    auto* bench_cmd = app.add_subcommand("bench", "Sweep budget x plan x digest variant and write CSV");
    bench_cmd->add_option("--seeds", bench.cfg.seeds, "Number of seeds")->capture_default_str();
    bench_cmd->add_option("--first-seed", bench.cfg.first_seed, "First seed")->capture_default_str();
    bench_cmd->add_option("--seq-len", bench.cfg.seq_len, "Sequence length S")->capture_default_str()->check(
        CLI::PositiveNumber);
    bench_cmd->add_option("--heads", bench.cfg.heads, "Attention heads H")->capture_default_str()->check(
        CLI::PositiveNumber);
    bench_cmd->add_option("--head-dim", bench.cfg.head_dim, "Head dimension d")->capture_default_str()->check(
        CLI::PositiveNumber);
    bench_cmd->add_option("--chunk", bench.cfg.chunk, "Target block length C")->capture_default_str();
    bench_cmd->add_option("--delta", bench.cfg.delta, "Maximum deviation")->capture_default_str();
    bench_cmd->add_option("--mix", bench.cfg.mix, "Delimiter weight vs proximity mix")->capture_default_str();
    bench_cmd->add_option("--budgets", bench.cfg.budgets, "Token budgets")->delimiter(',')->capture_default_str();
    bench_cmd->add_option("--steps", bench.cfg.steps, "Decode steps for load counters")->capture_default_str();
    bench_cmd->add_option("--drift", bench.cfg.drift, "Query random-walk step size")->capture_default_str();
    bench_cmd->add_option("--strength", bench.cfg.strength, "Planted alignment strength c")->capture_default_str();
    bench_cmd->add_option("--span-length", bench.cfg.span_length, "Planted span length")->capture_default_str();
    bench_cmd->add_option("--bytes-per-elem", bench.cfg.bytes_per_elem, "Bytes per stored K/V element")
        ->capture_default_str();
    bench_cmd->add_option("--threads", bench.cfg.threads, "Worker threads")->capture_default_str();
    bench_cmd->add_option("--out", bench.out, "CSV output path (default stdout)");

    AblateArgs ab;
    auto* ab_cmd = app.add_subcommand("ablate-reversal", "Boundary F1 with normal vs reversed delimiter weights");
    ab_cmd->add_option("--seeds", ab.seeds, "Number of corpora")->capture_default_str();
    ab_cmd->add_option("--first-seed", ab.first_seed, "First seed")->capture_default_str();
    ab_cmd->add_option("--sequences", ab.corpus.sequences, "Sequences per corpus")->capture_default_str();
    ab_cmd->add_option("--length", ab.corpus.length, "Tokens per sequence")->capture_default_str();
    ab_cmd->add_option("--distractors", ab.corpus.distractors, "Weaker delimiters per window")->capture_default_str();
    ab_cmd->add_option("--chunk", ab.chunk, "Target block length C")->capture_default_str();
    ab_cmd->add_option("--delta", ab.delta, "Maximum deviation")->capture_default_str();
    ab_cmd->add_option("--mix", ab.mix, "Delimiter weight vs proximity mix")->capture_default_str();
    ab_cmd->add_option("--tolerance", ab.tolerance, "Boundary match tolerance")->capture_default_str();
    ab_cmd->add_option("--weights", ab.weights, "Delimiter table JSON (default: built-in reference table)");
    ab_cmd->add_option("--out", ab.out, "Output path (default stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return 2;
    }

    try {
        if (*score_cmd) {
            return run_score(score, out);
        }
        if (*seg_cmd) {
            return run_segment(seg, out);
        }
        if (*sim_cmd) {
            return run_simulate(sim, out);
        }
        if (*pk_cmd) {
            return run_passkey_cmd(pk, out);
        }
        if (*bench_cmd) {
            return run_bench_cmd(bench, out);
        }
        if (*ab_cmd) {
            return run_ablate(ab, out);
        }
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    err << app.help();
    return 2;
}

}  // namespace dynsplit
