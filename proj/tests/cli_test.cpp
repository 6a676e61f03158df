// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dynsplit/cli.hpp"
#include "dynsplit/io.hpp"
#include "test_support.hpp"

using namespace dynsplit;

namespace {

const std::filesystem::path kFixtures = DYNSPLIT_FIXTURE_DIR;

struct RunResult {
    int code;
    std::string out;
    std::string err;
};

RunResult run(std::vector<std::string> args) {
    args.insert(args.begin(), "dynsplit");
    std::vector<const char*> argv;
    for (const auto& a : args) {
        argv.push_back(a.c_str());
    }
    std::ostringstream out;
    std::ostringstream err;
    const int code = cli_main(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::filesystem::path scratch(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / "dynsplit_cli_test";
    std::filesystem::create_directories(dir);
    return dir / name;
}

}  // namespace

TEST_CASE("no subcommand is a usage error") {
    auto r = run({});
    CHECK(r.code == 2);
    CHECK(r.err.find("Usage") != std::string::npos);
}

TEST_CASE("unknown options are usage errors") {
    CHECK(run({"segment", "--bogus"}).code == 2);
    CHECK(run({"frobnicate"}).code == 2);
}

TEST_CASE("help exits 0") {
    auto r = run({"--help"});
    CHECK(r.code == 0);
    CHECK(r.out.find("segment") != std::string::npos);
}

TEST_CASE("segment reproduces the golden fixture") {
    auto r = run({"segment", "--tokens", (kFixtures / "tokens.jsonl").string(), "--weights",
                  (kFixtures / "weights.json").string(), "--chunk", "32", "--delta", "8", "--mix", "0.5"});
    CHECK(r.code == 0);
    CHECK(r.out == slurp(kFixtures / "segment_golden.jsonl"));
}

TEST_CASE("segment agrees with the in-tree oracle on the fixture") {
    auto seqs = io::load_token_stream(kFixtures / "tokens.jsonl");
    auto table = io::load_delimiter_table(kFixtures / "weights.json");
    std::istringstream golden(slurp(kFixtures / "segment_golden.jsonl"));
    std::string line;
    for (const auto& seq : seqs) {
        REQUIRE(std::getline(golden, line));
        std::string expect = "{\"spans\":[";
        auto spans = testing::oracle_segment(seq.tokens, table.entries(), 32, 8, 0.5, true);
        for (std::size_t i = 0; i < spans.size(); ++i) {
            expect += (i ? ",[" : "[") + std::to_string(spans[i].start) + "," + std::to_string(spans[i].end) + "]";
        }
        expect += "]}";
        CHECK(line == expect);
    }
}

TEST_CASE("missing input files are rejected while parsing") {
    auto r = run({"segment", "--tokens", "/nonexistent.jsonl", "--weights", (kFixtures / "weights.json").string(),
                  "--chunk", "32"});
    CHECK(r.code == 2);
}

TEST_CASE("malformed input is a runtime error") {
    const auto bad = scratch("bad.jsonl");
    {
        std::ofstream f(bad);
        f << "{\"tokens\": [1, \"x\"]}\n";
    }
    auto r = run({"segment", "--tokens", bad.string(), "--weights", (kFixtures / "weights.json").string(), "--chunk",
                  "32"});
    CHECK(r.code == 1);
    CHECK(r.err.find("token") != std::string::npos);
}

TEST_CASE("segment rejects an invalid delta") {
    auto r = run({"segment", "--tokens", (kFixtures / "tokens.jsonl").string(), "--weights",
                  (kFixtures / "weights.json").string(), "--chunk", "8", "--delta", "8"});
    CHECK(r.code != 0);
}

TEST_CASE("score-delimiters builds a table from an ATN1 file") {
    Rng rng(5);
    auto attn = testing::random_attention(2, 2, 48, rng);
    const auto attn_path = scratch("attn.atn1");
    io::save_attention(attn_path, attn);
    std::vector<TokenId> tokens(48, 300);
    tokens[5] = 7;
    tokens[20] = 9;
    tokens[33] = 7;
    tokens[47] = 9;  // last position: invalid score, dropped
    const auto tok_path = scratch("tokens.jsonl");
    {
        std::ofstream f(tok_path);
        std::vector<TokenSequence> seqs{TokenSequence(tokens)};
        io::write_token_stream(f, seqs);
    }
    const auto out_path = scratch("table.json");
    auto r = run({"score-delimiters", "--attn", attn_path.string(), "--tokens", tok_path.string(), "--candidates",
                  "[7, 9]", "--window", "4", "--overlap", "12", "--out", out_path.string()});
    REQUIRE(r.code == 0);
    auto table = io::load_delimiter_table(out_path);
    CHECK(table.size() == 2);
    // minmax over two ids always yields the endpoints
    const double a = table.weight(7).value();
    const double b = table.weight(9).value();
    CHECK(std::min(a, b) == 0.0);
    CHECK(std::max(a, b) == 1.0);
}

TEST_CASE("simulate streams per-step stats") {
    auto r = run({"simulate", "--seq-len", "512", "--steps", "4", "--budget", "64", "--seed", "3"});
    REQUIRE(r.code == 0);
    std::istringstream in(r.out);
    std::string line;
    int steps = 0;
    while (std::getline(in, line)) {
        ++steps;
        CHECK(line.find("\"step\":" + std::to_string(steps)) != std::string::npos);
    }
    CHECK(steps == 4);
}

TEST_CASE("bench emits identical CSV on repeated runs") {
    const std::vector<std::string> args{"bench", "--seeds", "3", "--seq-len", "1024", "--steps", "4"};
    auto a = run(args);
    auto b = run(args);
    REQUIRE(a.code == 0);
    CHECK(a.out == b.out);
    CHECK(a.out.rfind("seed,S,H,d,C,delta,mix,variant,plan,budget,recall,hit,", 0) == 0);
}

TEST_CASE("ablate-reversal reports a drop") {
    auto r = run({"ablate-reversal", "--seeds", "3", "--sequences", "4", "--length", "1024"});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("\"f1_normal\":1.0") != std::string::npos);
}
