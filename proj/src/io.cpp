// SPDX-License-Identifier: Apache-2.0

#include "dynsplit/io.hpp"

#include <array>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include <fmt/format.h>
#include <json.hpp>

namespace dynsplit::io {

using nlohmann::json;

namespace {

constexpr std::array<char, 4> kAttentionMagic = {'A', 'T', 'N', '1'};

std::uint32_t read_u32_le(std::istream& in) {
    std::array<unsigned char, 4> b{};
    if (!in.read(reinterpret_cast<char*>(b.data()), 4)) {
        throw Error(ErrorCode::Format, "truncated ATN1 stream");
    }
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_u32_le(std::ostream& out, std::uint32_t v) {
    const std::array<char, 4> b = {static_cast<char>(v & 0xffu), static_cast<char>((v >> 8) & 0xffu),
                                   static_cast<char>((v >> 16) & 0xffu), static_cast<char>((v >> 24) & 0xffu)};
    out.write(b.data(), 4);
}

std::uint32_t checked_u32(std::size_t v, const char* what) {
    if (v > std::numeric_limits<std::uint32_t>::max()) {
        throw Error(ErrorCode::Format, fmt::format("{} {} does not fit in u32", what, v));
    }
    return static_cast<std::uint32_t>(v);
}

std::ifstream open_in(const std::filesystem::path& path, std::ios::openmode mode = std::ios::in) {
    std::ifstream in(path, mode);
    if (!in) {
        throw Error(ErrorCode::Io, fmt::format("cannot open {}", path.string()));
    }
    return in;
}

std::ofstream open_out(const std::filesystem::path& path, std::ios::openmode mode = std::ios::out) {
    std::ofstream out(path, mode);
    if (!out) {
        throw Error(ErrorCode::Io, fmt::format("cannot write {}", path.string()));
    }
    return out;
}

}  // namespace

std::vector<TokenSequence> read_token_stream(std::istream& in) {
    std::vector<TokenSequence> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        try {
            const json doc = json::parse(line);
            const auto& ids = doc.at("tokens");
            if (!ids.is_array()) {
                throw Error(ErrorCode::Format, "\"tokens\" is not an array");
            }
            std::vector<TokenId> tokens;
            tokens.reserve(ids.size());
            for (const auto& v : ids) {
                if (!v.is_number_integer()) {
                    throw Error(ErrorCode::Format, "token ids must be integers");
                }
                tokens.push_back(v.get<TokenId>());
            }
            out.emplace_back(std::move(tokens));
        } catch (const json::exception& e) {
            throw Error(ErrorCode::Format, fmt::format("token stream line {}: {}", line_no, e.what()));
        } catch (const Error& e) {
            throw Error(e.code(), fmt::format("token stream line {}: {}", line_no, e.what()));
        }
    }
    return out;
}

void write_token_stream(std::ostream& out, std::span<const TokenSequence> sequences) {
    for (const auto& seq : sequences) {
        out << json{{"tokens", seq.tokens}}.dump() << '\n';
    }
}

DelimiterTable read_delimiter_table(std::istream& in) {
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::Format, fmt::format("delimiter table: {}", e.what()));
    }
    if (!doc.is_object()) {
        throw Error(ErrorCode::Format, "delimiter table must be a JSON object");
    }
    std::map<TokenId, double> entries;
    for (const auto& [key, value] : doc.items()) {
        TokenId id = 0;
        const char* first = key.data();
        const char* last = key.data() + key.size();
        auto [ptr, ec] = std::from_chars(first, last, id);
        if (ec != std::errc{} || ptr != last || key.empty()) {
            throw Error(ErrorCode::Format, fmt::format("delimiter table key '{}' is not a token id", key));
        }
        if (!value.is_number()) {
            throw Error(ErrorCode::Format, fmt::format("weight for token {} is not a number", key));
        }
        if (!entries.emplace(id, value.get<double>()).second) {
            throw Error(ErrorCode::Format, fmt::format("duplicate token id {}", id));
        }
    }
    return DelimiterTable(std::move(entries));
}

void write_delimiter_table(std::ostream& out, const DelimiterTable& table) {
    // nlohmann::json orders object keys lexicographically; emit in numeric id order instead.
    out << '{';
    bool first = true;
    for (const auto& [id, w] : table.entries()) {
        if (!first) {
            out << ", ";
        }
        first = false;
        out << json(std::to_string(id)).dump() << ": " << json(w).dump();
    }
    out << "}\n";
}

AttentionTensor read_attention(std::istream& in) {
    std::array<char, 4> magic{};
    if (!in.read(magic.data(), 4) || magic != kAttentionMagic) {
        throw Error(ErrorCode::Format, "missing ATN1 magic");
    }
    const std::size_t layers = read_u32_le(in);
    const std::size_t heads = read_u32_le(in);
    const std::size_t rows = read_u32_le(in);
    const std::size_t cols = read_u32_le(in);
    if (rows != cols) {
        throw Error(ErrorCode::Format, fmt::format("ATN1 attention maps must be square, got {}x{}", rows, cols));
    }
    const std::size_t count = layers * heads * rows * cols;
    std::vector<unsigned char> raw(count * 4);
    if (count > 0 && !in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
        throw Error(ErrorCode::Format, fmt::format("ATN1 payload truncated, expected {} floats", count));
    }
    std::vector<double> values(count);
    for (std::size_t i = 0; i < count; ++i) {
        const unsigned char* b = raw.data() + 4 * i;
        const std::uint32_t bits = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
                                   (static_cast<std::uint32_t>(b[2]) << 16) |
                                   (static_cast<std::uint32_t>(b[3]) << 24);
        values[i] = static_cast<double>(std::bit_cast<float>(bits));
    }
    return AttentionTensor(layers, heads, rows, std::move(values));
}

void write_attention(std::ostream& out, const AttentionTensor& attn) {
    out.write(kAttentionMagic.data(), 4);
    write_u32_le(out, checked_u32(attn.layers(), "layer count"));
    write_u32_le(out, checked_u32(attn.heads(), "head count"));
    write_u32_le(out, checked_u32(attn.seq_len(), "sequence length"));
    write_u32_le(out, checked_u32(attn.seq_len(), "sequence length"));
    for (double v : attn.values()) {
        write_u32_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
    if (!out) {
        throw Error(ErrorCode::Io, "failed writing ATN1 stream");
    }
}

std::vector<TokenSequence> load_token_stream(const std::filesystem::path& path) {
    auto in = open_in(path);
    return read_token_stream(in);
}

DelimiterTable load_delimiter_table(const std::filesystem::path& path) {
    auto in = open_in(path);
    return read_delimiter_table(in);
}

AttentionTensor load_attention(const std::filesystem::path& path) {
    auto in = open_in(path, std::ios::in | std::ios::binary);
    return read_attention(in);
}

void save_delimiter_table(const std::filesystem::path& path, const DelimiterTable& table) {
    auto out = open_out(path);
    write_delimiter_table(out, table);
}

void save_attention(const std::filesystem::path& path, const AttentionTensor& attn) {
    auto out = open_out(path, std::ios::out | std::ios::binary);
    write_attention(out, attn);
}

}  // namespace dynsplit::io
