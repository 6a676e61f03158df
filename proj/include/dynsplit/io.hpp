// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <iosfwd>
#include <vector>

#include "dynsplit/core_types.hpp"

namespace dynsplit::io {

/// Token stream: one JSON object per line, {"tokens": [int, ...]}. Blank lines are skipped.
std::vector<TokenSequence> read_token_stream(std::istream& in);
void write_token_stream(std::ostream& out, std::span<const TokenSequence> sequences);

/// Delimiter table: JSON object mapping the decimal token id string to its weight.
DelimiterTable read_delimiter_table(std::istream& in);
void write_delimiter_table(std::ostream& out, const DelimiterTable& table);

/// ATN1 attention file: magic "ATN1", four little-endian u32 (layers, heads, S, S), then
/// layers*heads*S*S little-endian IEEE-754 binary32 values in [l][h][q][k] order.
/// Values widen to double on read and narrow with round-to-nearest on write.
AttentionTensor read_attention(std::istream& in);
void write_attention(std::ostream& out, const AttentionTensor& attn);

std::vector<TokenSequence> load_token_stream(const std::filesystem::path& path);
DelimiterTable load_delimiter_table(const std::filesystem::path& path);
AttentionTensor load_attention(const std::filesystem::path& path);
void save_delimiter_table(const std::filesystem::path& path, const DelimiterTable& table);
void save_attention(const std::filesystem::path& path, const AttentionTensor& attn);

}  // namespace dynsplit::io
