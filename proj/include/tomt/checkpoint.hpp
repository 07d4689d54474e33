// Copyright 2026 The tomt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>

#include "tomt/digest.hpp"
#include "tomt/model.hpp"

namespace tomt {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Trainer state stored alongside the parameters.
struct CheckpointMeta {
  Digest config_digest{};
  std::uint64_t step = 0;
  double baseline = 0.0;
};

/// Layout, all integers little-endian:
///   "TOMT" | u32 version | config digest[32] | u32 len + model config JSON
///   | u32 vocab, bos, eom, self, other | u64 step | f64 baseline
///   | u32 count, then per parameter: name, group (u32 len + bytes), u8 tag,
///     u32 rank, u64 extents | f32 payload in manifest order | SHA-256[32]
///     of every preceding byte.
std::string encode_checkpoint(const Model& model, const CheckpointMeta& meta);

struct LoadedCheckpoint {
  Model model;
  CheckpointMeta meta;
};

/// Throws FormatError on a bad magic, version, digest, tokenizer or manifest.
LoadedCheckpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const Model& model, const CheckpointMeta& meta);
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

/// Hex SHA-256 of a file's bytes.
std::string file_digest(const std::filesystem::path& path);
std::string read_file(const std::filesystem::path& path);
/// Writes through a temporary sibling and renames it into place.
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace tomt
