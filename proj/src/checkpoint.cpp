// Copyright 2026 The tomt Authors
// SPDX-License-Identifier: Apache-2.0

#include "tomt/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "tomt/error.hpp"

namespace tomt {
namespace {

constexpr char kMagic[4] = {'T', 'O', 'M', 'T'};

class Writer {
 public:
  void bytes(const void* data, std::size_t n) { out_.append(static_cast<const char*>(data), n); }
  template <typename U>
  void uint(U value) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out_.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
  }
  void f32(float v) { uint(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { uint(std::bit_cast<std::uint64_t>(v)); }
  void str(std::string_view s) {
    uint(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::string& buffer() { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view in) : in_(in) {}
  std::string_view take(std::size_t n, const char* what) {
    if (in_.size() - pos_ < n) throw FormatError(std::string("checkpoint truncated while reading ") + what);
    auto out = in_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  template <typename U>
  U uint(const char* what) {
    const auto raw = take(sizeof(U), what);
    U value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(static_cast<unsigned char>(raw[i])) << (8 * i);
    return value;
  }
  float f32(const char* what) { return std::bit_cast<float>(uint<std::uint32_t>(what)); }
  double f64(const char* what) { return std::bit_cast<double>(uint<std::uint64_t>(what)); }
  std::string str(const char* what) {
    const auto n = uint<std::uint32_t>(what);
    return std::string(take(n, what));
  }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  std::string_view in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const Model& model, const CheckpointMeta& meta) {
  Writer w;
  w.bytes(kMagic, sizeof(kMagic));
  w.uint(kCheckpointVersion);
  w.bytes(meta.config_digest.data(), meta.config_digest.size());
  w.str(nlohmann::json(model.config()).dump());
  for (std::uint32_t v : {tok::kVocabSize, tok::kBos, tok::kEom, tok::kSelf, tok::kOther}) w.uint(v);
  w.uint(meta.step);
  w.f64(meta.baseline);
  const auto& params = model.parameters();
  w.uint(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    w.str(p.name);
    w.str(p.group);
    w.uint(static_cast<std::uint8_t>(p.tag));
    w.uint(static_cast<std::uint32_t>(p.tensor.shape().size()));
    for (auto extent : p.tensor.shape()) w.uint(static_cast<std::uint64_t>(extent));
  }
  for (const auto& p : params) {
    for (float v : p.tensor.data()) w.f32(v);
  }
  const auto digest = sha256(w.buffer());
  w.bytes(digest.data(), digest.size());
  return std::move(w.buffer());
}

LoadedCheckpoint decode_checkpoint(std::string_view bytes) {
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw FormatError("checkpoint: bad magic (expected \"TOMT\")");
  }
  if (bytes.size() < sizeof(kMagic) + 4 + 32) throw FormatError("checkpoint truncated in header");
  const auto body = bytes.substr(0, bytes.size() - 32);
  const auto stored = bytes.substr(bytes.size() - 32);
  const auto actual = sha256(body);
  if (std::memcmp(stored.data(), actual.data(), actual.size()) != 0) {
    throw FormatError("checkpoint: content digest mismatch (file corrupted)");
  }

  Reader r(body);
  r.take(sizeof(kMagic), "magic");
  const auto version = r.uint<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported format version " + std::to_string(version));
  }
  CheckpointMeta meta;
  const auto digest = r.take(meta.config_digest.size(), "config digest");
  std::memcpy(meta.config_digest.data(), digest.data(), digest.size());
  ModelConfig config;
  try {
    config = nlohmann::json::parse(r.str("model config")).get<ModelConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: unreadable model config: ") + e.what());
  }
  for (std::uint32_t expected : {tok::kVocabSize, tok::kBos, tok::kEom, tok::kSelf, tok::kOther}) {
    if (r.uint<std::uint32_t>("tokenizer constants") != expected) {
      throw FormatError("checkpoint: tokenizer constants differ from this build");
    }
  }
  meta.step = r.uint<std::uint64_t>("step");
  meta.baseline = r.f64("baseline");

  Model model(config);
  auto& params = model.parameters();
  const auto count = r.uint<std::uint32_t>("parameter count");
  if (count != params.size()) {
    throw FormatError("checkpoint: manifest lists " + std::to_string(count) + " parameters, config implies " +
                      std::to_string(params.size()));
  }
  for (auto& p : params) {
    const auto name = r.str("parameter name");
    const auto group = r.str("parameter group");
    const auto tag = r.uint<std::uint8_t>("parameter tag");
    const auto rank = r.uint<std::uint32_t>("parameter rank");
    Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(static_cast<std::size_t>(r.uint<std::uint64_t>("extent")));
    if (name != p.name || group != p.group || tag != static_cast<std::uint8_t>(p.tag) || shape != p.tensor.shape()) {
      throw FormatError("checkpoint: manifest entry '" + name + "' does not match the model layout (expected '" +
                        p.name + "')");
    }
  }
  for (auto& p : params) {
    for (auto& v : p.tensor.leaf_values()) v = r.f32("payload");
  }
  if (r.remaining() != 0) throw FormatError("checkpoint: trailing bytes after payload");
  return {std::move(model), meta};
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write to '" + path.string() + "' failed");
  }
  std::filesystem::rename(tmp, path);
}

void save_checkpoint(const std::filesystem::path& path, const Model& model, const CheckpointMeta& meta) {
  write_file(path, encode_checkpoint(model, meta));
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

std::string file_digest(const std::filesystem::path& path) { return to_hex(sha256(read_file(path))); }

}  // namespace tomt
