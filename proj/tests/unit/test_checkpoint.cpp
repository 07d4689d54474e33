// Copyright 2026 The tomt Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <filesystem>

#include "tomt/checkpoint.hpp"
#include "tomt/error.hpp"

using namespace tomt;

namespace {

Model sample_model() {
  ModelConfig c;
  c.max_seq_len = 16;
  c.seed = 12;
  c.head_tags = {{ModuleTag::Perception, ModuleTag::Prediction, ModuleTag::Behavior, ModuleTag::Perception},
                 {ModuleTag::Behavior, ModuleTag::Perception, ModuleTag::Prediction, ModuleTag::Prediction}};
  return Model(c);
}

CheckpointMeta sample_meta() {
  CheckpointMeta meta;
  meta.config_digest = sha256("config");
  meta.step = 123;
  meta.baseline = 0.375;
  return meta;
}

// Replace the trailing content digest after editing the body.
std::string redigest(std::string body) {
  const auto d = sha256(body);
  body.append(reinterpret_cast<const char*>(d.data()), d.size());
  return body;
}

}  // namespace

TEST_CASE("checkpoint round trip is bytewise exact") {
  const auto model = sample_model();
  const auto bytes = encode_checkpoint(model, sample_meta());
  const auto loaded = decode_checkpoint(bytes);
  CHECK(loaded.meta.step == 123);
  CHECK(loaded.meta.baseline == 0.375);
  CHECK(loaded.meta.config_digest == sample_meta().config_digest);
  CHECK(loaded.model.config().resolved_head_tags() == model.config().resolved_head_tags());
  REQUIRE(loaded.model.parameters().size() == model.parameters().size());
  for (std::size_t i = 0; i < model.parameters().size(); ++i) {
    const auto& a = model.parameters()[i];
    const auto& b = loaded.model.parameters()[i];
    CHECK(a.name == b.name);
    CHECK(a.tag == b.tag);
    CHECK(std::equal(a.tensor.data().begin(), a.tensor.data().end(), b.tensor.data().begin(), b.tensor.data().end()));
  }
  CHECK(encode_checkpoint(loaded.model, loaded.meta) == bytes);
}

TEST_CASE("checkpoint header layout") {
  const auto bytes = encode_checkpoint(sample_model(), sample_meta());
  CHECK(bytes.substr(0, 4) == "TOMT");
  CHECK(static_cast<unsigned char>(bytes[4]) == kCheckpointVersion);
  CHECK(bytes[5] == 0);
  CHECK(bytes.substr(8, 32) == std::string(reinterpret_cast<const char*>(sample_meta().config_digest.data()), 32));
  const auto d = sha256(std::string_view(bytes).substr(0, bytes.size() - 32));
  CHECK(bytes.substr(bytes.size() - 32) == std::string(reinterpret_cast<const char*>(d.data()), 32));
}

TEST_CASE("corrupted checkpoints are rejected with a reason") {
  const auto bytes = encode_checkpoint(sample_model(), sample_meta());
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_WITH_AS(decode_checkpoint(bad), doctest::Contains("magic"), FormatError);

  bad = bytes;
  bad[bytes.size() / 2] ^= 0x01;
  CHECK_THROWS_WITH_AS(decode_checkpoint(bad), doctest::Contains("digest"), FormatError);

  bad = bytes + "x";
  CHECK_THROWS_AS(decode_checkpoint(bad), FormatError);

  const auto body = bytes.substr(0, bytes.size() - 32);
  CHECK_THROWS_WITH_AS(decode_checkpoint(redigest(body + "x")), doctest::Contains("trailing"), FormatError);

  auto versioned = body;
  versioned[4] = 2;
  CHECK_THROWS_WITH_AS(decode_checkpoint(redigest(versioned)), doctest::Contains("version"), FormatError);

  CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, 20)), FormatError);
  CHECK_THROWS_AS(decode_checkpoint(""), FormatError);
}

TEST_CASE("checkpoint files save, load and digest") {
  const auto dir = std::filesystem::temp_directory_path() / "tomt_unit_ckpt";
  std::filesystem::create_directories(dir);
  const auto path = dir / "m.ckpt";
  const auto model = sample_model();
  save_checkpoint(path, model, sample_meta());
  const auto loaded = load_checkpoint(path);
  CHECK(encode_checkpoint(loaded.model, loaded.meta) == read_file(path));
  CHECK(file_digest(path) == to_hex(sha256(read_file(path))));
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), FormatError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("sha256 known answers") {
  CHECK(to_hex(sha256("")) == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(to_hex(sha256("abc")) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  Sha256 inc;
  inc.update("a");
  inc.update("bc");
  CHECK(inc.finish() == sha256("abc"));
}
