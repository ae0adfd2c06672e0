#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>

#include "pianofill/midi_file.hpp"
#include "pianofill/model/checkpoint.hpp"

using namespace pianofill;
using namespace pianofill::model;

namespace {

bool bit_equal(const ModelParams<float>& a, const ModelParams<float>& b) {
  const auto ta = tensor_list(a);
  const auto tb = tensor_list(b);
  if (ta.size() != tb.size()) return false;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    if (ta[i].first != tb[i].first || ta[i].second->rows() != tb[i].second->rows() ||
        ta[i].second->cols() != tb[i].second->cols()) {
      return false;
    }
    if (std::memcmp(ta[i].second->data(), tb[i].second->data(), sizeof(float) * ta[i].second->size()) != 0) {
      return false;
    }
  }
  return true;
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitExact) {
  Rng rng(1);
  const auto cfg = ModelConfig::desk();
  const auto p = ModelParams<float>::initialize(cfg, rng);
  const auto bytes = serialize_checkpoint(p, cfg, 1234);
  const auto ck = deserialize_checkpoint(bytes);
  EXPECT_EQ(ck.step, 1234u);
  EXPECT_EQ(nlohmann::json(ck.config), nlohmann::json(cfg));
  EXPECT_TRUE(bit_equal(ck.params, p));
  EXPECT_EQ(serialize_checkpoint(ck.params, ck.config, ck.step), bytes);

  const auto path = (std::filesystem::temp_directory_path() / "pianofill_ckpt_test.bin").string();
  save_checkpoint(path, p, cfg, 7);
  EXPECT_TRUE(bit_equal(load_checkpoint(path).params, p));
  std::filesystem::remove(path);
}

TEST(Checkpoint, PreservesSpecialFloats) {
  const auto cfg = ModelConfig::toy();
  auto p = ModelParams<float>::zeros(cfg);
  p.start(0) = -0.0f;
  p.start(1) = std::numeric_limits<float>::denorm_min();
  p.start(2) = std::numeric_limits<float>::quiet_NaN();
  EXPECT_TRUE(bit_equal(deserialize_checkpoint(serialize_checkpoint(p, cfg, 0)).params, p));
}

TEST(Checkpoint, RejectsCorruptInput) {
  Rng rng(2);
  const auto cfg = ModelConfig::toy();
  const auto bytes = serialize_checkpoint(ModelParams<float>::initialize(cfg, rng), cfg, 0);

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(deserialize_checkpoint(bad_magic), CheckpointError);

  auto bad_version = bytes;
  bad_version[8] = 9;
  EXPECT_THROW(deserialize_checkpoint(bad_version), CheckpointError);

  auto truncated = bytes;
  truncated.resize(bytes.size() - 4);
  EXPECT_THROW(deserialize_checkpoint(truncated), CheckpointError);

  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_THROW(deserialize_checkpoint(trailing), CheckpointError);

  // A config that disagrees with the stored tensor shapes names the tensor.
  auto other = cfg;
  other.ff_dim = 32;
  auto mixed = serialize_checkpoint(ModelParams<float>::zeros(other), cfg, 0);
  try {
    deserialize_checkpoint(mixed);
    FAIL() << "expected CheckpointError";
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("ff.fc1"), std::string::npos) << e.what();
  }
}

TEST(Checkpoint, Sha256KnownVector) {
  const std::string abc = "abc";
  EXPECT_EQ(sha256_hex(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(abc.data()), abc.size())),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}
