#include "pianofill/model/checkpoint.hpp"

#include <openssl/evp.h>

#include <cstring>
#include <map>
#include <memory>

#include "pianofill/midi_file.hpp"

namespace pianofill::model {

namespace {

void put_le(std::vector<std::uint8_t>& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

std::uint64_t get_le(std::span<const std::uint8_t> in, std::size_t at, int bytes) {
  std::uint64_t v = 0;
  for (int i = bytes - 1; i >= 0; --i) v = (v << 8) | in[at + i];
  return v;
}

constexpr std::size_t kPreambleSize = sizeof(kCheckpointMagic) + 4 + 8;

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const ModelParams<float>& params, const ModelConfig& config,
                                               std::uint64_t step) {
  nlohmann::json manifest = nlohmann::json::array();
  std::vector<std::uint8_t> data;
  for_each_tensor(params, [&](const std::string& name, const Mat<float>& m) {
    manifest.push_back({{"name", name}, {"shape", {m.rows(), m.cols()}}, {"dtype", "f32"}, {"offset", data.size()}});
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      std::uint32_t bits = 0;
      std::memcpy(&bits, m.data() + i, sizeof(bits));
      put_le(data, bits, 4);
    }
  });
  const nlohmann::json header = {{"config", config}, {"step", step}, {"tensors", manifest}};
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  put_le(out, kCheckpointVersion, 4);
  put_le(out, text.size(), 8);
  out.insert(out.end(), text.begin(), text.end());
  out.insert(out.end(), data.begin(), data.end());
  return out;
}

Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kPreambleSize) throw CheckpointError("checkpoint truncated: missing preamble");
  if (std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
    throw CheckpointError("not a checkpoint: bad magic string");
  }
  const auto version = static_cast<std::uint32_t>(get_le(bytes, 8, 4));
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint64_t header_len = get_le(bytes, 12, 8);
  if (header_len > bytes.size() - kPreambleSize) throw CheckpointError("checkpoint truncated inside header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + kPreambleSize, bytes.begin() + kPreambleSize + header_len);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  const std::span<const std::uint8_t> data = bytes.subspan(kPreambleSize + header_len);

  Checkpoint ck;
  try {
    ck.config = header.at("config").get<ModelConfig>();
    ck.step = header.at("step").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint header incomplete: ") + e.what());
  }
  try {
    ck.params = ModelParams<float>::zeros(ck.config);
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(e.what());
  }

  std::map<std::string, nlohmann::json> entries;
  for (const auto& entry : header.at("tensors")) entries[entry.at("name").get<std::string>()] = entry;

  std::size_t expected_bytes = 0;
  for_each_tensor(ck.params, [&](const std::string& name, Mat<float>& m) {
    const auto it = entries.find(name);
    if (it == entries.end()) throw CheckpointError("tensor '" + name + "' missing from manifest");
    const nlohmann::json& e = it->second;
    const auto shape = e.at("shape").get<std::vector<std::int64_t>>();
    if (shape.size() != 2 || shape[0] != m.rows() || shape[1] != m.cols()) {
      throw CheckpointError("tensor '" + name + "' shape " + e.at("shape").dump() + " does not match config [" +
                            std::to_string(m.rows()) + "," + std::to_string(m.cols()) + "]");
    }
    if (e.at("dtype").get<std::string>() != "f32") throw CheckpointError("tensor '" + name + "' has unsupported dtype");
    const auto offset = e.at("offset").get<std::uint64_t>();
    const std::uint64_t len = static_cast<std::uint64_t>(m.size()) * 4;
    if (offset > data.size() || len > data.size() - offset) {
      throw CheckpointError("checkpoint truncated: tensor '" + name + "' extends past end of data");
    }
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      const auto bits = static_cast<std::uint32_t>(get_le(data, offset + 4 * static_cast<std::size_t>(i), 4));
      std::memcpy(m.data() + i, &bits, sizeof(bits));
    }
    expected_bytes += len;
    entries.erase(it);
  });
  if (!entries.empty()) throw CheckpointError("manifest names unknown tensor '" + entries.begin()->first + "'");
  if (expected_bytes != data.size()) throw CheckpointError("checkpoint data section has trailing bytes");
  return ck;
}

void save_checkpoint(const std::string& path, const ModelParams<float>& params, const ModelConfig& config,
                     std::uint64_t step) {
  write_file_bytes(path, serialize_checkpoint(params, config, step));
}

Checkpoint load_checkpoint(const std::string& path) { return deserialize_checkpoint(read_file_bytes(path)); }

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), digest, &len) != 1) {
    throw std::runtime_error("SHA-256 computation failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xF]);
  }
  return out;
}

}  // namespace pianofill::model
