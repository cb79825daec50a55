#include "e3net/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include <nlohmann/json.hpp>

namespace e3net {

using json = nlohmann::json;

namespace {

constexpr char kMagic[4] = {'E', '3', 'N', '1'};
constexpr std::int64_t kAlign = 16;

std::int64_t align_up(std::int64_t v) { return (v + kAlign - 1) / kAlign * kAlign; }

}  // namespace

void save_checkpoint(const ModelParams& params, const ModelConfig& cfg,
                     const std::string& path) {
  json tensors = json::array();
  std::int64_t offset = 0;
  for (const auto& [name, t] : params.named) {
    offset = align_up(offset);
    const std::int64_t byte_len = t.numel() * std::int64_t(sizeof(float));
    tensors.push_back(json{{"name", name},
                           {"dtype", "f32"},
                           {"shape", t.shape()},
                           {"offset", offset},
                           {"byte_len", byte_len}});
    offset += byte_len;
  }
  json header{{"format_version", 1},
              {"config", json::parse(config_to_json_string(cfg))},
              {"tensors", tensors}};
  const std::string htext = header.dump();

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CheckpointError(CheckpointErrorCode::IoError, "cannot open '" + path + "' for writing");
  f.write(kMagic, 4);
  const std::uint32_t hlen = static_cast<std::uint32_t>(htext.size());
  unsigned char lenb[4] = {static_cast<unsigned char>(hlen & 0xff),
                           static_cast<unsigned char>((hlen >> 8) & 0xff),
                           static_cast<unsigned char>((hlen >> 16) & 0xff),
                           static_cast<unsigned char>((hlen >> 24) & 0xff)};
  f.write(reinterpret_cast<const char*>(lenb), 4);
  f.write(htext.data(), static_cast<std::streamsize>(htext.size()));
  std::int64_t written = 0;
  for (const auto& [name, t] : params.named) {
    const std::int64_t pad = align_up(written) - written;
    for (std::int64_t i = 0; i < pad; ++i) f.put('\0');
    written += pad;
    f.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * std::int64_t(sizeof(float))));
    written += t.numel() * std::int64_t(sizeof(float));
  }
  f.flush();
  if (!f) throw CheckpointError(CheckpointErrorCode::IoError, "write failed for '" + path + "'");
}

std::pair<ModelParams, ModelConfig> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError(CheckpointErrorCode::IoError, "cannot open '" + path + "'");
  std::vector<char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw CheckpointError(CheckpointErrorCode::BadMagic, "bad magic: not an E3N1 checkpoint");
  const unsigned char* lb = reinterpret_cast<const unsigned char*>(bytes.data() + 4);
  const std::uint32_t hlen = std::uint32_t(lb[0]) | (std::uint32_t(lb[1]) << 8) |
                             (std::uint32_t(lb[2]) << 16) | (std::uint32_t(lb[3]) << 24);
  if (bytes.size() < 8 + std::size_t(hlen))
    throw CheckpointError(CheckpointErrorCode::TruncatedData, "truncated header");

  json header;
  try {
    header = json::parse(bytes.data() + 8, bytes.data() + 8 + hlen);
  } catch (const json::exception& e) {
    throw CheckpointError(CheckpointErrorCode::BadHeader,
                          std::string("unparseable header: ") + e.what());
  }
  if (header.value("format_version", -1) != 1)
    throw CheckpointError(CheckpointErrorCode::BadHeader, "unsupported format_version");

  ModelConfig cfg;
  try {
    cfg = config_from_json_string(header.at("config").dump());
  } catch (const Error& e) {
    throw CheckpointError(CheckpointErrorCode::ConfigMismatch,
                          std::string("invalid config in header: ") + e.what());
  }

  const char* payload = bytes.data() + 8 + hlen;
  const std::int64_t payload_len = static_cast<std::int64_t>(bytes.size()) - 8 - hlen;

  const auto expected = param_shapes(cfg);
  if (!header.contains("tensors") || !header["tensors"].is_array() ||
      header["tensors"].size() != expected.size())
    throw CheckpointError(CheckpointErrorCode::ShapeMismatch,
                          "tensor list does not match the config's parameter set");

  ModelParams params;
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const json& tj = header["tensors"][i];
    const std::string name = tj.value("name", "");
    if (name != expected[i].first)
      throw CheckpointError(CheckpointErrorCode::ShapeMismatch,
                            "tensor '" + name + "' out of order; expected '" +
                                expected[i].first + "'");
    if (tj.value("dtype", "") != "f32")
      throw CheckpointError(CheckpointErrorCode::BadHeader,
                            "tensor '" + name + "': unsupported dtype");
    Shape shape = tj.value("shape", Shape{});
    if (shape != expected[i].second)
      throw CheckpointError(CheckpointErrorCode::ShapeMismatch,
                            "tensor '" + name + "' has shape " + shape_str(shape) +
                                ", config implies " + shape_str(expected[i].second));
    const std::int64_t offset = tj.value("offset", std::int64_t(-1));
    const std::int64_t byte_len = tj.value("byte_len", std::int64_t(-1));
    const std::int64_t want_bytes = shape_numel(shape) * std::int64_t(sizeof(float));
    if (byte_len != want_bytes)
      throw CheckpointError(CheckpointErrorCode::ShapeMismatch,
                            "tensor '" + name + "' byte_len does not match its shape");
    if (offset < 0 || offset % kAlign != 0 || offset + byte_len > payload_len)
      throw CheckpointError(CheckpointErrorCode::TruncatedData,
                            "truncated tensor data for '" + name + "'");
    Tensor t(shape);
    std::memcpy(t.data(), payload + offset, static_cast<std::size_t>(byte_len));
    params.named.emplace_back(name, std::move(t));
  }
  return {std::move(params), cfg};
}

}  // namespace e3net
