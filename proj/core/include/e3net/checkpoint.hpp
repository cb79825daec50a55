#pragma once

#include <string>
#include <utility>

#include "e3net/error.hpp"
#include "e3net/model.hpp"

namespace e3net {

enum class CheckpointErrorCode {
  IoError,
  BadMagic,
  BadHeader,
  TruncatedData,
  ShapeMismatch,
  ConfigMismatch,
};

class CheckpointError : public DataError {
 public:
  CheckpointError(CheckpointErrorCode code, const std::string& msg)
      : DataError(msg), code_(code) {}
  CheckpointErrorCode code() const { return code_; }

 private:
  CheckpointErrorCode code_;
};

// Wire format: magic "E3N1" | u32 little-endian header length | UTF-8 JSON
// header {format_version, config, tensors:[{name, dtype:"f32", shape, offset,
// byte_len}]} | raw little-endian f32 payloads in header order, each offset
// 16-byte aligned relative to the payload start.
void save_checkpoint(const ModelParams& params, const ModelConfig& cfg,
                     const std::string& path);

std::pair<ModelParams, ModelConfig> load_checkpoint(const std::string& path);

}  // namespace e3net
