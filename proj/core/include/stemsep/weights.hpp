#pragma once

#include <string>

#include "stemsep/model.hpp"

namespace stemsep {

// Weight container: a text manifest (config echo, parameter names, shapes,
// byte offsets, format version) followed by the raw little-endian float32
// parameter blobs, with a CRC-32 over the blob region.
//
//   STEMSEPW 1\n
//   <manifest byte count>\n
//   <manifest JSON>\n
//   <blob>

void save_weights(const Model& m, const std::string& path);

// Rebuilds the model from the embedded config, then fills its parameters.
Model load_weights(const std::string& path);

// The manifest config must match `expected` exactly.
Model load_weights(const std::string& path, const ModelConfig& expected);

// Human-readable manifest summary (used by the inspect subcommand).
std::string describe_weights(const std::string& path);

}  // namespace stemsep
