#pragma once

#include <iosfwd>
#include <string>

#include "distiltag/tagger.h"
#include "json.hpp"

namespace distiltag {

// Checkpoint layout:
//   "CDT1" | u32 little-endian header length | UTF-8 JSON header | arrays
// The header carries the format version, tagger config, tagset, vocab and a
// manifest of {name, shape, offset, bytes} for each array. Arrays are
// little-endian IEEE-754 float32, concatenated in manifest order; offsets are
// relative to the first byte after the header.
inline constexpr char kCheckpointMagic[4] = {'C', 'D', 'T', '1'};
inline constexpr int kCheckpointVersion = 1;

nlohmann::ordered_json config_to_json(const TaggerConfig& config);
TaggerConfig config_from_json(const nlohmann::json& j);

// `provenance` is stored verbatim in the header (e.g. the resolved run config).
void write_checkpoint(std::ostream& out, const Model<float>& model,
                      const nlohmann::json& provenance = nlohmann::json::object());
Model<float> read_checkpoint(std::istream& in);

void save_checkpoint(const Model<float>& model, const std::string& path,
                     const nlohmann::json& provenance = nlohmann::json::object());
Model<float> load_checkpoint(const std::string& path);

}  // namespace distiltag
