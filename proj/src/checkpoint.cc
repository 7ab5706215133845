#include "distiltag/checkpoint.h"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <iterator>
#include <ostream>

#include "distiltag/error.h"

namespace distiltag {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

Tensor<float>* slot_for(TaggerParams<float>& p, const std::string& name) {
  if (name == "word_embedding") return &p.word_embedding;
  if (name == "char_embedding") return &p.char_embedding;
  if (name == "conv_kernel") return &p.conv_kernel;
  if (name == "conv_bias") return &p.conv_bias;
  if (name == "lstm_forward_input") return &p.lstm_forward.w_input;
  if (name == "lstm_forward_hidden") return &p.lstm_forward.w_hidden;
  if (name == "lstm_forward_bias") return &p.lstm_forward.bias;
  if (name == "lstm_backward_input") return &p.lstm_backward.w_input;
  if (name == "lstm_backward_hidden") return &p.lstm_backward.w_hidden;
  if (name == "lstm_backward_bias") return &p.lstm_backward.bias;
  if (name == "emission_weight") return &p.emission_weight;
  if (name == "emission_bias") return &p.emission_bias;
  if (name == "transitions") return &p.transitions;
  return nullptr;
}

}  // namespace

nlohmann::ordered_json config_to_json(const TaggerConfig& c) {
  nlohmann::ordered_json j;
  j["word_dim"] = c.word_dim;
  j["char_dim"] = c.char_dim;
  j["char_filters"] = c.char_filters;
  j["char_window"] = c.char_window;
  j["lstm_hidden"] = c.lstm_hidden;
  j["classifier"] = classifier_name(c.classifier);
  j["dropout_rate"] = c.dropout_rate;
  j["word_vocab_size"] = c.word_vocab_size;
  j["char_vocab_size"] = c.char_vocab_size;
  j["num_tags"] = c.num_tags;
  return j;
}

TaggerConfig config_from_json(const nlohmann::json& j) {
  TaggerConfig c;
  c.word_dim = j.at("word_dim").get<std::size_t>();
  c.char_dim = j.at("char_dim").get<std::size_t>();
  c.char_filters = j.at("char_filters").get<std::size_t>();
  c.char_window = j.at("char_window").get<std::size_t>();
  c.lstm_hidden = j.at("lstm_hidden").get<std::size_t>();
  c.classifier = parse_classifier(j.at("classifier").get<std::string>());
  c.dropout_rate = j.at("dropout_rate").get<double>();
  c.word_vocab_size = j.at("word_vocab_size").get<std::size_t>();
  c.char_vocab_size = j.at("char_vocab_size").get<std::size_t>();
  c.num_tags = j.at("num_tags").get<std::size_t>();
  return c;
}

void write_checkpoint(std::ostream& out, const Model<float>& model,
                      const nlohmann::json& provenance) {
  nlohmann::ordered_json header;
  header["version"] = kCheckpointVersion;
  header["config"] = config_to_json(model.config);
  header["tagset"] = model.tagset.labels();
  header["vocab"] = {{"words", model.vocab.words()}, {"chars", model.vocab.chars()}};
  header["provenance"] = provenance;

  std::string payload;
  auto arrays = nlohmann::ordered_json::array();
  for (const auto& [name, tensor] : model.params.named()) {
    nlohmann::ordered_json entry;
    entry["name"] = name;
    entry["shape"] = tensor.shape();
    entry["offset"] = payload.size();
    entry["bytes"] = tensor.size() * 4;
    arrays.push_back(entry);
    for (const float v : tensor.values()) put_u32(payload, std::bit_cast<std::uint32_t>(v));
  }
  header["arrays"] = arrays;

  const std::string text = header.dump();
  std::string prefix(kCheckpointMagic, 4);
  put_u32(prefix, static_cast<std::uint32_t>(text.size()));
  out.write(prefix.data(), static_cast<std::streamsize>(prefix.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) fail(ErrorKind::kIo, "failed writing checkpoint");
}

Model<float> read_checkpoint(std::istream& in) {
  std::array<unsigned char, 8> prefix{};
  in.read(reinterpret_cast<char*>(prefix.data()), 8);
  const auto got_prefix = static_cast<std::size_t>(in.gcount());
  if (got_prefix < 4 || std::memcmp(prefix.data(), kCheckpointMagic, 4) != 0) {
    fail(ErrorKind::kFormat, "not a checkpoint file (bad magic)");
  }
  if (got_prefix < 8) {
    fail(ErrorKind::kCorruption, "checkpoint truncated: expected 8 prefix bytes, found " +
                                     std::to_string(got_prefix));
  }
  const std::uint32_t header_len = get_u32(prefix.data() + 4);
  std::string text(header_len, '\0');
  in.read(text.data(), header_len);
  if (static_cast<std::size_t>(in.gcount()) != header_len) {
    fail(ErrorKind::kCorruption, "checkpoint truncated: expected " + std::to_string(header_len) +
                                     " header bytes, found " + std::to_string(in.gcount()));
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kFormat, std::string("checkpoint header is not valid JSON: ") + e.what());
  }

  Model<float> model;
  std::size_t expected = 0;
  std::vector<std::tuple<std::string, Shape, std::size_t, std::size_t>> manifest;
  try {
    if (header.at("version").get<int>() != kCheckpointVersion) {
      fail(ErrorKind::kFormat, "unsupported checkpoint version " + header.at("version").dump());
    }
    model.config = config_from_json(header.at("config"));
    model.tagset = TagSet(header.at("tagset").get<std::vector<std::string>>());
    model.vocab = Vocab(header.at("vocab").at("words").get<std::vector<std::string>>(),
                        header.at("vocab").at("chars").get<std::vector<std::string>>());
    for (const auto& entry : header.at("arrays")) {
      manifest.emplace_back(entry.at("name").get<std::string>(), entry.at("shape").get<Shape>(),
                            entry.at("offset").get<std::size_t>(),
                            entry.at("bytes").get<std::size_t>());
      expected = std::max(expected, std::get<2>(manifest.back()) + std::get<3>(manifest.back()));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kFormat, std::string("malformed checkpoint header: ") + e.what());
  }

  std::string payload(expected, '\0');
  in.read(payload.data(), static_cast<std::streamsize>(expected));
  const auto actual = static_cast<std::size_t>(in.gcount());
  if (actual != expected) {
    fail(ErrorKind::kCorruption, "checkpoint truncated: expected " + std::to_string(expected) +
                                     " array bytes, found " + std::to_string(actual));
  }
  for (const auto& [name, shape, offset, bytes] : manifest) {
    auto* slot = slot_for(model.params, name);
    if (!slot) fail(ErrorKind::kFormat, "unknown checkpoint array '" + name + "'");
    if (shape_size(shape) * 4 != bytes) {
      fail(ErrorKind::kFormat, "array '" + name + "' shape disagrees with its byte count");
    }
    std::vector<float> values(shape_size(shape));
    const auto* p = reinterpret_cast<const unsigned char*>(payload.data()) + offset;
    for (std::size_t i = 0; i < values.size(); ++i) {
      values[i] = std::bit_cast<float>(get_u32(p + 4 * i));
    }
    *slot = Tensor<float>(shape, std::move(values), true);
  }
  model.config.validate();
  // Shapes must match what the config implies.
  const auto reference = TaggerParams<float>::init(model.config, 0);
  const auto want = reference.named();
  const auto have = model.params.named();
  if (want.size() != have.size()) {
    fail(ErrorKind::kFormat, "checkpoint holds " + std::to_string(have.size()) +
                                 " arrays, config implies " + std::to_string(want.size()));
  }
  for (std::size_t i = 0; i < want.size(); ++i) {
    if (!have[i].second.defined() || want[i].second.shape() != have[i].second.shape()) {
      fail(ErrorKind::kFormat, "array '" + want[i].first + "' missing or mis-shaped");
    }
  }
  if (model.tagset.size() != model.config.num_tags ||
      model.vocab.word_count() != model.config.word_vocab_size ||
      model.vocab.char_count() != model.config.char_vocab_size) {
    fail(ErrorKind::kFormat, "checkpoint vocab/tagset sizes disagree with its config");
  }
  return model;
}

void save_checkpoint(const Model<float>& model, const std::string& path,
                     const nlohmann::json& provenance) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::kIo, "cannot write checkpoint '" + path + "'");
  write_checkpoint(out, model, provenance);
}

Model<float> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open checkpoint '" + path + "'");
  return read_checkpoint(in);
}

}  // namespace distiltag
