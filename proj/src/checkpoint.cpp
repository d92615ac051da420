#include "domlm/checkpoint.hpp"

#include "domlm/errors.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace domlm {

namespace {

constexpr char kMagic[8] = {'D', 'O', 'M', 'L', 'M', 'C', 'K', 'P'};

static_assert(std::endian::native == std::endian::little, "checkpoint payloads assume a little-endian host");

}  // namespace

const Tensor& Checkpoint::tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw ContractError("checkpoint has no tensor '" + name + "'");
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  nlohmann::ordered_json header;
  header["version"] = kCheckpointVersion;
  header["meta"] = checkpoint.meta;
  auto index = nlohmann::ordered_json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : checkpoint.tensors) {
    index.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += static_cast<std::uint64_t>(t.numel());
  }
  header["tensors"] = std::move(index);
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(kMagic, sizeof kMagic);
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, t] : checkpoint.tensors) {
    const auto d = t.data();
    out.write(reinterpret_cast<const char*>(d.data()), static_cast<std::streamsize>(d.size_bytes()));
  }
  if (!out) throw IoError("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  char magic[8];
  std::uint64_t len = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) throw IoError(path.string() + " is not a checkpoint");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw IoError(path.string() + ": truncated header");

  nlohmann::ordered_json header;
  try {
    header = nlohmann::ordered_json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": corrupt header: " + e.what());
  }
  if (header.value("version", 0) != kCheckpointVersion) {
    throw IoError(path.string() + ": unsupported checkpoint version");
  }
  Checkpoint ck;
  ck.meta = header["meta"];
  for (const auto& entry : header["tensors"]) {
    Shape shape = entry["shape"].get<Shape>();
    Buffer data(static_cast<std::size_t>(shape_numel(shape)));
    in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!in) throw IoError(path.string() + ": truncated tensor payload");
    ck.tensors.emplace_back(entry["name"].get<std::string>(), Tensor(std::move(shape), std::move(data)));
  }
  return ck;
}

nlohmann::ordered_json to_json(const EncoderConfig& c) {
  return {{"layers", c.layers},   {"dim", c.dim},
          {"heads", c.heads},     {"ffn_dim", c.ffn_dim},
          {"max_seq_len", c.max_seq_len}, {"vocab_size", c.vocab_size},
          {"phrase_vocab_size", c.phrase_vocab_size}};
}

EncoderConfig encoder_config_from_json(const nlohmann::ordered_json& j) {
  EncoderConfig c;
  c.layers = j.at("layers").get<int>();
  c.dim = j.at("dim").get<int>();
  c.heads = j.at("heads").get<int>();
  c.ffn_dim = j.at("ffn_dim").get<int>();
  c.max_seq_len = j.at("max_seq_len").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.phrase_vocab_size = j.at("phrase_vocab_size").get<int>();
  c.validate();
  return c;
}

Checkpoint model_checkpoint(const EncoderConfig& config, const ModelParams& params) {
  Checkpoint ck;
  ck.meta["encoder"] = to_json(config);
  ck.tensors = params.named();
  return ck;
}

ModelParams params_from_checkpoint(const Checkpoint& checkpoint, EncoderConfig* config_out) {
  if (!checkpoint.meta.contains("encoder")) throw ContractError("checkpoint lacks an encoder config");
  const EncoderConfig config = encoder_config_from_json(checkpoint.meta["encoder"]);
  if (config_out) *config_out = config;
  return params_from_named(config, checkpoint.tensors);
}

}  // namespace domlm
