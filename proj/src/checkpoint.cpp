#include <json.hpp>

#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "dslu/codec.hpp"
#include "dslu/model.hpp"

// Layout: "DSLUCKPT" | u32 version | u64 payload length | payload | u32 crc32.
// Payload: u64 metadata length | JSON metadata | u32 tensor count |
// per tensor: u32 name length, name, u32 rank, u64 dims[rank], raw doubles.
namespace dslu {
namespace {

using json = nlohmann::json;
constexpr char kMagic[8] = {'D', 'S', 'L', 'U', 'C', 'K', 'P', 'T'};

template <class T>
void put(std::string& buf, T v) {
  buf.append(reinterpret_cast<const char*>(&v), sizeof v);
}

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}
  template <class T>
  T get() {
    T v;
    need(sizeof v);
    std::memcpy(&v, data_.data() + pos_, sizeof v);
    pos_ += sizeof v;
    return v;
  }
  std::string_view bytes(std::size_t n) {
    need(n);
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) throw CheckpointError("checkpoint payload ends early");
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

json config_json(const ModelConfig& c) {
  return {{"feat_dim", c.feat_dim},
          {"subsample", c.subsample},
          {"model_dim", c.model_dim},
          {"heads", c.heads},
          {"ff_dim", c.ff_dim},
          {"acoustic_layers", c.acoustic_layers},
          {"decoder_layers", c.decoder_layers},
          {"semantic_dim", c.semantic_dim},
          {"semantic_heads", c.semantic_heads},
          {"semantic_layers", c.semantic_layers},
          {"deliberation_layers", c.deliberation_layers},
          {"dropout", c.dropout},
          {"zero_init_heads", c.zero_init_heads},
          {"init_seed", c.init_seed}};
}

ModelConfig config_from(const json& j) {
  ModelConfig c;
  c.feat_dim = j.at("feat_dim");
  c.subsample = j.at("subsample");
  c.model_dim = j.at("model_dim");
  c.heads = j.at("heads");
  c.ff_dim = j.at("ff_dim");
  c.acoustic_layers = j.at("acoustic_layers");
  c.decoder_layers = j.at("decoder_layers");
  c.semantic_dim = j.at("semantic_dim");
  c.semantic_heads = j.at("semantic_heads");
  c.semantic_layers = j.at("semantic_layers");
  c.deliberation_layers = j.at("deliberation_layers");
  c.dropout = j.at("dropout");
  c.zero_init_heads = j.at("zero_init_heads");
  c.init_seed = j.at("init_seed");
  return c;
}

void put_tensor(std::string& buf, const std::string& name, const Shape& shape,
                std::span<const double> values) {
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(name.size()));
  buf += name;
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(shape.size()));
  for (std::size_t d : shape) put<std::uint64_t>(buf, d);
  buf.append(reinterpret_cast<const char*>(values.data()), values.size() * sizeof(double));
}

}  // namespace

void save_checkpoint(const TwoPassModel& model, const OptimizerState* optimizer,
                     std::span<const std::string> optimizer_params,
                     const std::filesystem::path& path) {
  const auto params = model.parameters();
  json meta = {{"config", config_json(model.config)},
               {"vocab", model.vocab.tokens()},
               {"semantic_pretrained", model.semantic_pretrained},
               {"stage1_trained", model.stage1_trained},
               {"stage2_trained", model.stage2_trained}};
  if (optimizer != nullptr) {
    if (optimizer_params.size() != optimizer->first_moment.size())
      throw std::invalid_argument("save_checkpoint: optimizer parameter names do not match state");
    const auto& c = optimizer->config;
    meta["optimizer"] = {{"step", optimizer->step},
                         {"peak_lr", c.peak_lr},
                         {"warmup_steps", c.warmup_steps},
                         {"beta1", c.beta1},
                         {"beta2", c.beta2},
                         {"eps", c.eps},
                         {"params", std::vector<std::string>(optimizer_params.begin(),
                                                             optimizer_params.end())}};
  }
  const std::string meta_text = meta.dump();

  std::string payload;
  put<std::uint64_t>(payload, meta_text.size());
  payload += meta_text;
  std::uint32_t count = static_cast<std::uint32_t>(params.size());
  if (optimizer != nullptr) count += 2 * static_cast<std::uint32_t>(optimizer_params.size());
  put<std::uint32_t>(payload, count);
  for (const auto& p : params) put_tensor(payload, p.name, p.tensor.shape(), p.tensor.data());
  if (optimizer != nullptr) {
    for (std::size_t i = 0; i < optimizer_params.size(); ++i) {
      const auto& m = optimizer->first_moment[i];
      const auto& v = optimizer->second_moment[i];
      put_tensor(payload, "opt.m/" + optimizer_params[i], {m.size()}, m);
      put_tensor(payload, "opt.v/" + optimizer_params[i], {v.size()}, v);
    }
  }

  std::string file(kMagic, sizeof kMagic);
  put<std::uint32_t>(file, kCheckpointVersion);
  put<std::uint64_t>(file, payload.size());
  file += payload;
  put<std::uint32_t>(file, codec::crc32({reinterpret_cast<const std::uint8_t*>(payload.data()),
                                         payload.size()}));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out.write(file.data(), static_cast<std::streamsize>(file.size()));
  if (!out) throw std::runtime_error("write failed for checkpoint " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string file = ss.str();
  constexpr std::size_t kHeader = sizeof kMagic + sizeof(std::uint32_t) + sizeof(std::uint64_t);
  if (file.size() < kHeader || std::memcmp(file.data(), kMagic, sizeof kMagic) != 0)
    throw CheckpointError(path.string() + ": not a checkpoint file");
  Reader head(std::string_view(file).substr(sizeof kMagic, kHeader - sizeof kMagic));
  const auto version = head.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw CheckpointError(path.string() + ": unsupported checkpoint version " +
                          std::to_string(version) + " (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  const auto payload_len = head.get<std::uint64_t>();
  if (file.size() != kHeader + payload_len + sizeof(std::uint32_t))
    throw CheckpointError(path.string() + ": length check failed, file is " +
                          std::to_string(file.size()) + " bytes, header expects " +
                          std::to_string(kHeader + payload_len + sizeof(std::uint32_t)));
  const std::string_view payload = std::string_view(file).substr(kHeader, payload_len);
  std::uint32_t stored;
  std::memcpy(&stored, file.data() + kHeader + payload_len, sizeof stored);
  const auto actual =
      codec::crc32({reinterpret_cast<const std::uint8_t*>(payload.data()), payload.size()});
  if (stored != actual) throw CheckpointError(path.string() + ": checksum mismatch");

  Reader r(payload);
  json meta;
  try {
    meta = json::parse(r.bytes(r.get<std::uint64_t>()));
  } catch (const json::exception& e) {
    throw CheckpointError(path.string() + ": bad metadata: " + e.what());
  }
  std::map<std::string, std::pair<Shape, std::vector<double>>> tensors;
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name(r.bytes(r.get<std::uint32_t>()));
    Shape shape(r.get<std::uint32_t>());
    std::size_t n = 1;
    for (auto& d : shape) {
      d = r.get<std::uint64_t>();
      n *= d;
    }
    std::vector<double> values(n);
    const auto raw = r.bytes(n * sizeof(double));
    std::memcpy(values.data(), raw.data(), raw.size());
    tensors[name] = {std::move(shape), std::move(values)};
  }
  if (!r.done()) throw CheckpointError(path.string() + ": trailing bytes in payload");

  LoadedCheckpoint out;
  try {
    out.model = TwoPassModel::create(config_from(meta.at("config")),
                                     Vocabulary::from_tokens(meta.at("vocab")));
    out.model.semantic_pretrained = meta.at("semantic_pretrained");
    out.model.stage1_trained = meta.at("stage1_trained");
    out.model.stage2_trained = meta.at("stage2_trained");
  } catch (const json::exception& e) {
    throw CheckpointError(path.string() + ": bad metadata: " + e.what());
  }
  for (auto& p : out.model.parameters()) {
    auto it = tensors.find(p.name);
    if (it == tensors.end()) throw CheckpointError(path.string() + ": missing tensor " + p.name);
    if (it->second.first != p.tensor.shape())
      throw CheckpointError(path.string() + ": tensor " + p.name + " has shape " +
                            shape_str(it->second.first) + ", model expects " +
                            shape_str(p.tensor.shape()));
    std::copy(it->second.second.begin(), it->second.second.end(), p.tensor.data().begin());
  }
  if (meta.contains("optimizer")) {
    const auto& o = meta["optimizer"];
    OptimizerState st;
    st.step = o.at("step");
    st.config.peak_lr = o.at("peak_lr");
    st.config.warmup_steps = o.at("warmup_steps");
    st.config.beta1 = o.at("beta1");
    st.config.beta2 = o.at("beta2");
    st.config.eps = o.at("eps");
    out.optimizer_params = o.at("params").get<std::vector<std::string>>();
    for (const auto& name : out.optimizer_params) {
      auto m = tensors.find("opt.m/" + name);
      auto v = tensors.find("opt.v/" + name);
      if (m == tensors.end() || v == tensors.end())
        throw CheckpointError(path.string() + ": missing optimizer moments for " + name);
      st.first_moment.push_back(m->second.second);
      st.second_moment.push_back(v->second.second);
    }
    out.optimizer = std::move(st);
  }
  return out;
}

}  // namespace dslu
