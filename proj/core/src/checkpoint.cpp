#include "ergl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include <zlib.h>

#include "ergl/errors.hpp"

namespace ergl::pipeline {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

namespace {

constexpr char kMagic[8] = {'E', 'R', 'G', 'L', 'C', 'K', 'P', '1'};

class Writer {
 public:
  template <typename P>
  void pod(P v) {
    char buf[sizeof(P)];
    std::memcpy(buf, &v, sizeof(P));
    out_.append(buf, sizeof(P));
  }
  void str(const std::string& s) {
    pod(static_cast<std::uint32_t>(s.size()));
    out_ += s;
  }
  void raw(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
  std::string& bytes() { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  Reader(const std::string& bytes, std::size_t end) : bytes_(bytes), end_(end) {}

  template <typename P>
  P pod() {
    P v;
    std::memcpy(&v, take(sizeof(P)), sizeof(P));
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint32_t>();
    return std::string(take(n), n);
  }
  const char* take(std::size_t n) {
    if (n > end_ - pos_) throw IoError("checkpoint: record overruns payload");
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  bool done() const { return pos_ == end_; }

 private:
  const std::string& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

std::uint32_t crc_of(const std::string& bytes, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  const auto* p = reinterpret_cast<const Bytef*>(bytes.data());
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, p, chunk);
    p += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

const NamedTensor& find_tensor(const std::unordered_map<std::string, const NamedTensor*>& index,
                               const std::string& name, const Shape& shape) {
  auto it = index.find(name);
  if (it == index.end()) throw IoError("checkpoint: missing tensor " + name);
  if (it->second->value.shape() != shape) {
    throw IoError("checkpoint: tensor " + name + " has shape " +
                  shape_str(it->second->value.shape()) + ", model expects " + shape_str(shape));
  }
  return *it->second;
}

std::unordered_map<std::string, const NamedTensor*> index_tensors(const Checkpoint& ckpt) {
  std::unordered_map<std::string, const NamedTensor*> index;
  for (const NamedTensor& t : ckpt.tensors) index.emplace(t.name, &t);
  return index;
}

}  // namespace

std::vector<NamedTensor> model_state(ErglModel<float>& model) {
  std::vector<NamedTensor> out;
  ParamRegistry<float> reg = model.registry();
  for (const auto& e : reg.params()) out.push_back({e.name, e.param->value});
  for (const auto& e : reg.buffers()) out.push_back({e.name, *e.tensor});
  return out;
}

void append_optimizer_state(std::vector<NamedTensor>& out, ErglModel<float>& model,
                            const AdamWState<float>& state) {
  ParamRegistry<float> reg = model.registry();
  const auto& params = reg.params();
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw UsageError("optimizer state does not match the model's parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    out.push_back({"adamw.m." + params[i].name, state.m[i]});
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    out.push_back({"adamw.v." + params[i].name, state.v[i]});
  }
}

ErglModel<float> restore_model(const Checkpoint& ckpt) {
  ModelConfig mc = ckpt.config.model_config(ckpt.scene_vocab.size());
  if (ckpt.event_ids.size() != mc.num_events) {
    throw IoError("checkpoint: event_ids length does not match n_events");
  }
  ErglModel<float> model(mc, 0);
  const auto index = index_tensors(ckpt);
  ParamRegistry<float> reg = model.registry();
  for (const auto& e : reg.params()) {
    e.param->value = find_tensor(index, e.name, e.param->value.shape()).value;
  }
  for (const auto& e : reg.buffers()) {
    *e.tensor = find_tensor(index, e.name, e.tensor->shape()).value;
  }
  return model;
}

AdamWState<float> restore_optimizer(const Checkpoint& ckpt, ErglModel<float>& model) {
  AdamWState<float> state;
  state.options.lr = ckpt.config.lr;
  state.options.weight_decay = ckpt.config.weight_decay;
  state.step = ckpt.adam_step;
  const auto index = index_tensors(ckpt);
  ParamRegistry<float> reg = model.registry();
  for (const auto& e : reg.params()) {
    state.m.push_back(find_tensor(index, "adamw.m." + e.name, e.param->value.shape()).value);
    state.v.push_back(find_tensor(index, "adamw.v." + e.name, e.param->value.shape()).value);
  }
  return state;
}

std::string encode_checkpoint(const Checkpoint& ckpt, std::uint32_t version) {
  Writer w;
  w.raw(kMagic, sizeof kMagic);
  w.pod(version);
  w.str(to_config_text(ckpt.config));
  w.pod(static_cast<std::uint32_t>(ckpt.event_ids.size()));
  for (std::size_t id : ckpt.event_ids) w.pod(static_cast<std::uint32_t>(id));
  w.pod(static_cast<std::uint32_t>(ckpt.event_names.size()));
  for (const auto& s : ckpt.event_names) w.str(s);
  w.pod(static_cast<std::uint32_t>(ckpt.scene_vocab.size()));
  for (const auto& s : ckpt.scene_vocab) w.str(s);
  w.pod(ckpt.best_val_acc);
  w.pod(ckpt.best_epoch);
  w.pod(ckpt.adam_step);
  w.pod(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const NamedTensor& t : ckpt.tensors) {
    w.str(t.name);
    w.pod(static_cast<std::uint32_t>(t.value.dim()));
    for (std::size_t d : t.value.shape()) w.pod(static_cast<std::uint64_t>(d));
    w.raw(t.value.data(), t.value.size() * sizeof(float));
  }
  const std::uint32_t crc = crc_of(w.bytes(), w.bytes().size());
  w.pod(crc);
  return std::move(w.bytes());
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof kMagic + 8 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    // A file cut short of its header is indistinguishable from corruption.
    if (bytes.size() >= sizeof kMagic && std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
      throw IoError("not an ERGL checkpoint (bad magic)");
    }
    throw ChecksumError("checkpoint truncated");
  }
  const std::size_t payload = bytes.size() - 4;
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + payload, 4);
  if (crc_of(bytes, payload) != stored) {
    throw ChecksumError("checkpoint checksum mismatch (corrupt or truncated file)");
  }

  Reader r(bytes, payload);
  r.take(sizeof kMagic);
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw VersionError("checkpoint format version " + std::to_string(version) +
                       " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint c;
  const std::string config_text = r.str();
  for (const auto& [key, value] : parse_key_values(config_text, "checkpoint config")) {
    if (!apply_setting(c.config, key, value)) {
      throw IoError("checkpoint: unknown config key '" + key + "'");
    }
  }
  c.event_ids.resize(r.pod<std::uint32_t>());
  for (auto& id : c.event_ids) id = r.pod<std::uint32_t>();
  c.event_names.resize(r.pod<std::uint32_t>());
  for (auto& s : c.event_names) s = r.str();
  c.scene_vocab.resize(r.pod<std::uint32_t>());
  for (auto& s : c.scene_vocab) s = r.str();
  c.best_val_acc = r.pod<double>();
  c.best_epoch = r.pod<std::uint64_t>();
  c.adam_step = r.pod<std::uint64_t>();
  c.tensors.resize(r.pod<std::uint32_t>());
  for (NamedTensor& t : c.tensors) {
    t.name = r.str();
    Shape shape(r.pod<std::uint32_t>());
    for (auto& d : shape) d = static_cast<std::size_t>(r.pod<std::uint64_t>());
    std::vector<float> data(shape_numel(shape));
    const char* p = r.take(data.size() * sizeof(float));
    std::memcpy(data.data(), p, data.size() * sizeof(float));
    t.value = Tensor<float>(std::move(shape), std::move(data));
  }
  if (!r.done()) throw IoError("checkpoint: trailing bytes after tensors");
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const std::string bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str());
}

}  // namespace ergl::pipeline
