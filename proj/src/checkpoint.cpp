#include "dualpf/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "dualpf/errors.hpp"

namespace dualpf {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'D', 'P', 'F', 'C', 'K', 'P', 'T', '\0'};

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Writer {
 public:
  template <typename T>
  void pod(T v) {
    char raw[sizeof(T)];
    std::memcpy(raw, &v, sizeof(T));
    buf_.append(raw, sizeof(T));
  }
  void str(const std::string& s) {
    pod<std::uint64_t>(s.size());
    buf_ += s;
  }
  void tensor(const TensorRecord& t) {
    str(t.name);
    pod<std::uint32_t>(static_cast<std::uint32_t>(t.shape.rank()));
    for (auto d : t.shape.dims()) pod<std::uint64_t>(d);
    pod<std::uint64_t>(t.values.size() * sizeof(float));
    buf_.append(reinterpret_cast<const char*>(t.values.data()), t.values.size() * sizeof(float));
  }
  std::string& bytes() { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(const std::string& bytes) : buf_(bytes) {}
  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n) throw IntegrityError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  template <typename T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint64_t>();
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  TensorRecord tensor() {
    TensorRecord t;
    t.name = str();
    const auto rank = pod<std::uint32_t>();
    if (rank > 8) throw IntegrityError("checkpoint: tensor '" + t.name + "' has implausible rank");
    std::vector<std::size_t> dims(rank);
    for (auto& d : dims) d = pod<std::uint64_t>();
    t.shape = Shape(dims);
    const auto bytes = pod<std::uint64_t>();
    if (bytes != t.shape.numel() * sizeof(float))
      throw IntegrityError("checkpoint: tensor '" + t.name + "' payload of " + std::to_string(bytes) +
                           " bytes for shape " + t.shape.str());
    need(bytes);
    t.values.resize(t.shape.numel());
    std::memcpy(t.values.data(), buf_.data() + pos_, bytes);
    pos_ += bytes;
    return t;
  }
  std::size_t pos() const { return pos_; }

 private:
  const std::string& buf_;
  std::size_t pos_ = 0;
};

std::vector<float> to_float(std::span<const double> v) {
  std::vector<float> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i]);
  return out;
}

void copy_into(const TensorRecord& rec, const std::string& name, const Shape& shape, std::span<double> dst) {
  if (rec.name != name || rec.shape != shape)
    throw IntegrityError("checkpoint: expected '" + name + "' " + shape.str() + ", found '" + rec.name + "' " +
                         rec.shape.str());
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<double>(rec.values[i]);
}

}  // namespace

ModelState capture_model(const TranslationModel& model, const Adam* adam) {
  ModelState s;
  const ParamStore& store = model.params();
  for (auto id : store.ordered()) {
    s.params.push_back({store.name(id), store.shape(id), to_float(store.value(id))});
    if (adam) {
      s.first_moments.push_back({store.name(id), store.shape(id), to_float(adam->first_moments()[id])});
      s.second_moments.push_back({store.name(id), store.shape(id), to_float(adam->second_moments()[id])});
    }
  }
  if (adam) s.adam_steps = adam->steps();
  return s;
}

void restore_model(const ModelState& state, TranslationModel& model, Adam* adam) {
  ParamStore& store = model.params();
  const auto order = store.ordered();
  if (state.params.size() != order.size())
    throw IntegrityError("checkpoint: " + std::to_string(state.params.size()) + " tensors for a model with " +
                         std::to_string(order.size()));
  if (adam && (state.first_moments.size() != order.size() || state.second_moments.size() != order.size()))
    throw IntegrityError("checkpoint: optimizer moments missing");
  for (std::size_t k = 0; k < order.size(); ++k) {
    const auto id = order[k];
    copy_into(state.params[k], store.name(id), store.shape(id), store.value_mut(id));
    if (adam) {
      copy_into(state.first_moments[k], store.name(id), store.shape(id), adam->first_moments()[id]);
      copy_into(state.second_moments[k], store.name(id), store.shape(id), adam->second_moments()[id]);
    }
  }
  if (adam) adam->set_steps(state.adam_steps);
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  Writer w;
  w.bytes().append(kMagic, sizeof(kMagic));
  w.pod<std::uint32_t>(ckpt.version);
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(ckpt.mode));
  w.str(ckpt.config_text);
  w.pod<std::uint64_t>(ckpt.step);
  w.pod<std::uint64_t>(ckpt.rng_key);
  w.pod<std::uint64_t>(ckpt.rng_counter);
  for (const auto* vocab : {&ckpt.src_vocab, &ckpt.tgt_vocab}) {
    w.pod<std::uint64_t>(vocab->size());
    for (const auto& t : *vocab) w.str(t);
  }
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(ckpt.models.size()));
  for (const auto& m : ckpt.models) {
    w.pod<std::uint64_t>(m.adam_steps);
    for (const auto* list : {&m.params, &m.first_moments, &m.second_moments}) {
      w.pod<std::uint64_t>(list->size());
      for (const auto& t : *list) w.tensor(t);
    }
  }
  const std::uint64_t sum = fnv1a(w.bytes());
  w.pod<std::uint64_t>(sum);

  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IntegrityError("cannot write checkpoint " + tmp.string());
    out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
    out.flush();
    if (!out) throw IntegrityError("failed writing checkpoint " + tmp.string() + " (disk full?)");
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IntegrityError("cannot read checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < sizeof(kMagic) + 8 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
    throw IntegrityError("not a checkpoint: " + path.string());
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + bytes.size() - 8, 8);
  const std::string body = bytes.substr(0, bytes.size() - 8);
  Reader r(body);
  r.need(sizeof(kMagic));
  for (std::size_t k = 0; k < sizeof(kMagic); ++k) r.pod<char>();
  Checkpoint c;
  c.version = r.pod<std::uint32_t>();
  if (c.version != kCheckpointVersion)
    throw IntegrityError("checkpoint format version " + std::to_string(c.version) + " is not supported (expected " +
                         std::to_string(kCheckpointVersion) + ")");
  if (fnv1a(body) != stored) throw IntegrityError("checkpoint checksum mismatch: " + path.string());
  const auto mode = r.pod<std::uint32_t>();
  if (mode > static_cast<std::uint32_t>(TrainMode::DualPretrain)) throw IntegrityError("checkpoint: unknown mode");
  c.mode = static_cast<TrainMode>(mode);
  c.config_text = r.str();
  c.step = r.pod<std::uint64_t>();
  c.rng_key = r.pod<std::uint64_t>();
  c.rng_counter = r.pod<std::uint64_t>();
  for (auto* vocab : {&c.src_vocab, &c.tgt_vocab}) {
    const auto n = r.pod<std::uint64_t>();
    for (std::uint64_t k = 0; k < n; ++k) vocab->push_back(r.str());
  }
  const auto models = r.pod<std::uint32_t>();
  if (models == 0 || models > 2) throw IntegrityError("checkpoint: " + std::to_string(models) + " models");
  for (std::uint32_t k = 0; k < models; ++k) {
    ModelState m;
    m.adam_steps = r.pod<std::uint64_t>();
    for (auto* list : {&m.params, &m.first_moments, &m.second_moments}) {
      const auto n = r.pod<std::uint64_t>();
      for (std::uint64_t t = 0; t < n; ++t) list->push_back(r.tensor());
    }
    c.models.push_back(std::move(m));
  }
  if (r.pos() != body.size()) throw IntegrityError("checkpoint: trailing bytes");
  return c;
}

void require_mode(const Checkpoint& ckpt, TrainMode expected) {
  if (ckpt.mode != expected)
    throw ModeMismatchError("checkpoint was written in " + mode_name(ckpt.mode) + " mode, not " +
                            mode_name(expected));
}

}  // namespace dualpf
