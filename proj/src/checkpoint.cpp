#include "ssn/checkpoint.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

namespace ssn::checkpoint {

namespace {

static_assert(sizeof(float) == 4 && std::numeric_limits<float>::is_iec559);

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(Real v) { u32(std::bit_cast<std::uint32_t>(static_cast<float>(v))); }
  void text(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out.insert(out.end(), s.begin(), s.end());
  }
  void tensor(const std::string& name, const Shape& shape, std::span<const Real> values) {
    text(name);
    u32(static_cast<std::uint32_t>(shape.size()));
    for (int d : shape) u32(static_cast<std::uint32_t>(d));
    for (Real v : values) f32(v);
  }
  Bytes out;
};

class Reader {
 public:
  explicit Reader(const Bytes& b) : bytes_(b) {}
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  Real f32() { return static_cast<Real>(std::bit_cast<float>(u32())); }
  std::string text() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(bytes_.begin() + pos_, bytes_.begin() + pos_ + n);
    pos_ += n;
    return s;
  }
  void magic() {
    need(4);
    if (std::memcmp(bytes_.data(), kMagic, 4) != 0) throw CheckpointError("checkpoint: bad magic bytes");
    pos_ += 4;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw CheckpointError("checkpoint: truncated at byte " + std::to_string(pos_));
  }
  const Bytes& bytes_;
  std::size_t pos_ = 0;
};

struct Stored {
  Shape shape;
  std::vector<Real> values;
};

std::string real_text(Real v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

Real round_f32(Real v) { return static_cast<Real>(static_cast<float>(v)); }

template <class F>
void for_each_tensor(const train::TrainState& s, F&& f) {
  const auto store = [&](const std::string& prefix, const model::ParamStore& p, const train::Adam& opt) {
    for (std::size_t k = 0; k < p.size(); ++k) f(prefix + "/" + p.names()[k], p.values()[k].shape(), p.values()[k].data());
    for (std::size_t k = 0; k < p.size(); ++k)
      f(prefix + "_opt.m/" + p.names()[k], p.values()[k].shape(), std::span<const Real>(opt.m[k]));
    for (std::size_t k = 0; k < p.size(); ++k)
      f(prefix + "_opt.v/" + p.names()[k], p.values()[k].shape(), std::span<const Real>(opt.v[k]));
  };
  store("g", s.g, s.g_opt);
  store("d", s.d, s.d_opt);
}

std::map<std::string, std::string> parse_state(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) throw CheckpointError("checkpoint: bad state line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return kv;
}

template <class T>
T state_number(const std::map<std::string, std::string>& kv, const std::string& key) {
  const auto it = kv.find(key);
  if (it == kv.end()) throw CheckpointError("checkpoint: state is missing " + key);
  T v{};
  const auto [ptr, ec] = std::from_chars(it->second.data(), it->second.data() + it->second.size(), v);
  if (ec != std::errc() || ptr != it->second.data() + it->second.size()) {
    throw CheckpointError("checkpoint: bad state value for " + key);
  }
  return v;
}

void restore(const std::string& prefix, model::ParamStore& p, train::Adam& opt,
             std::map<std::string, Stored>& tensors) {
  const auto take = [&](const std::string& name, const Shape& shape) {
    const auto it = tensors.find(name);
    if (it == tensors.end()) throw CheckpointError("checkpoint: missing tensor " + name);
    if (it->second.shape != shape) {
      throw CheckpointError("checkpoint: tensor " + name + " has shape " + shape_str(it->second.shape) +
                            ", config expects " + shape_str(shape));
    }
    std::vector<Real> v = std::move(it->second.values);
    tensors.erase(it);
    return v;
  };
  for (std::size_t k = 0; k < p.size(); ++k) {
    const Shape shape = p.values()[k].shape();
    p.set(k, Tensor(shape, take(prefix + "/" + p.names()[k], shape)));
    opt.m[k] = take(prefix + "_opt.m/" + p.names()[k], shape);
    opt.v[k] = take(prefix + "_opt.v/" + p.names()[k], shape);
  }
}

}  // namespace

Bytes serialize(const train::TrainState& s) {
  Writer w;
  w.out.insert(w.out.end(), std::begin(kMagic), std::end(kMagic));
  w.u32(kVersion);
  w.text(to_text(s.config));
  std::ostringstream rng;
  rng << s.rng;
  w.text("step = " + std::to_string(s.step) + "\npl_mean = " + real_text(s.pl_mean) +
         "\ng_opt.t = " + std::to_string(s.g_opt.t) + "\nd_opt.t = " + std::to_string(s.d_opt.t) +
         "\nrng = " + rng.str() + "\n");
  std::uint32_t count = 0;
  for_each_tensor(s, [&](const std::string&, const Shape&, std::span<const Real>) { ++count; });
  w.u32(count);
  for_each_tensor(s, [&](const std::string& name, const Shape& shape, std::span<const Real> v) {
    w.tensor(name, shape, v);
  });
  return std::move(w.out);
}

train::TrainState deserialize(const Bytes& bytes) {
  Reader r(bytes);
  r.magic();
  const std::uint32_t version = r.u32();
  if (version != kVersion) {
    throw CheckpointError("checkpoint: version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kVersion) + ")");
  }
  const TrainConfig cfg = parse_config(r.text());
  const auto state = parse_state(r.text());

  std::map<std::string, Stored> tensors;
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.text();
    Stored t;
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw CheckpointError("checkpoint: tensor " + name + " has rank " + std::to_string(rank));
    for (std::uint32_t d = 0; d < rank; ++d) t.shape.push_back(static_cast<int>(r.u32()));
    t.values.resize(shape_numel(t.shape));
    for (Real& v : t.values) v = r.f32();
    if (!tensors.emplace(std::move(name), std::move(t)).second) {
      throw CheckpointError("checkpoint: duplicate tensor");
    }
  }
  if (!r.done()) throw CheckpointError("checkpoint: trailing bytes");

  train::TrainState s = train::TrainState::init(cfg);
  restore("g", s.g, s.g_opt, tensors);
  restore("d", s.d, s.d_opt, tensors);
  if (!tensors.empty()) throw CheckpointError("checkpoint: unexpected tensor " + tensors.begin()->first);
  s.step = state_number<int>(state, "step");
  s.pl_mean = state_number<double>(state, "pl_mean");
  s.g_opt.t = state_number<std::uint64_t>(state, "g_opt.t");
  s.d_opt.t = state_number<std::uint64_t>(state, "d_opt.t");
  const auto it = state.find("rng");
  if (it == state.end()) throw CheckpointError("checkpoint: state is missing rng");
  std::istringstream rng(it->second);
  rng >> s.rng;
  if (!rng) throw CheckpointError("checkpoint: bad rng state");
  return s;
}

void save(const train::TrainState& state, const std::string& path) {
  const Bytes b = serialize(state);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CheckpointError("checkpoint: cannot write " + path);
  f.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
  if (!f) throw CheckpointError("checkpoint: write failed for " + path);
}

train::TrainState load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("checkpoint: cannot read " + path);
  const Bytes b((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize(b);
}

void round_to_storage(train::TrainState& s) {
  const auto round_store = [](model::ParamStore& p, train::Adam& opt) {
    for (std::size_t k = 0; k < p.size(); ++k) {
      std::vector<Real> v = p.values()[k].to_vector();
      for (Real& x : v) x = round_f32(x);
      p.set(k, Tensor(p.values()[k].shape(), std::move(v)));
      for (Real& x : opt.m[k]) x = round_f32(x);
      for (Real& x : opt.v[k]) x = round_f32(x);
    }
  };
  round_store(s.g, s.g_opt);
  round_store(s.d, s.d_opt);
}

}  // namespace ssn::checkpoint
