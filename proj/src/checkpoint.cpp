#include "mscc/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace mscc {

namespace {

constexpr char kMagic[] = {'M', 'S', 'C', 'C', '1'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_.insert(out_.end(), s.begin(), s.end());
  }
  void raw(const char* p, std::size_t n) { out_.insert(out_.end(), p, p + n); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& in) : in_(in) {}
  void need(std::size_t n) const {
    if (pos_ + n > in_.size()) throw CheckpointError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  std::uint8_t u8() {
    need(1);
    return in_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in_[pos_++]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    std::uint32_t n = u32();
    need(n);
    std::string s(in_.begin() + static_cast<long>(pos_), in_.begin() + static_cast<long>(pos_ + n));
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == in_.size(); }
  std::size_t pos() const { return pos_; }

 private:
  const std::vector<std::uint8_t>& in_;
  std::size_t pos_ = 0;
};

void write_values(Writer& w, const Tensor& t) {
  for (double v : t.values()) w.f64(v);
}

void read_values(Reader& r, Tensor& t) {
  for (auto& v : t.values()) v = r.f64();
}

}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.raw(kMagic, sizeof(kMagic));
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(ckpt.metadata.size()));
  for (const auto& [k, v] : ckpt.metadata) {
    w.str(k);
    w.str(v);
  }
  w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) w.u64(d);
    write_values(w, t);
  }
  w.u8(ckpt.optimizer ? 1 : 0);
  if (ckpt.optimizer) {
    const auto& st = *ckpt.optimizer;
    if (st.m.size() != ckpt.optimizer_names.size() || st.v.size() != st.m.size()) {
      throw CheckpointError("optimizer state and names disagree in length");
    }
    w.u64(st.t);
    w.f64(st.config.lr);
    w.f64(st.config.beta1);
    w.f64(st.config.beta2);
    w.f64(st.config.epsilon);
    w.u32(static_cast<std::uint32_t>(st.m.size()));
    for (std::size_t i = 0; i < st.m.size(); ++i) {
      w.str(ckpt.optimizer_names[i]);
      write_values(w, st.m[i]);
      write_values(w, st.v[i]);
    }
  }
  return w.take();
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError("not an MSCC1 checkpoint (bad magic)");
  }
  Reader r(bytes);
  for (std::size_t i = 0; i < sizeof(kMagic); ++i) r.u8();
  std::uint32_t version = r.u32();
  if (version != kVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));

  Checkpoint ckpt;
  std::uint32_t n_meta = r.u32();
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    std::string k = r.str();
    ckpt.metadata[k] = r.str();
  }
  std::uint32_t n_tensor = r.u32();
  for (std::uint32_t i = 0; i < n_tensor; ++i) {
    std::string name = r.str();
    std::uint32_t rank = r.u32();
    Shape shape(rank);
    for (auto& d : shape) d = r.u64();
    r.need(shape_numel(shape) * 8);
    Tensor t(shape);
    read_values(r, t);
    ckpt.tensors.emplace_back(std::move(name), std::move(t));
  }
  if (r.u8()) {
    AdamState st;
    st.t = r.u64();
    st.config.lr = r.f64();
    st.config.beta1 = r.f64();
    st.config.beta2 = r.f64();
    st.config.epsilon = r.f64();
    std::uint32_t n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) {
      std::string name = r.str();
      const Tensor* param = ckpt.find(name);
      if (!param) throw CheckpointError("optimizer entry for unknown tensor " + name);
      Tensor m(param->shape()), v(param->shape());
      r.need(2 * m.size() * 8);
      read_values(r, m);
      read_values(r, v);
      st.m.push_back(std::move(m));
      st.v.push_back(std::move(v));
      ckpt.optimizer_names.push_back(std::move(name));
    }
    ckpt.optimizer = std::move(st);
  }
  if (!r.done()) throw CheckpointError("trailing bytes after checkpoint at " + std::to_string(r.pos()));
  return ckpt;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  auto bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("failed writing " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace mscc
