#include "shadowdiff/checkpoint.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace shadowdiff {

namespace {

constexpr char kMagic[8] = {'S', 'H', 'D', 'W', 'D', 'I', 'F', 'F'};

class Writer {
 public:
  template <typename V>
  void put(V v) {
    static_assert(std::is_trivially_copyable_v<V>);
    buf_.append(reinterpret_cast<const char*>(&v), sizeof(V));
  }
  void raw(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
  void str(const std::string& s) {
    put(std::uint32_t(s.size()));
    raw(s.data(), s.size());
  }
  std::string take() { return std::move(buf_); }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(const std::string& b) : b_(b) {}
  template <typename V>
  V get() {
    V v;
    raw(&v, sizeof(V));
    return v;
  }
  void raw(void* p, std::size_t n) {
    if (n > b_.size() - pos_) throw DataError("truncated checkpoint");
    std::memcpy(p, b_.data() + pos_, n);
    pos_ += n;
  }
  std::string str() {
    const auto n = get<std::uint32_t>();
    std::string s(n, '\0');
    raw(s.data(), n);
    return s;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  const std::string& b_;
  std::size_t pos_ = 0;
};

std::size_t dtype_size(DType d) {
  switch (d) {
    case DType::f32: return 4;
    case DType::f64: return 8;
  }
  throw DataError("unknown checkpoint dtype " + std::to_string(int(d)));
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& c) {
  Writer w;
  w.raw(kMagic, sizeof(kMagic));
  w.put(Checkpoint::kVersion);
  const auto& s = c.schedule;
  w.put(std::int32_t(s.T));
  w.put(s.beta_min);
  w.put(s.beta_max);
  w.put(std::uint32_t(s.alpha_bar.size()));
  w.raw(s.alpha_bar.data(), s.alpha_bar.size() * sizeof(double));
  if (s.beta_bar.size() != s.alpha_bar.size()) throw std::invalid_argument("schedule tables differ in length");
  w.raw(s.beta_bar.data(), s.beta_bar.size() * sizeof(double));
  w.str(c.meta);
  w.put(std::uint32_t(c.records.size()));
  for (const auto& r : c.records) {
    w.str(r.name);
    w.put(std::uint8_t(r.dtype));
    w.put(std::uint32_t(r.shape.size()));
    for (auto d : r.shape) w.put(std::uint64_t(d));
    if (r.bytes.size() != shape_numel(r.shape) * dtype_size(r.dtype))
      throw std::invalid_argument("record " + r.name + " byte size does not match its shape");
    w.raw(r.bytes.data(), r.bytes.size());
  }
  return w.take();
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  Reader rd(bytes);
  char magic[8];
  rd.raw(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw DataError("not a shadowdiff checkpoint (bad magic)");
  const auto version = rd.get<std::uint32_t>();
  if (version != Checkpoint::kVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint c;
  auto& s = c.schedule;
  s.T = rd.get<std::int32_t>();
  s.beta_min = rd.get<double>();
  s.beta_max = rd.get<double>();
  const auto n = rd.get<std::uint32_t>();
  if (s.T < 1 || n != std::uint32_t(s.T) + 1) throw DataError("corrupt schedule block");
  s.alpha_bar.resize(n);
  s.beta_bar.resize(n);
  rd.raw(s.alpha_bar.data(), n * sizeof(double));
  rd.raw(s.beta_bar.data(), n * sizeof(double));
  s.sqrt_alpha_bar.resize(n);
  s.sqrt_one_minus_alpha_bar.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    s.sqrt_alpha_bar[i] = std::sqrt(s.alpha_bar[i]);
    s.sqrt_one_minus_alpha_bar[i] = std::sqrt(1.0 - s.alpha_bar[i]);
  }
  c.meta = rd.str();
  const auto count = rd.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointRecord r;
    r.name = rd.str();
    r.dtype = DType(rd.get<std::uint8_t>());
    const auto nd = rd.get<std::uint32_t>();
    if (nd > 8) throw DataError("corrupt record rank in " + r.name);
    for (std::uint32_t k = 0; k < nd; ++k) r.shape.push_back(std::size_t(rd.get<std::uint64_t>()));
    r.bytes.resize(shape_numel(r.shape) * dtype_size(r.dtype));
    rd.raw(r.bytes.data(), r.bytes.size());
    c.records.push_back(std::move(r));
  }
  if (!rd.done()) throw DataError("trailing bytes after checkpoint records");
  return c;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  const std::string bytes = serialize_checkpoint(c);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  os.write(bytes.data(), std::streamsize(bytes.size()));
  if (!os) throw DataError("cannot write checkpoint " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace shadowdiff
