#include "neuroens/nn/tensor_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

#include "neuroens/error.hpp"

namespace neuroens::nn {

static_assert(std::endian::native == std::endian::little, "little-endian host required");

namespace {

class Writer {
 public:
  template <class T>
  void put(T v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  void put_string(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    buf_.insert(buf_.end(), s.begin(), s.end());
  }
  const std::vector<char>& bytes() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  Reader(std::vector<char> buf, std::string origin) : buf_(std::move(buf)), origin_(std::move(origin)) {}
  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string get_string() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  void need(std::size_t n) const {
    if (pos_ + n > buf_.size()) throw Error("truncated tensor archive " + origin_);
  }
  bool at_end() const { return pos_ == buf_.size(); }

 private:
  std::vector<char> buf_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace

const Tensor* TensorArchive::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

void save_archive(const TensorArchive& archive, const std::filesystem::path& path, ArchiveDtype dtype) {
  Writer w;
  w.put<char>('N');
  w.put<char>('T');
  w.put<char>('E');
  w.put<char>('N');
  w.put<std::uint32_t>(1);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(archive.metadata.size()));
  for (const auto& [k, v] : archive.metadata) {
    w.put_string(k);
    w.put_string(v);
  }
  w.put<std::uint32_t>(static_cast<std::uint32_t>(archive.tensors.size()));
  for (const auto& [name, t] : archive.tensors) {
    w.put_string(name);
    w.put<std::uint8_t>(dtype == ArchiveDtype::F32 ? 1 : 2);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) w.put<std::uint64_t>(d);
    for (double v : t.values()) {
      if (dtype == ArchiveDtype::F32) w.put<float>(static_cast<float>(v));
      else w.put<double>(v);
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
  if (!out) throw Error("write failed for " + path.string());
}

TensorArchive load_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open weight file " + path.string());
  Reader r({std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()}, path.string());
  char magic[4];
  for (char& c : magic) c = r.get<char>();
  if (std::string(magic, 4) != "NTEN") throw Error("unrecognized format: not a tensor archive: " + path.string());
  if (r.get<std::uint32_t>() != 1) throw Error("unsupported tensor archive version in " + path.string());
  TensorArchive a;
  const auto n_meta = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    std::string k = r.get_string();
    a.metadata[k] = r.get_string();
  }
  const auto n = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string name = r.get_string();
    const auto dtype = r.get<std::uint8_t>();
    if (dtype != 1 && dtype != 2) throw Error("unsupported tensor dtype in " + path.string());
    const auto rank = r.get<std::uint32_t>();
    std::vector<std::size_t> shape(rank);
    std::size_t count = 1;
    for (auto& d : shape) {
      d = static_cast<std::size_t>(r.get<std::uint64_t>());
      count *= d;
    }
    r.need(count * (dtype == 1 ? 4 : 8));
    std::vector<double> data(count);
    for (auto& v : data) v = dtype == 1 ? static_cast<double>(r.get<float>()) : r.get<double>();
    a.tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  if (!r.at_end()) throw Error("trailing bytes in tensor archive " + path.string());
  return a;
}

}  // namespace neuroens::nn
