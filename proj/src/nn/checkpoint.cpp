#include "sparsecap/nn/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "sparsecap/errors.hpp"

namespace sparsecap::nn {
namespace {

constexpr char kMagic[8] = {'S', 'C', 'A', 'P', 'C', 'K', 'P', 'T'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double d) {
  std::uint64_t u;
  std::memcpy(&u, &d, 8);
  put_u64(out, u);
}

class Reader {
 public:
  Reader(const std::string& bytes, const std::string& path) : bytes_(bytes), path_(path) {}

  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw ValidationError("checkpoint '" + path_ + "' is truncated");
  }
  std::uint64_t uint(int width) {
    need(width);
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += width;
    return v;
  }
  std::string text(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  double f64_at(std::size_t at) const {
    if (at + 8 > bytes_.size()) throw ValidationError("checkpoint '" + path_ + "' payload is truncated");
    std::uint64_t u = 0;
    for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[at + i])) << (8 * i);
    double d;
    std::memcpy(&d, &u, 8);
    return d;
  }
  std::size_t pos() const { return pos_; }

 private:
  const std::string& bytes_;
  const std::string& path_;
  std::size_t pos_ = 0;
};

}  // namespace

const Matrix& Checkpoint::tensor(const std::string& name) const {
  for (const auto& [n, m] : tensors) {
    if (n == name) return m;
  }
  throw ValidationError("checkpoint has no tensor '" + name + "'");
}

bool Checkpoint::has(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.first == name) return true;
  }
  return false;
}

const std::string& Checkpoint::meta_value(const std::string& key) const {
  const auto it = meta.find(key);
  if (it == meta.end()) throw ValidationError("checkpoint has no metadata key '" + key + "'");
  return it->second;
}

Checkpoint snapshot(const ParameterSet& params, std::map<std::string, std::string> meta) {
  Checkpoint c;
  c.meta = std::move(meta);
  for (const auto& p : params.items()) c.tensors.emplace_back(p.name, p.var.value());
  return c;
}

void restore(const Checkpoint& checkpoint, const ParameterSet& params) {
  for (const auto& p : params.items()) {
    const Matrix& m = checkpoint.tensor(p.name);
    if (m.rows() != p.var.rows() || m.cols() != p.var.cols()) {
      throw ValidationError("checkpoint tensor '" + p.name + "' has shape " + std::to_string(m.rows()) + "x" +
                            std::to_string(m.cols()) + ", expected " + std::to_string(p.var.rows()) + "x" +
                            std::to_string(p.var.cols()));
    }
    Var v = p.var;
    v.mutable_value() = m;
  }
}

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint) {
  std::string meta;
  for (const auto& [k, v] : checkpoint.meta) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw ValidationError("checkpoint metadata '" + k + "' contains '=' or a newline");
    }
    meta += k + "=" + v + "\n";
  }
  std::string out(kMagic, sizeof kMagic);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(meta.size()));
  out += meta;
  put_u32(out, static_cast<std::uint32_t>(checkpoint.tensors.size()));
  std::uint64_t offset = 0;
  for (const auto& [name, m] : checkpoint.tensors) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, 2);
    put_u64(out, static_cast<std::uint64_t>(m.rows()));
    put_u64(out, static_cast<std::uint64_t>(m.cols()));
    put_u64(out, offset);
    offset += static_cast<std::uint64_t>(m.size()) * 8;
  }
  for (const auto& t : checkpoint.tensors) {
    const Matrix& m = t.second;
    for (Eigen::Index i = 0; i < m.size(); ++i) put_f64(out, m.data()[i]);
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot write checkpoint '" + path + "'");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw ValidationError("failed writing checkpoint '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot open checkpoint '" + path + "'");
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Reader r(bytes, path);
  if (r.text(8) != std::string(kMagic, sizeof kMagic)) throw ValidationError("'" + path + "' is not a checkpoint file");
  const auto version = r.uint(4);
  if (version != kCheckpointVersion) {
    throw ValidationError("checkpoint '" + path + "' has unsupported version " + std::to_string(version));
  }
  Checkpoint c;
  std::istringstream meta(r.text(r.uint(4)));
  for (std::string line; std::getline(meta, line);) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ValidationError("checkpoint '" + path + "' has a malformed metadata line");
    c.meta[line.substr(0, eq)] = line.substr(eq + 1);
  }
  struct Entry {
    std::string name;
    std::uint64_t rows, cols, offset;
  };
  std::vector<Entry> entries(r.uint(4));
  for (auto& e : entries) {
    e.name = r.text(r.uint(4));
    const auto ndim = r.uint(4);
    if (ndim < 1 || ndim > 2) throw ValidationError("checkpoint tensor '" + e.name + "' has unsupported rank");
    e.rows = r.uint(8);
    e.cols = ndim == 2 ? r.uint(8) : 1;
    e.offset = r.uint(8);
  }
  const std::size_t payload = r.pos();
  for (const auto& e : entries) {
    Matrix m(static_cast<Eigen::Index>(e.rows), static_cast<Eigen::Index>(e.cols));
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = r.f64_at(payload + e.offset + 8 * static_cast<std::size_t>(i));
    c.tensors.emplace_back(e.name, std::move(m));
  }
  return c;
}

}  // namespace sparsecap::nn
