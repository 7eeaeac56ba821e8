#include "fgan/weight_store.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include "fgan/rng.hpp"

namespace fgan {

namespace {

constexpr char kMagic[4] = {'F', 'G', 'W', '1'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>((bits >> (8 * i)) & 0xff));
}

struct Reader {
  const std::vector<std::uint8_t>& bytes;
  std::size_t pos = 0;

  bool eof() const { return pos >= bytes.size(); }
  void need(std::size_t n, const char* what) {
    if (pos + n > bytes.size())
      throw std::runtime_error(std::string("weights: truncated container while reading ") + what);
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  double f64(const char* what) {
    need(8, what);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[pos + i]) << (8 * i);
    pos += 8;
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
};

}  // namespace

TensorXd& WeightStore::add(const std::string& name, TensorXd t) {
  if (name.empty()) throw std::invalid_argument("weights: empty tensor name");
  if (contains(name)) throw std::invalid_argument("weights: duplicate tensor name " + name);
  order_.push_back(name);
  return map_.emplace(name, std::move(t)).first->second;
}

TensorXd& WeightStore::at(const std::string& name) {
  auto it = map_.find(name);
  if (it == map_.end()) throw std::out_of_range("weights: no tensor named " + name);
  return it->second;
}

const TensorXd& WeightStore::at(const std::string& name) const {
  auto it = map_.find(name);
  if (it == map_.end()) throw std::out_of_range("weights: no tensor named " + name);
  return it->second;
}

std::vector<std::string> WeightStore::names_with_prefix(const std::string& prefix) const {
  std::vector<std::string> out;
  for (const auto& n : order_)
    if (n.rfind(prefix, 0) == 0) out.push_back(n);
  return out;
}

WeightStore WeightStore::clone() const {
  WeightStore copy;
  for (const auto& n : order_) copy.add(n, map_.at(n).detached());
  return copy;
}

void WeightStore::set_requires_grad(bool rg) {
  for (const auto& n : order_) map_.at(n).set_requires_grad(rg);
}

void WeightStore::zero_grad() {
  for (const auto& n : order_) map_.at(n).zero_grad();
}

std::vector<std::uint8_t> WeightStore::serialize() const {
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  for (const auto& name : order_) {
    const TensorXd& t = map_.at(name);
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (Eigen::Index d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    for (Eigen::Index i = 0; i < t.size(); ++i) put_f64(out, t.values()(i));
  }
  return out;
}

WeightStore WeightStore::deserialize(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw std::runtime_error("weights: bad magic, not an FGW1 container");
  Reader r{bytes, 4};
  WeightStore ws;
  while (!r.eof()) {
    const std::uint32_t len = r.u32("name length");
    r.need(len, "name");
    std::string name(reinterpret_cast<const char*>(bytes.data()) + r.pos, len);
    r.pos += len;
    const std::uint32_t rank = r.u32("rank");
    Shape shape(rank);
    for (std::uint32_t i = 0; i < rank; ++i)
      shape[i] = static_cast<Eigen::Index>(r.u32("dimension"));
    TensorXd t = TensorXd::zeros(shape);
    for (Eigen::Index i = 0; i < t.size(); ++i) t.values()(i) = r.f64("value");
    t.check_finite("weights load");
    ws.add(name, std::move(t));
  }
  return ws;
}

void WeightStore::save(const std::string& path) const {
  const auto bytes = serialize();
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("weights: cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("weights: short write to " + path);
}

WeightStore WeightStore::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("weights: cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

std::uint64_t WeightStore::checksum() const {
  const auto bytes = serialize();
  return fnv1a64(bytes.data(), bytes.size());
}

WeightStore extract_prefix(const WeightStore& store, const std::string& prefix) {
  WeightStore out;
  for (const auto& n : store.names_with_prefix(prefix)) out.add(n, store.at(n).detached());
  return out;
}

void merge_into(WeightStore& dst, const WeightStore& src) {
  for (const auto& n : src.names()) dst.add(n, src.at(n).detached());
}

}  // namespace fgan
