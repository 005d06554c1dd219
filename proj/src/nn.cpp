#include "edgereg/nn.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "edgereg/errors.hpp"

namespace edgereg {

namespace {

constexpr char kMagic[5] = {'E', 'R', 'N', 'W', '1'};

std::uint64_t name_stream(const std::string &name) {
  // FNV-1a over the name gives each parameter its own init stream.
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : name) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

void write_u64(std::ostream &os, std::uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char *>(buf), 8);
}

bool read_u64(std::istream &is, std::uint64_t &v) {
  unsigned char buf[8];
  is.read(reinterpret_cast<char *>(buf), 8);
  if (is.gcount() != 8) return false;
  v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return true;
}

void write_f64(std::ostream &os, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  write_u64(os, bits);
}

bool read_f64(std::istream &is, double &d) {
  std::uint64_t bits;
  if (!read_u64(is, bits)) return false;
  std::memcpy(&d, &bits, 8);
  return true;
}

}  // namespace

Tensor &ParamStore::create(const std::string &name, Shape shape, std::uint64_t seed) {
  if (contains(name)) throw StateError("parameter already registered: " + name);
  const std::int64_t n = shape_size(shape);
  Tensor t = Tensor::zeros(shape);
  // Glorot uniform. For rank-2 weights fan_in/fan_out are the two dims; for
  // vectors both fans collapse to the length.
  std::int64_t fan_in = n, fan_out = n;
  if (shape.size() == 2) {
    fan_in = shape[0];
    fan_out = shape[1];
  }
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Rng rng = Rng::fork(seed, name_stream(name));
  for (auto &x : t.data) x = rng.uniform(-limit, limit);
  t.requires_grad = true;
  t.ensure_grad();
  order_.push_back(name);
  return params_.emplace(name, std::move(t)).first->second;
}

Tensor &ParamStore::create_with(const std::string &name, Tensor value) {
  if (contains(name)) throw StateError("parameter already registered: " + name);
  value.requires_grad = true;
  value.ensure_grad();
  order_.push_back(name);
  return params_.emplace(name, std::move(value)).first->second;
}

bool ParamStore::contains(const std::string &name) const {
  return params_.find(name) != params_.end();
}

Tensor &ParamStore::get(const std::string &name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw StateError("unknown parameter: " + name);
  return it->second;
}

const Tensor &ParamStore::get(const std::string &name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw StateError("unknown parameter: " + name);
  return it->second;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto &kv : params_) n += kv.second.data.size();
  return n;
}

void ParamStore::zero_grads() {
  for (auto &kv : params_) kv.second.zero_grad();
}

double ParamStore::grad_norm() const {
  double sq = 0.0;
  for (const auto &kv : params_)
    for (double g : kv.second.grad) sq += g * g;
  return std::sqrt(sq);
}

void ParamStore::save(const std::string &path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path);
  os.write(kMagic, sizeof(kMagic));
  for (const auto &name : order_) {
    const Tensor &t = params_.at(name);
    write_u64(os, name.size());
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u64(os, t.shape.size());
    for (std::int64_t d : t.shape) write_u64(os, static_cast<std::uint64_t>(d));
    for (double x : t.data) write_f64(os, x);
  }
  if (!os) throw IoError("checkpoint write failed: " + path);
}

void ParamStore::load(const std::string &path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  char magic[5];
  is.read(magic, sizeof(magic));
  if (is.gcount() != sizeof(magic) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw FormatError("not a checkpoint file: " + path);

  std::size_t seen = 0;
  for (;;) {
    std::uint64_t name_len;
    if (!read_u64(is, name_len)) break;  // clean EOF
    if (name_len > (1u << 20)) throw FormatError("checkpoint name length is implausible");
    std::string name(name_len, '\0');
    is.read(name.data(), static_cast<std::streamsize>(name_len));
    if (static_cast<std::uint64_t>(is.gcount()) != name_len)
      throw FormatError("truncated checkpoint record name");
    std::uint64_t rank;
    if (!read_u64(is, rank)) throw FormatError("truncated checkpoint record header");
    if (rank > 8) throw FormatError("checkpoint tensor rank is implausible");
    Shape shape(rank);
    std::int64_t count = 1;
    for (std::uint64_t i = 0; i < rank; ++i) {
      std::uint64_t d;
      if (!read_u64(is, d)) throw FormatError("truncated checkpoint dims");
      shape[i] = static_cast<std::int64_t>(d);
      count *= shape[i];
    }
    auto it = params_.find(name);
    if (it == params_.end())
      throw FormatError("checkpoint has unknown parameter: " + name);
    if (it->second.shape != shape)
      throw FormatError("checkpoint shape mismatch for " + name + ": file " +
                        shape_str(shape) + " vs model " + shape_str(it->second.shape));
    for (std::int64_t i = 0; i < count; ++i)
      if (!read_f64(is, it->second.data[static_cast<std::size_t>(i)]))
        throw FormatError("truncated checkpoint data for " + name);
    ++seen;
  }
  if (seen != order_.size())
    throw FormatError("checkpoint holds " + std::to_string(seen) + " tensors, model expects " +
                      std::to_string(order_.size()));
}

AdamOptimizer::AdamOptimizer(ParamStore &store, double lr, double beta1, double beta2,
                             double eps, double max_grad_norm)
    : store_(store), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps),
      max_grad_norm_(max_grad_norm) {}

void AdamOptimizer::step() {
  ++t_;
  double scale = 1.0;
  if (max_grad_norm_ > 0.0) {
    const double norm = store_.grad_norm();
    if (norm > max_grad_norm_) scale = max_grad_norm_ / norm;
  }
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (const auto &name : store_.names()) {
    Tensor &p = store_.get(name);
    auto &m = m_[name];
    auto &v = v_[name];
    if (m.empty()) {
      m.assign(p.data.size(), 0.0);
      v.assign(p.data.size(), 0.0);
    }
    for (std::size_t i = 0; i < p.data.size(); ++i) {
      const double g = p.grad[i] * scale;
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
      const double mh = m[i] / bc1;
      const double vh = v[i] / bc2;
      p.data[i] -= lr_ * mh / (std::sqrt(vh) + eps_);
    }
  }
}

Linear::Linear(ParamStore &store, const std::string &prefix, std::int64_t in,
               std::int64_t out, std::uint64_t seed, bool with_bias)
    : in_(in), out_(out) {
  const std::string wn = prefix + ".w";
  w_ = store.contains(wn) ? &store.get(wn) : &store.create(wn, {in, out}, seed);
  if (w_->shape != Shape{in, out})
    throw StateError("layer " + prefix + " reused with different dims");
  if (with_bias) {
    const std::string bn = prefix + ".b";
    b_ = store.contains(bn) ? &store.get(bn)
                            : &store.create_with(bn, Tensor::zeros({out}));
  }
}

Var Linear::operator()(Tape &t, Var x) const {
  Var y = t.matmul(x, t.param(w_));
  if (b_ != nullptr) y = t.add(y, t.param(b_));
  return y;
}

Mlp::Mlp(ParamStore &store, const std::string &prefix,
         const std::vector<std::int64_t> &dims, std::uint64_t seed, bool with_bias) {
  if (dims.size() < 2) throw ValidationError("mlp needs at least two dims");
  for (std::size_t i = 0; i + 1 < dims.size(); ++i)
    layers_.emplace_back(store, prefix + "." + std::to_string(i), dims[i], dims[i + 1],
                         seed, with_bias);
}

Var Mlp::operator()(Tape &t, Var x) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    x = layers_[i](t, x);
    if (i + 1 < layers_.size()) x = t.relu(x);
  }
  return x;
}

}  // namespace edgereg
