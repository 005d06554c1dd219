#include "edgereg/exchange.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "edgereg/errors.hpp"

namespace edgereg {

namespace {

// Columns [head*d_k, (head+1)*d_k) of m, realized as row gathers on the
// transpose because the tape has no column slice.
Var head_slice(Tape &t, Var m, std::int64_t head, std::int64_t d_k) {
  std::vector<std::int64_t> idx(static_cast<std::size_t>(d_k));
  std::iota(idx.begin(), idx.end(), head * d_k);
  return t.transpose(t.gather_rows(t.transpose(m), idx));
}

}  // namespace

AttentionParams::AttentionParams(ParamStore &store, const std::string &prefix, std::int64_t dim,
                                 std::uint64_t seed)
    : q(store, prefix + ".q", dim, dim, seed),
      k(store, prefix + ".k", dim, dim, seed),
      v(store, prefix + ".v", dim, dim, seed),
      out(store, prefix + ".o", dim, dim, seed) {}

Var attention(Tape &t, Var queries_from, Var keys_values_from, const AttentionParams &params,
              std::int64_t heads) {
  const Tensor &qin = t.value(queries_from);
  const Tensor &kin = t.value(keys_values_from);
  if (qin.vrows() < 1 || kin.vrows() < 1)
    throw ValidationError("attention requires at least one query and one key");
  const std::int64_t dim = params.q.in_dim();
  if (qin.vcols() != dim || kin.vcols() != dim)
    throw ValidationError("attention inputs must be D-wide");
  if (heads < 1 || dim % heads != 0)
    throw ValidationError("head count must divide the feature dim");
  const std::int64_t d_k = dim / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d_k));

  Var q = params.q(t, queries_from);
  Var k = params.k(t, keys_values_from);
  Var v = params.v(t, keys_values_from);

  Var merged;
  for (std::int64_t h = 0; h < heads; ++h) {
    const Var qh = heads == 1 ? q : head_slice(t, q, h, d_k);
    const Var kh = heads == 1 ? k : head_slice(t, k, h, d_k);
    const Var vh = heads == 1 ? v : head_slice(t, v, h, d_k);
    const Var weights = t.softmax(t.affine(t.matmul(qh, t.transpose(kh)), scale, 0.0));
    const Var oh = t.matmul(weights, vh);
    merged = h == 0 ? oh : t.concat(merged, oh, 1);
  }
  return params.out(t, merged);
}

ExchangeStack::ExchangeStack(ParamStore &store, const PipelineConfig &config, std::uint64_t seed)
    : dim_(config.feature_dim),
      heads_(config.attention_heads),
      enabled_(config.exchange_enabled),
      layer_norm_(config.layer_norm) {
  if (config.exchange_blocks < 1) throw ValidationError("exchange stack needs at least 1 block");
  if (heads_ < 1 || dim_ % heads_ != 0)
    throw ValidationError("head count must divide the feature dim");
  for (std::int64_t b = 0; b < config.exchange_blocks; ++b) {
    const std::string base = "xch." + std::to_string(b) + ".";
    auto modality = [&](const std::string &name) {
      return ModalityParams{AttentionParams(store, base + name + ".self", dim_, seed),
                            AttentionParams(store, base + name + ".cross", dim_, seed),
                            Mlp(store, base + name + ".ffn", {dim_, 2 * dim_, dim_}, seed)};
    };
    blocks_.push_back({modality("2d"), modality("3d")});
  }
}

Var ExchangeStack::maybe_norm(Tape &t, Var x) const {
  if (!layer_norm_) return x;
  // Row normalization built from primitives: mean and variance via matmul
  // with a constant averaging vector, rsqrt as exp(-log/2).
  const Tensor &val = t.value(x);
  const std::int64_t d = val.vcols();
  Var avg = t.leaf(Tensor::full({d, 1}, 1.0 / static_cast<double>(d)));
  Var mean = t.matmul(x, avg);                          // {N, 1}
  Var centered = t.sub(x, mean);                        // broadcast over columns
  Var var = t.matmul(t.mul(centered, centered), avg);   // {N, 1}
  Var rstd = t.exp(t.affine(t.log(t.affine(var, 1.0, 1e-5)), -0.5, 0.0));
  return t.mul(centered, rstd);
}

std::pair<Var, Var> ExchangeStack::block(Tape &t, Var f2d, Var f3d, std::size_t index) const {
  if (index >= blocks_.size()) throw ValidationError("exchange block index out of range");
  const BlockParams &p = blocks_[index];
  const Var a2 = maybe_norm(t, t.add(f2d, attention(t, f2d, f2d, p.m2d.self, heads_)));
  const Var a3 = maybe_norm(t, t.add(f3d, attention(t, f3d, f3d, p.m3d.self, heads_)));
  // Both cross stages read the post-self values of the other modality.
  const Var c2 = maybe_norm(t, t.add(a2, attention(t, a2, a3, p.m2d.cross, heads_)));
  const Var c3 = maybe_norm(t, t.add(a3, attention(t, a3, a2, p.m3d.cross, heads_)));
  const Var o2 = maybe_norm(t, t.add(c2, p.m2d.ffn(t, c2)));
  const Var o3 = maybe_norm(t, t.add(c3, p.m3d.ffn(t, c3)));
  return {o2, o3};
}

std::pair<Var, Var> ExchangeStack::run(Tape &t, Var f2d, Var f3d) const {
  if (!enabled_) return {f2d, f3d};
  std::pair<Var, Var> cur{f2d, f3d};
  for (std::size_t b = 0; b < blocks_.size(); ++b) cur = block(t, cur.first, cur.second, b);
  return cur;
}

}  // namespace edgereg
