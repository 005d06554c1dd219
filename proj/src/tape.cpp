#include "edgereg/tape.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>

namespace edgereg {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConst = Eigen::Map<const RowMat>;

MapConst as_matrix(const Tensor &t) {
  return MapConst(t.data.data(), t.vrows(), t.vcols());
}

// Last-axis geometry for softmax-style ops: (#rows, row length).
std::pair<std::int64_t, std::int64_t> last_axis(const Tensor &t) {
  if (t.rank() == 1) return {1, t.shape[0]};
  if (t.rank() == 2) return {t.shape[0], t.shape[1]};
  throw ValidationError("softmax expects rank 1 or 2, got " + shape_str(t.shape));
}

}  // namespace

const char *Tape::op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kAdd: return "add";
    case Op::kMul: return "mul";
    case Op::kMatMul: return "matmul";
    case Op::kTranspose: return "transpose";
    case Op::kRelu: return "relu";
    case Op::kSigmoid: return "sigmoid";
    case Op::kLog: return "log";
    case Op::kExp: return "exp";
    case Op::kClamp: return "clamp";
    case Op::kAffine: return "affine";
    case Op::kSoftmax: return "softmax";
    case Op::kLogSoftmax: return "log_softmax";
    case Op::kSum: return "sum";
    case Op::kMean: return "mean";
    case Op::kGatherRows: return "gather_rows";
    case Op::kConcat: return "concat";
    case Op::kReshape: return "reshape";
    case Op::kSegmentMax: return "segment_max";
  }
  return "?";
}

void Tape::require(Var v, const char *ctx) const {
  if (!v.valid() || v.id >= static_cast<int>(nodes_.size()))
    throw ValidationError(std::string(ctx) + ": invalid tape handle");
}

const Tape::Node &Tape::node(Var v) const {
  require(v, "node");
  return nodes_[static_cast<std::size_t>(v.id)];
}

const Tensor &Tape::value(Var v) const { return node(v).val; }

void Tape::check_finite(const Node &n, int id) const {
  for (double x : n.val.data) {
    if (!std::isfinite(x))
      throw NumericError(std::string(op_name(n.op)) + " node #" + std::to_string(id) +
                         " produced a non-finite value");
  }
}

Var Tape::push(Node n) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back(std::move(n));
  check_finite(nodes_.back(), id);
  return Var{id};
}

Var Tape::leaf(Tensor value) {
  Node n;
  n.op = Op::kLeaf;
  n.val = std::move(value);
  return push(std::move(n));
}

Var Tape::param(Tensor *p) {
  if (p == nullptr) throw ValidationError("param leaf: null tensor");
  Node n;
  n.op = Op::kLeaf;
  n.val = *p;
  n.bound = p;
  return push(std::move(n));
}

namespace {
void broadcast_dims(const Tensor &a, const Tensor &b, const char *ctx,
                    std::int64_t &r, std::int64_t &c) {
  const std::int64_t ra = a.vrows(), ca = a.vcols();
  const std::int64_t rb = b.vrows(), cb = b.vcols();
  if ((ra != rb && ra != 1 && rb != 1) || (ca != cb && ca != 1 && cb != 1))
    throw ValidationError(std::string(ctx) + ": shapes " + shape_str(a.shape) +
                          " and " + shape_str(b.shape) + " do not broadcast");
  r = std::max(ra, rb);
  c = std::max(ca, cb);
}

Shape view_shape(const Tensor &a, const Tensor &b, std::int64_t r, std::int64_t c) {
  // Preserve vector/scalar rank when no promotion happened.
  if (a.rank() <= 1 && b.rank() <= 1) {
    if (r == 1 && c == 1 && (a.rank() == 0 || b.rank() == 0) && a.rank() + b.rank() == 0)
      return {};
    return {c};
  }
  return {r, c};
}
}  // namespace

Var Tape::add(Var av, Var bv) {
  const Tensor &a = value(av), &b = value(bv);
  std::int64_t r, c;
  broadcast_dims(a, b, "add", r, c);
  Node n;
  n.op = Op::kAdd;
  n.a = av.id;
  n.b = bv.id;
  n.val = Tensor::zeros(view_shape(a, b, r, c));
  const std::int64_t ra = a.vrows(), ca = a.vcols(), rb = b.vrows(), cb = b.vcols();
  for (std::int64_t i = 0; i < r; ++i)
    for (std::int64_t j = 0; j < c; ++j)
      n.val.data[static_cast<std::size_t>(i * c + j)] =
          a.data[static_cast<std::size_t>((ra == 1 ? 0 : i) * ca + (ca == 1 ? 0 : j))] +
          b.data[static_cast<std::size_t>((rb == 1 ? 0 : i) * cb + (cb == 1 ? 0 : j))];
  return push(std::move(n));
}

Var Tape::mul(Var av, Var bv) {
  const Tensor &a = value(av), &b = value(bv);
  std::int64_t r, c;
  broadcast_dims(a, b, "mul", r, c);
  Node n;
  n.op = Op::kMul;
  n.a = av.id;
  n.b = bv.id;
  n.val = Tensor::zeros(view_shape(a, b, r, c));
  const std::int64_t ra = a.vrows(), ca = a.vcols(), rb = b.vrows(), cb = b.vcols();
  for (std::int64_t i = 0; i < r; ++i)
    for (std::int64_t j = 0; j < c; ++j)
      n.val.data[static_cast<std::size_t>(i * c + j)] =
          a.data[static_cast<std::size_t>((ra == 1 ? 0 : i) * ca + (ca == 1 ? 0 : j))] *
          b.data[static_cast<std::size_t>((rb == 1 ? 0 : i) * cb + (cb == 1 ? 0 : j))];
  return push(std::move(n));
}

Var Tape::matmul(Var av, Var bv) {
  const Tensor &a = value(av), &b = value(bv);
  if (a.rank() != 2 || b.rank() != 2)
    throw ValidationError("matmul: both operands must be rank 2, got " +
                          shape_str(a.shape) + " and " + shape_str(b.shape));
  if (a.shape[1] != b.shape[0])
    throw ValidationError("matmul: inner dimensions " + shape_str(a.shape) + " vs " +
                          shape_str(b.shape));
  Node n;
  n.op = Op::kMatMul;
  n.a = av.id;
  n.b = bv.id;
  n.val = Tensor::zeros({a.shape[0], b.shape[1]});
  MapMat out(n.val.data.data(), a.shape[0], b.shape[1]);
  out.noalias() = as_matrix(a) * as_matrix(b);
  return push(std::move(n));
}

Var Tape::transpose(Var av) {
  const Tensor &a = value(av);
  if (a.rank() != 2) throw ValidationError("transpose expects rank 2, got " + shape_str(a.shape));
  Node n;
  n.op = Op::kTranspose;
  n.a = av.id;
  n.val = Tensor::zeros({a.shape[1], a.shape[0]});
  MapMat out(n.val.data.data(), a.shape[1], a.shape[0]);
  out = as_matrix(a).transpose();
  return push(std::move(n));
}

Var Tape::relu(Var av) {
  const Tensor &a = value(av);
  Node n;
  n.op = Op::kRelu;
  n.a = av.id;
  n.val = a;
  n.val.requires_grad = false;
  n.val.grad.clear();
  for (double &x : n.val.data) x = x > 0.0 ? x : 0.0;
  return push(std::move(n));
}

Var Tape::sigmoid(Var av) {
  const Tensor &a = value(av);
  Node n;
  n.op = Op::kSigmoid;
  n.a = av.id;
  n.val = Tensor::zeros(a.shape);
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double x = a.data[i];
    // Split form avoids overflow of exp for large |x|.
    n.val.data[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                             : std::exp(x) / (1.0 + std::exp(x));
  }
  return push(std::move(n));
}

Var Tape::log(Var av) {
  const Tensor &a = value(av);
  Node n;
  n.op = Op::kLog;
  n.a = av.id;
  n.val = Tensor::zeros(a.shape);
  for (std::size_t i = 0; i < a.data.size(); ++i) n.val.data[i] = std::log(a.data[i]);
  return push(std::move(n));
}

Var Tape::exp(Var av) {
  const Tensor &a = value(av);
  Node n;
  n.op = Op::kExp;
  n.a = av.id;
  n.val = Tensor::zeros(a.shape);
  for (std::size_t i = 0; i < a.data.size(); ++i) n.val.data[i] = std::exp(a.data[i]);
  return push(std::move(n));
}

Var Tape::clamp(Var av, double lo, double hi) {
  if (!(lo <= hi)) throw ValidationError("clamp: lo > hi");
  const Tensor &a = value(av);
  Node n;
  n.op = Op::kClamp;
  n.a = av.id;
  n.s0 = lo;
  n.s1 = hi;
  n.val = Tensor::zeros(a.shape);
  for (std::size_t i = 0; i < a.data.size(); ++i)
    n.val.data[i] = std::min(hi, std::max(lo, a.data[i]));
  return push(std::move(n));
}

Var Tape::affine(Var av, double scale, double shift) {
  const Tensor &a = value(av);
  Node n;
  n.op = Op::kAffine;
  n.a = av.id;
  n.s0 = scale;
  n.s1 = shift;
  n.val = Tensor::zeros(a.shape);
  for (std::size_t i = 0; i < a.data.size(); ++i) n.val.data[i] = scale * a.data[i] + shift;
  return push(std::move(n));
}

Var Tape::softmax(Var av) {
  const Tensor &a = value(av);
  auto [rows, cols] = last_axis(a);
  if (cols < 1) throw ValidationError("softmax: empty last axis");
  Node n;
  n.op = Op::kSoftmax;
  n.a = av.id;
  n.val = Tensor::zeros(a.shape);
  for (std::int64_t i = 0; i < rows; ++i) {
    const double *src = a.data.data() + i * cols;
    double *dst = n.val.data.data() + i * cols;
    double m = src[0];
    for (std::int64_t j = 1; j < cols; ++j) m = std::max(m, src[j]);
    double denom = 0.0;
    for (std::int64_t j = 0; j < cols; ++j) {
      dst[j] = std::exp(src[j] - m);
      denom += dst[j];
    }
    for (std::int64_t j = 0; j < cols; ++j) dst[j] /= denom;
  }
  return push(std::move(n));
}

Var Tape::log_softmax(Var av) {
  const Tensor &a = value(av);
  auto [rows, cols] = last_axis(a);
  if (cols < 1) throw ValidationError("log_softmax: empty last axis");
  Node n;
  n.op = Op::kLogSoftmax;
  n.a = av.id;
  n.val = Tensor::zeros(a.shape);
  for (std::int64_t i = 0; i < rows; ++i) {
    const double *src = a.data.data() + i * cols;
    double *dst = n.val.data.data() + i * cols;
    double m = src[0];
    for (std::int64_t j = 1; j < cols; ++j) m = std::max(m, src[j]);
    double lse = 0.0;
    for (std::int64_t j = 0; j < cols; ++j) lse += std::exp(src[j] - m);
    lse = m + std::log(lse);
    for (std::int64_t j = 0; j < cols; ++j) dst[j] = src[j] - lse;
  }
  return push(std::move(n));
}

Var Tape::sum(Var av) {
  const Tensor &a = value(av);
  double s = 0.0;
  for (double x : a.data) s += x;
  Node n;
  n.op = Op::kSum;
  n.a = av.id;
  n.val = Tensor::scalar(s);
  return push(std::move(n));
}

Var Tape::mean(Var av) {
  const Tensor &a = value(av);
  if (a.size() == 0) throw ValidationError("mean of empty tensor");
  double s = 0.0;
  for (double x : a.data) s += x;
  Node n;
  n.op = Op::kMean;
  n.a = av.id;
  n.val = Tensor::scalar(s / static_cast<double>(a.size()));
  return push(std::move(n));
}

Var Tape::gather_rows(Var av, std::vector<std::int64_t> idx) {
  const Tensor &a = value(av);
  if (a.rank() != 2) throw ValidationError("gather_rows expects rank 2, got " + shape_str(a.shape));
  const std::int64_t rows = a.shape[0], cols = a.shape[1];
  for (std::int64_t i : idx)
    if (i < 0 || i >= rows)
      throw ValidationError("gather_rows: index " + std::to_string(i) + " out of [0," +
                            std::to_string(rows) + ")");
  Node n;
  n.op = Op::kGatherRows;
  n.a = av.id;
  n.val = Tensor::zeros({static_cast<std::int64_t>(idx.size()), cols});
  for (std::size_t k = 0; k < idx.size(); ++k)
    std::copy_n(a.data.data() + idx[k] * cols, cols, n.val.data.data() + static_cast<std::int64_t>(k) * cols);
  n.idx = std::move(idx);
  return push(std::move(n));
}

Var Tape::concat(Var av, Var bv, int axis) {
  const Tensor &a = value(av), &b = value(bv);
  if (a.rank() != 2 || b.rank() != 2)
    throw ValidationError("concat expects rank-2 operands");
  if (axis != 0 && axis != 1) throw ValidationError("concat: axis must be 0 or 1");
  Node n;
  n.op = Op::kConcat;
  n.a = av.id;
  n.b = bv.id;
  n.axis = axis;
  if (axis == 0) {
    if (a.shape[1] != b.shape[1])
      throw ValidationError("concat axis 0: column counts " + shape_str(a.shape) + " vs " +
                            shape_str(b.shape));
    n.val = Tensor::zeros({a.shape[0] + b.shape[0], a.shape[1]});
    std::copy(a.data.begin(), a.data.end(), n.val.data.begin());
    std::copy(b.data.begin(), b.data.end(), n.val.data.begin() + a.size());
  } else {
    if (a.shape[0] != b.shape[0])
      throw ValidationError("concat axis 1: row counts " + shape_str(a.shape) + " vs " +
                            shape_str(b.shape));
    const std::int64_t rows = a.shape[0], ca = a.shape[1], cb = b.shape[1];
    n.val = Tensor::zeros({rows, ca + cb});
    for (std::int64_t i = 0; i < rows; ++i) {
      std::copy_n(a.data.data() + i * ca, ca, n.val.data.data() + i * (ca + cb));
      std::copy_n(b.data.data() + i * cb, cb, n.val.data.data() + i * (ca + cb) + ca);
    }
  }
  return push(std::move(n));
}

Var Tape::reshape(Var av, Shape s) {
  const Tensor &a = value(av);
  if (shape_size(s) != a.size())
    throw ValidationError("reshape: size mismatch " + shape_str(a.shape) + " -> " + shape_str(s));
  Node n;
  n.op = Op::kReshape;
  n.a = av.id;
  n.val = Tensor(std::move(s), a.data);
  return push(std::move(n));
}

Var Tape::segment_max(Var av, std::vector<std::int64_t> offsets) {
  const Tensor &a = value(av);
  if (a.rank() != 2) throw ValidationError("segment_max expects rank 2");
  if (offsets.size() < 2 || offsets.front() != 0 || offsets.back() != a.shape[0])
    throw ValidationError("segment_max: offsets must span [0, rows]");
  for (std::size_t g = 0; g + 1 < offsets.size(); ++g)
    if (offsets[g + 1] <= offsets[g])
      throw ValidationError("segment_max: empty segment " + std::to_string(g));
  const std::int64_t groups = static_cast<std::int64_t>(offsets.size()) - 1;
  const std::int64_t cols = a.shape[1];
  Node n;
  n.op = Op::kSegmentMax;
  n.a = av.id;
  n.val = Tensor::zeros({groups, cols});
  for (std::int64_t g = 0; g < groups; ++g) {
    for (std::int64_t c = 0; c < cols; ++c) {
      double m = a.data[static_cast<std::size_t>(offsets[static_cast<std::size_t>(g)] * cols + c)];
      for (std::int64_t r = offsets[static_cast<std::size_t>(g)] + 1; r < offsets[static_cast<std::size_t>(g) + 1]; ++r)
        m = std::max(m, a.data[static_cast<std::size_t>(r * cols + c)]);
      n.val.data[static_cast<std::size_t>(g * cols + c)] = m;
    }
  }
  n.idx = std::move(offsets);
  return push(std::move(n));
}

void Tape::backpropagate(Var output) {
  if (!output.valid() || nodes_.empty())
    throw StateError("backpropagate called before any forward evaluation");
  require(output, "backpropagate");
  const Tensor &out = value(output);
  if (!out.is_scalar())
    throw ContractError("backpropagate output must be scalar, got " + shape_str(out.shape));

  std::vector<std::vector<double>> g(nodes_.size());
  g[static_cast<std::size_t>(output.id)] = {1.0};

  auto acc = [&](int id) -> std::vector<double> & {
    auto &buf = g[static_cast<std::size_t>(id)];
    if (buf.empty()) buf.assign(nodes_[static_cast<std::size_t>(id)].val.data.size(), 0.0);
    return buf;
  };

  for (int id = output.id; id >= 0; --id) {
    auto &gy = g[static_cast<std::size_t>(id)];
    if (gy.empty()) continue;
    Node &n = nodes_[static_cast<std::size_t>(id)];
    switch (n.op) {
      case Op::kLeaf:
        if (n.bound != nullptr && n.bound->requires_grad) {
          n.bound->ensure_grad();
          for (std::size_t i = 0; i < gy.size(); ++i) n.bound->grad[i] += gy[i];
        }
        break;
      case Op::kAdd:
      case Op::kMul: {
        const Tensor &a = nodes_[static_cast<std::size_t>(n.a)].val;
        const Tensor &b = nodes_[static_cast<std::size_t>(n.b)].val;
        const std::int64_t r = n.val.vrows(), c = n.val.vcols();
        const std::int64_t ra = a.vrows(), ca = a.vcols(), rb = b.vrows(), cb = b.vcols();
        auto &ga = acc(n.a);
        auto &gb = acc(n.b);
        for (std::int64_t i = 0; i < r; ++i) {
          for (std::int64_t j = 0; j < c; ++j) {
            const std::size_t o = static_cast<std::size_t>(i * c + j);
            const std::size_t ia = static_cast<std::size_t>((ra == 1 ? 0 : i) * ca + (ca == 1 ? 0 : j));
            const std::size_t ib = static_cast<std::size_t>((rb == 1 ? 0 : i) * cb + (cb == 1 ? 0 : j));
            if (n.op == Op::kAdd) {
              ga[ia] += gy[o];
              gb[ib] += gy[o];
            } else {
              ga[ia] += gy[o] * b.data[ib];
              gb[ib] += gy[o] * a.data[ia];
            }
          }
        }
        break;
      }
      case Op::kMatMul: {
        const Tensor &a = nodes_[static_cast<std::size_t>(n.a)].val;
        const Tensor &b = nodes_[static_cast<std::size_t>(n.b)].val;
        auto &ga = acc(n.a);
        auto &gb = acc(n.b);
        MapConst gyM(gy.data(), a.shape[0], b.shape[1]);
        MapMat gaM(ga.data(), a.shape[0], a.shape[1]);
        MapMat gbM(gb.data(), b.shape[0], b.shape[1]);
        gaM.noalias() += gyM * as_matrix(b).transpose();
        gbM.noalias() += as_matrix(a).transpose() * gyM;
        break;
      }
      case Op::kTranspose: {
        const Tensor &a = nodes_[static_cast<std::size_t>(n.a)].val;
        auto &ga = acc(n.a);
        MapConst gyM(gy.data(), a.shape[1], a.shape[0]);
        MapMat gaM(ga.data(), a.shape[0], a.shape[1]);
        gaM += gyM.transpose();
        break;
      }
      case Op::kRelu: {
        const Tensor &a = nodes_[static_cast<std::size_t>(n.a)].val;
        auto &ga = acc(n.a);
        for (std::size_t i = 0; i < gy.size(); ++i)
          if (a.data[i] > 0.0) ga[i] += gy[i];
        break;
      }
      case Op::kSigmoid: {
        auto &ga = acc(n.a);
        for (std::size_t i = 0; i < gy.size(); ++i) {
          const double y = n.val.data[i];
          ga[i] += gy[i] * y * (1.0 - y);
        }
        break;
      }
      case Op::kLog: {
        const Tensor &a = nodes_[static_cast<std::size_t>(n.a)].val;
        auto &ga = acc(n.a);
        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] / a.data[i];
        break;
      }
      case Op::kExp: {
        auto &ga = acc(n.a);
        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * n.val.data[i];
        break;
      }
      case Op::kClamp: {
        const Tensor &a = nodes_[static_cast<std::size_t>(n.a)].val;
        auto &ga = acc(n.a);
        for (std::size_t i = 0; i < gy.size(); ++i)
          if (a.data[i] > n.s0 && a.data[i] < n.s1) ga[i] += gy[i];
        break;
      }
      case Op::kAffine: {
        auto &ga = acc(n.a);
        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * n.s0;
        break;
      }
      case Op::kSoftmax: {
        auto &ga = acc(n.a);
        auto [rows, cols] = last_axis(n.val);
        for (std::int64_t i = 0; i < rows; ++i) {
          const double *y = n.val.data.data() + i * cols;
          const double *dy = gy.data() + i * cols;
          double dot = 0.0;
          for (std::int64_t j = 0; j < cols; ++j) dot += dy[j] * y[j];
          double *da = ga.data() + i * cols;
          for (std::int64_t j = 0; j < cols; ++j) da[j] += y[j] * (dy[j] - dot);
        }
        break;
      }
      case Op::kLogSoftmax: {
        auto &ga = acc(n.a);
        auto [rows, cols] = last_axis(n.val);
        for (std::int64_t i = 0; i < rows; ++i) {
          const double *y = n.val.data.data() + i * cols;
          const double *dy = gy.data() + i * cols;
          double s = 0.0;
          for (std::int64_t j = 0; j < cols; ++j) s += dy[j];
          double *da = ga.data() + i * cols;
          for (std::int64_t j = 0; j < cols; ++j) da[j] += dy[j] - std::exp(y[j]) * s;
        }
        break;
      }
      case Op::kSum: {
        auto &ga = acc(n.a);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gy[0];
        break;
      }
      case Op::kMean: {
        auto &ga = acc(n.a);
        const double w = gy[0] / static_cast<double>(ga.size());
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += w;
        break;
      }
      case Op::kGatherRows: {
        const std::int64_t cols = n.val.shape[1];
        auto &ga = acc(n.a);
        for (std::size_t k = 0; k < n.idx.size(); ++k) {
          const double *src = gy.data() + static_cast<std::int64_t>(k) * cols;
          double *dst = ga.data() + n.idx[k] * cols;
          for (std::int64_t c = 0; c < cols; ++c) dst[c] += src[c];
        }
        break;
      }
      case Op::kConcat: {
        const Tensor &a = nodes_[static_cast<std::size_t>(n.a)].val;
        const Tensor &b = nodes_[static_cast<std::size_t>(n.b)].val;
        auto &ga = acc(n.a);
        auto &gb = acc(n.b);
        if (n.axis == 0) {
          for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i];
          for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += gy[ga.size() + i];
        } else {
          const std::int64_t rows = a.shape[0], ca = a.shape[1], cb = b.shape[1];
          for (std::int64_t i = 0; i < rows; ++i) {
            for (std::int64_t j = 0; j < ca; ++j)
              ga[static_cast<std::size_t>(i * ca + j)] += gy[static_cast<std::size_t>(i * (ca + cb) + j)];
            for (std::int64_t j = 0; j < cb; ++j)
              gb[static_cast<std::size_t>(i * cb + j)] += gy[static_cast<std::size_t>(i * (ca + cb) + ca + j)];
          }
        }
        break;
      }
      case Op::kReshape: {
        auto &ga = acc(n.a);
        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
        break;
      }
      case Op::kSegmentMax: {
        const Tensor &a = nodes_[static_cast<std::size_t>(n.a)].val;
        auto &ga = acc(n.a);
        const std::int64_t cols = a.shape[1];
        const std::int64_t groups = n.val.shape[0];
        for (std::int64_t gIdx = 0; gIdx < groups; ++gIdx) {
          for (std::int64_t c = 0; c < cols; ++c) {
            std::int64_t arg = n.idx[static_cast<std::size_t>(gIdx)];
            double m = a.data[static_cast<std::size_t>(arg * cols + c)];
            for (std::int64_t r = arg + 1; r < n.idx[static_cast<std::size_t>(gIdx) + 1]; ++r) {
              const double v = a.data[static_cast<std::size_t>(r * cols + c)];
              if (v > m) {
                m = v;
                arg = r;
              }
            }
            ga[static_cast<std::size_t>(arg * cols + c)] += gy[static_cast<std::size_t>(gIdx * cols + c)];
          }
        }
        break;
      }
    }
    if (id != output.id) gy.clear();
  }
}

double check_gradients(const std::function<Var(Tape &)> &build,
                       const std::vector<Tensor *> &params, double step) {
  if (!(step > 0.0 && step <= 1e-3))
    throw ContractError("check_gradients: step must lie in (0, 1e-3]");

  auto eval = [&]() {
    Tape t;
    Var out = build(t);
    const Tensor &v = t.value(out);
    if (!v.is_scalar())
      throw ContractError("check_gradients: build must produce a scalar output");
    return v.data[0];
  };

  for (Tensor *p : params) p->zero_grad();
  {
    Tape t;
    Var out = build(t);
    const Tensor &v = t.value(out);
    if (!v.is_scalar())
      throw ContractError("check_gradients: build must produce a scalar output");
    t.backpropagate(out);
  }

  double worst = 0.0;
  for (Tensor *p : params) {
    p->ensure_grad();
    for (std::size_t i = 0; i < p->data.size(); ++i) {
      const double saved = p->data[i];
      p->data[i] = saved + step;
      const double f_plus = eval();
      p->data[i] = saved - step;
      const double f_minus = eval();
      p->data[i] = saved;
      const double numeric = (f_plus - f_minus) / (2.0 * step);
      const double analytic = p->grad[i];
      const double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
      worst = std::max(worst, std::abs(analytic - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace edgereg
