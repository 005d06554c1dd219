#ifndef EDGEREG_TAPE_HPP
#define EDGEREG_TAPE_HPP

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "edgereg/tensor.hpp"

namespace edgereg {

// Handle to a value recorded on a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode computation graph. Operations evaluate eagerly as they are
// recorded, so the record order is the topological order and the backward
// pass walks it in exact reverse. A tape instance is single-threaded;
// distinct tapes may run concurrently.
class Tape {
 public:
  // ---- leaves -------------------------------------------------------------
  Var leaf(Tensor value);                  // constant, never receives gradient
  Var param(Tensor *p);                    // gradient accumulates into p->grad
  Var constant(double v) { return leaf(Tensor::scalar(v)); }

  // ---- primitives ---------------------------------------------------------
  Var add(Var a, Var b);                   // elementwise, broadcasting dims of 1
  Var mul(Var a, Var b);                   // elementwise, broadcasting dims of 1
  Var matmul(Var a, Var b);
  Var transpose(Var a);
  Var relu(Var a);
  Var sigmoid(Var a);
  Var log(Var a);
  Var exp(Var a);
  Var clamp(Var a, double lo, double hi);
  Var affine(Var a, double scale, double shift);  // scale * a + shift
  Var softmax(Var a);                      // over last axis, max-subtracted
  Var log_softmax(Var a);                  // fused log-sum-exp form
  Var sum(Var a);                          // full reduction to scalar
  Var mean(Var a);
  Var gather_rows(Var a, std::vector<std::int64_t> idx);
  Var concat(Var a, Var b, int axis);      // rank-2, axis 0 or 1
  Var reshape(Var a, Shape s);
  // Max over row segments [offsets[g], offsets[g+1]) per channel; ties route
  // the gradient to the first maximal row.
  Var segment_max(Var a, std::vector<std::int64_t> offsets);

  // ---- sugar built from primitives ---------------------------------------
  Var sub(Var a, Var b) { return add(a, affine(b, -1.0, 0.0)); }
  Var one_minus(Var a) { return affine(a, -1.0, 1.0); }

  // ---- execution ----------------------------------------------------------
  const Tensor &value(Var v) const;
  // Populates grads of every requires_grad leaf reachable from `output`.
  // `output` must be scalar.
  void backpropagate(Var output);
  std::size_t node_count() const { return nodes_.size(); }

 private:
  enum class Op {
    kLeaf, kAdd, kMul, kMatMul, kTranspose, kRelu, kSigmoid, kLog, kExp,
    kClamp, kAffine, kSoftmax, kLogSoftmax, kSum, kMean, kGatherRows,
    kConcat, kReshape, kSegmentMax
  };

  struct Node {
    Op op;
    int a = -1, b = -1;
    Tensor val;
    double s0 = 0.0, s1 = 0.0;          // affine scale/shift, clamp lo/hi
    int axis = 0;                        // concat axis
    std::vector<std::int64_t> idx;       // gather indices / segment offsets
    Tensor *bound = nullptr;             // param leaf target
  };

  static const char *op_name(Op op);
  Var push(Node n);
  const Node &node(Var v) const;
  void require(Var v, const char *ctx) const;
  void check_finite(const Node &n, int id) const;

  std::vector<Node> nodes_;
};

// Central-difference gradient check. `build` records the forward pass on a
// fresh tape and returns the scalar output; it is re-run for every
// perturbation of every entry of every tensor in `params`. Returns
// max |analytic - numeric| / max(1, |analytic|, |numeric|); 0 when `params`
// is empty. `step` must lie in (0, 1e-3].
double check_gradients(const std::function<Var(Tape &)> &build,
                       const std::vector<Tensor *> &params, double step);

}  // namespace edgereg

#endif  // EDGEREG_TAPE_HPP
