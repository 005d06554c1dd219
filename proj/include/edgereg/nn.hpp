#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "edgereg/rng.hpp"
#include "edgereg/tape.hpp"
#include "edgereg/tensor.hpp"

namespace edgereg {

// Named parameter registry. Iteration order is the registration order, which
// keeps optimizer state and checkpoints stable across runs.
class ParamStore {
 public:
  // Registers a new parameter filled with Glorot-uniform values drawn from a
  // stream derived from (seed, name). Registering a duplicate name throws.
  Tensor &create(const std::string &name, Shape shape, std::uint64_t seed);

  // Registers a parameter with explicit contents (bias vectors, identity-like
  // output projections).
  Tensor &create_with(const std::string &name, Tensor value);

  bool contains(const std::string &name) const;
  Tensor &get(const std::string &name);
  const Tensor &get(const std::string &name) const;

  const std::vector<std::string> &names() const { return order_; }
  std::size_t size() const { return order_.size(); }
  std::size_t scalar_count() const;

  void zero_grads();

  // Global L2 norm of all gradients; used for clipping diagnostics.
  double grad_norm() const;

  void save(const std::string &path) const;
  // Replaces the contents of already-registered parameters. Shape or name
  // mismatches throw FormatError. Extra names in the file throw as well, so a
  // checkpoint always describes exactly one architecture.
  void load(const std::string &path);

 private:
  std::vector<std::string> order_;
  std::map<std::string, Tensor> params_;
};

// Adam with bias-corrected moments and optional global gradient-norm clipping
// (clip disabled when max_grad_norm <= 0).
class AdamOptimizer {
 public:
  explicit AdamOptimizer(ParamStore &store, double lr = 1e-3, double beta1 = 0.9,
                         double beta2 = 0.999, double eps = 1e-8,
                         double max_grad_norm = 10.0);

  void step();
  std::int64_t steps_taken() const { return t_; }
  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }

 private:
  ParamStore &store_;
  double lr_, beta1_, beta2_, eps_, max_grad_norm_;
  std::int64_t t_ = 0;
  std::map<std::string, std::vector<double>> m_, v_;
};

// Fully connected layer helper over the tape. Creates (or reuses) parameters
// "<prefix>.w" with shape {in, out} and, when with_bias, "<prefix>.b" {out}.
class Linear {
 public:
  Linear(ParamStore &store, const std::string &prefix, std::int64_t in,
         std::int64_t out, std::uint64_t seed, bool with_bias = true);

  // x is {N, in}; returns {N, out}.
  Var operator()(Tape &t, Var x) const;

  std::int64_t in_dim() const { return in_; }
  std::int64_t out_dim() const { return out_; }

 private:
  Tensor *w_;
  Tensor *b_ = nullptr;
  std::int64_t in_, out_;
};

// Stack of Linear layers with ReLU between them (none after the last).
class Mlp {
 public:
  Mlp(ParamStore &store, const std::string &prefix,
      const std::vector<std::int64_t> &dims, std::uint64_t seed,
      bool with_bias = true);

  Var operator()(Tape &t, Var x) const;

 private:
  std::vector<Linear> layers_;
};

}  // namespace edgereg
