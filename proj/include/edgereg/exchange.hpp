#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "edgereg/dataio.hpp"
#include "edgereg/nn.hpp"

namespace edgereg {

// Query, key, value and output projections for one attention stage.
struct AttentionParams {
  AttentionParams(ParamStore &store, const std::string &prefix, std::int64_t dim,
                  std::uint64_t seed);

  Linear q, k, v, out;
};

// Scaled dot-product attention: per head softmax(Q K^T / sqrt(d_k)) V with
// d_k = D/heads, heads concatenated and output-projected. Self-attention is
// the call with both inputs equal; cross-attention feeds the other modality
// as keys/values.
Var attention(Tape &t, Var queries_from, Var keys_values_from, const AttentionParams &params,
              std::int64_t heads);

// Stack of feature exchange blocks. Per block and modality: residual
// self-attention, then residual cross-attention (both directions reading the
// post-self values), then a residual two-layer feed-forward (D -> 2D -> D).
// Parameters live under "xch.{block}.{modality}.{stage}". When the config
// disables the exchange stack, run() is the identity (the ablation switch).
// The optional layer_norm flag applies a non-learnable row normalization
// after every residual.
class ExchangeStack {
 public:
  ExchangeStack(ParamStore &store, const PipelineConfig &config, std::uint64_t seed);

  std::pair<Var, Var> block(Tape &t, Var f2d, Var f3d, std::size_t index) const;
  std::pair<Var, Var> run(Tape &t, Var f2d, Var f3d) const;

  std::int64_t block_count() const { return static_cast<std::int64_t>(blocks_.size()); }
  std::int64_t heads() const { return heads_; }

 private:
  struct ModalityParams {
    AttentionParams self, cross;
    Mlp ffn;
  };
  struct BlockParams {
    ModalityParams m2d, m3d;
  };

  Var maybe_norm(Tape &t, Var x) const;

  std::vector<BlockParams> blocks_;
  std::int64_t dim_ = 0, heads_ = 1;
  bool enabled_ = true, layer_norm_ = false;
};

}  // namespace edgereg
