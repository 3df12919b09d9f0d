#pragma once

#include <cstdint>
#include <vector>

#include "dslab/rng.hpp"
#include "dslab/tensor.hpp"

namespace dslab {

// weights ~ uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)), biases zero
Tensor init_uniform(Shape shape, std::size_t fan_in, Rng& rng);

struct LinearParams {
  Tensor w;  // [in, out]
  Tensor b;  // [out]
};
LinearParams make_linear(std::size_t in, std::size_t out, Rng& rng);
Tensor linear(const Tensor& x, const LinearParams& p);

struct LayerNormParams {
  Tensor gain;  // [dim], ones
  Tensor bias;  // [dim], zeros
};
LayerNormParams make_layer_norm(std::size_t dim);

// pre-LN transformer block with fused qkv and a 4x GELU MLP
struct BlockParams {
  LayerNormParams ln1;
  LinearParams qkv;  // [D, 3D]
  LinearParams out;  // [D, D]
  LayerNormParams ln2;
  LinearParams fc1;  // [D, 4D]
  LinearParams fc2;  // [4D, D]
};
BlockParams make_block(std::size_t dim, Rng& rng);

// attn_bias, when given, is an additive [T,T] matrix (0 or -1e30)
Tensor block_forward(const BlockParams& p, const Tensor& x, std::size_t heads,
                     const Tensor* attn_bias = nullptr);

void collect_block_params(const BlockParams& p, std::vector<Tensor>& out);

// strictly-lower-triangular-plus-diagonal visibility
Tensor causal_attn_bias(std::size_t t);

}  // namespace dslab
