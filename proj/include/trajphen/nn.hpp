#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "trajphen/params.hpp"
#include "trajphen/tensor.hpp"

namespace trajphen {

enum class Activation { Relu, Gelu };

struct Linear {
  Tensor w;  // [in, out]
  Tensor b;  // [out], undefined when bias-less
  Linear() = default;
  Linear(ParamRegistry& reg, const std::string& name, int64_t in, int64_t out, Rng& rng,
         bool bias = true);
  Tensor forward(const Tensor& x) const;  // [..., in] -> [..., out]
};

struct LayerNorm {
  Tensor gain, bias;  // [n]
  double eps = 1e-5;
  LayerNorm() = default;
  LayerNorm(ParamRegistry& reg, const std::string& name, int64_t n, double eps = 1e-5);
  Tensor forward(const Tensor& x) const;
};

struct Mlp {
  Linear fc1, fc2;
  Activation act = Activation::Relu;
  Mlp() = default;
  Mlp(ParamRegistry& reg, const std::string& name, int64_t in, int64_t hidden, int64_t out,
      Rng& rng, Activation act = Activation::Relu);
  Tensor forward(const Tensor& x) const;
};

// Attention mask over [B, Tq, Tk] score positions; set bytes block attention.
struct AttnMask {
  int64_t batch = 0, tq = 0, tk = 0;
  std::vector<uint8_t> blocked;  // row-major [B, Tq, Tk]

  AttnMask() = default;
  AttnMask(int64_t b, int64_t q, int64_t k) : batch(b), tq(q), tk(k), blocked(b * q * k, 0) {}
  uint8_t& at(int64_t b, int64_t q, int64_t k) { return blocked[(b * tq + q) * tk + k]; }

  // Causal + key-padding mask for decoder self-attention.
  static AttnMask causal_padding(const std::vector<uint8_t>& is_pad, int64_t batch, int64_t t);
};

// Multi-head attention over rank-3 tensors; queries may come from a different
// feature space than keys/values (cross attention). Heads are realized by
// slicing the projected feature axis, so tensors never exceed rank 3.
struct MultiHeadAttention {
  Linear wq, wk, wv, wo;
  int64_t n_heads = 1;
  int64_t d_model = 0;
  MultiHeadAttention() = default;
  MultiHeadAttention(ParamRegistry& reg, const std::string& name, int64_t d_model,
                     int64_t d_kv_in, int64_t n_heads, Rng& rng, bool out_bias = true);
  // q_in [B,Tq,dq], kv_in [B,Tk,d_kv_in] -> [B,Tq,d_model]
  Tensor forward(const Tensor& q_in, const Tensor& kv_in, const AttnMask* mask) const;
};

// Pre-norm residual block: x += attn(ln1(x)); x += mlp(ln2(x)).
struct TransformerBlock {
  LayerNorm ln1, ln2;
  MultiHeadAttention attn;
  Mlp mlp;
  TransformerBlock() = default;
  TransformerBlock(ParamRegistry& reg, const std::string& name, int64_t d_model, int64_t n_heads,
                   int64_t mlp_hidden, Rng& rng, Activation act = Activation::Relu);
  Tensor forward(const Tensor& x, const AttnMask* mask) const;
};

// Pooled mean over kept positions: x [B,T,D], keep [B,T] in {0,1} -> [B,D].
// Every batch row must keep at least one position.
Tensor masked_mean_pool(const Tensor& x, const std::vector<double>& keep, int64_t batch, int64_t t);

}  // namespace trajphen
