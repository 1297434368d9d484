#include "trajphen/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace trajphen {

Linear::Linear(ParamRegistry& reg, const std::string& name, int64_t in, int64_t out, Rng& rng,
               bool bias) {
  w = reg.create_fanin(name + ".w", {in, out}, rng);
  if (bias) b = reg.create_zeros(name + ".b", {out});
}

Tensor Linear::forward(const Tensor& x) const {
  Tensor y = matmul(x, w);
  if (b.defined()) y = add(y, b);
  return y;
}

LayerNorm::LayerNorm(ParamRegistry& reg, const std::string& name, int64_t n, double eps)
    : eps(eps) {
  gain = reg.create_zeros(name + ".gain", {n});
  for (double& v : gain.data()) v = 1.0;
  bias = reg.create_zeros(name + ".bias", {n});
}

Tensor LayerNorm::forward(const Tensor& x) const {
  return add(mul(layernorm_lastdim(x, eps), gain), bias);
}

Mlp::Mlp(ParamRegistry& reg, const std::string& name, int64_t in, int64_t hidden, int64_t out,
         Rng& rng, Activation act)
    : act(act) {
  fc1 = Linear(reg, name + ".fc1", in, hidden, rng);
  fc2 = Linear(reg, name + ".fc2", hidden, out, rng);
}

Tensor Mlp::forward(const Tensor& x) const {
  Tensor h = fc1.forward(x);
  h = (act == Activation::Relu) ? relu(h) : gelu(h);
  return fc2.forward(h);
}

AttnMask AttnMask::causal_padding(const std::vector<uint8_t>& is_pad, int64_t batch, int64_t t) {
  if (static_cast<int64_t>(is_pad.size()) != batch * t) {
    throw std::invalid_argument("AttnMask: padding flags do not match batch layout");
  }
  AttnMask m(batch, t, t);
  for (int64_t b = 0; b < batch; ++b) {
    for (int64_t q = 0; q < t; ++q) {
      for (int64_t k = 0; k < t; ++k) {
        if (k > q || is_pad[b * t + k]) m.at(b, q, k) = 1;
      }
    }
  }
  return m;
}

MultiHeadAttention::MultiHeadAttention(ParamRegistry& reg, const std::string& name,
                                       int64_t d_model, int64_t d_kv_in, int64_t n_heads,
                                       Rng& rng, bool out_bias)
    : n_heads(n_heads), d_model(d_model) {
  if (d_model % n_heads != 0) {
    throw std::invalid_argument("MultiHeadAttention: d_model " + std::to_string(d_model) +
                                " not divisible by n_heads " + std::to_string(n_heads));
  }
  wq = Linear(reg, name + ".wq", d_model, d_model, rng);
  wk = Linear(reg, name + ".wk", d_kv_in, d_model, rng);
  wv = Linear(reg, name + ".wv", d_kv_in, d_model, rng);
  wo = Linear(reg, name + ".wo", d_model, d_model, rng, out_bias);
}

Tensor MultiHeadAttention::forward(const Tensor& q_in, const Tensor& kv_in,
                                   const AttnMask* mask) const {
  Tensor q = wq.forward(q_in);   // [B,Tq,D]
  Tensor k = wk.forward(kv_in);  // [B,Tk,D]
  Tensor v = wv.forward(kv_in);
  int64_t hd = d_model / n_heads;
  double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  std::vector<Tensor> head_outs;
  head_outs.reserve(static_cast<size_t>(n_heads));
  for (int64_t h = 0; h < n_heads; ++h) {
    Tensor qh = slice_lastdim(q, h * hd, hd);
    Tensor kh = slice_lastdim(k, h * hd, hd);
    Tensor vh = slice_lastdim(v, h * hd, hd);
    Tensor scores = mul_scalar(matmul(qh, transpose_last2(kh)), scale);  // [B,Tq,Tk]
    if (mask) scores = masked_fill(scores, mask->blocked, -1e30);
    Tensor attn = softmax_lastdim(scores);
    head_outs.push_back(matmul(attn, vh));  // [B,Tq,hd]
  }
  Tensor cat = (n_heads == 1) ? head_outs[0] : concat(head_outs, 2);
  return wo.forward(cat);
}

TransformerBlock::TransformerBlock(ParamRegistry& reg, const std::string& name, int64_t d_model,
                                   int64_t n_heads, int64_t mlp_hidden, Rng& rng, Activation act) {
  ln1 = LayerNorm(reg, name + ".ln1", d_model);
  attn = MultiHeadAttention(reg, name + ".attn", d_model, d_model, n_heads, rng);
  ln2 = LayerNorm(reg, name + ".ln2", d_model);
  mlp = Mlp(reg, name + ".mlp", d_model, mlp_hidden, d_model, rng, act);
}

Tensor TransformerBlock::forward(const Tensor& x, const AttnMask* mask) const {
  Tensor normed = ln1.forward(x);
  Tensor h = add(x, attn.forward(normed, normed, mask));
  return add(h, mlp.forward(ln2.forward(h)));
}

Tensor masked_mean_pool(const Tensor& x, const std::vector<double>& keep, int64_t batch,
                        int64_t t) {
  if (x.rank() != 3 || x.dim(0) != batch || x.dim(1) != t) {
    throw std::invalid_argument("masked_mean_pool: expected [B,T,D] matching keep layout, got " +
                                shape_str(x.shape()));
  }
  if (static_cast<int64_t>(keep.size()) != batch * t) {
    throw std::invalid_argument("masked_mean_pool: keep size does not match batch layout");
  }
  Tensor keep_t = Tensor::from_data({batch, t}, keep);
  std::vector<double> inv_count(static_cast<size_t>(batch), 0.0);
  for (int64_t b = 0; b < batch; ++b) {
    double c = 0.0;
    for (int64_t i = 0; i < t; ++i) c += keep[b * t + i];
    if (c <= 0.0) throw std::invalid_argument("masked_mean_pool: batch row keeps no positions");
    inv_count[static_cast<size_t>(b)] = 1.0 / c;
  }
  Tensor summed = sum_axis(scale_rows(x, keep_t), 1);  // [B,D]
  return scale_rows(summed, Tensor::from_data({batch}, inv_count));
}

}  // namespace trajphen
