#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace trajphen {

// Dense real tensor of rank 0..3, row-major, double precision, with an
// optional reverse-mode backward graph built dynamically per forward pass.
using Shape = std::vector<int64_t>;

std::string shape_str(const Shape& s);
int64_t shape_numel(const Shape& s);

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, double fill, bool requires_grad = false);
  explicit Tensor(Shape shape) : Tensor(std::move(shape), 0.0, false) {}

  static Tensor scalar(double v, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  int rank() const { return static_cast<int>(shape().size()); }
  int64_t dim(int i) const;
  int64_t numel() const;

  const std::vector<double>& data() const;
  std::vector<double>& data();
  double value() const;  // scalar tensors only

  bool requires_grad() const;
  void set_requires_grad(bool v);

  bool has_grad() const;
  const std::vector<double>& grad() const;
  std::vector<double>& grad_buffer();  // allocates zeros if absent
  void zero_grad();

  // Reverse-mode sweep from a scalar. Grads accumulate (+=) into every
  // reachable tensor with requires_grad set.
  void backward() const;

  // Value copy with no graph attached.
  Tensor detach() const;

  // Identity check (same underlying buffer).
  bool same_impl(const Tensor& other) const { return impl_ == other.impl_; }

  struct Impl;
  const std::shared_ptr<Impl>& impl() const { return impl_; }

 private:
  std::shared_ptr<Impl> impl_;
};

// Scoped switch that disables graph recording (inference mode). Thread-local.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

bool grad_enabled();

// ---- Forward ops. Each records its backward rule when grad is enabled and
// ---- any input requires grad. Shape errors name the op and both shapes.

// matmul: [M,K]x[K,N], [B,M,K]x[K,N], [B,M,K]x[B,K,N]
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose_last2(const Tensor& x);

// Elementwise with suffix broadcasting: b.shape must equal a.shape or a
// trailing suffix of it (e.g. [B,T,D] + [D]).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& x);
Tensor add_scalar(const Tensor& x, double c);
Tensor mul_scalar(const Tensor& x, double c);

// Scale every last-dim vector of x by the matching scalar in s:
// x [..., N] * s [...] -> [..., N].
Tensor scale_rows(const Tensor& x, const Tensor& s);

Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor rsqrt(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor sigmoid(const Tensor& x);

Tensor softmax_lastdim(const Tensor& x);
Tensor logsumexp_lastdim(const Tensor& x);  // drops the last axis

// Pure normalization over the last axis: (x - mean) / sqrt(var + eps).
// Affine gain/bias, when wanted, are separate mul/add ops.
Tensor layernorm_lastdim(const Tensor& x, double eps = 1e-5);

// table [V,D], ids arbitrary positional layout -> [id_shape..., D]
Tensor embedding_lookup(const Tensor& table, const std::vector<int64_t>& ids,
                        const Shape& id_shape);

// out[..., r] = x[..., ids[r]] for each leading position r (row-major over
// leading dims); ids.size() == numel(x)/last_dim.
Tensor gather_lastdim(const Tensor& x, const std::vector<int64_t>& ids);

Tensor concat(const std::vector<Tensor>& xs, int axis);
Tensor slice_lastdim(const Tensor& x, int64_t start, int64_t len);
Tensor slice_axis(const Tensor& x, int axis, int64_t start, int64_t len);

Tensor reshape(const Tensor& x, Shape new_shape);

Tensor sum_all(const Tensor& x);   // -> scalar
Tensor mean_all(const Tensor& x);  // -> scalar
Tensor sum_axis(const Tensor& x, int axis);
Tensor mean_axis(const Tensor& x, int axis);

// mask has the same numel as x (row-major); nonzero entries are replaced
// by `value` and pass no gradient.
Tensor masked_fill(const Tensor& x, const std::vector<uint8_t>& mask, double value);

// [d] -> [n,d] or [a,b] -> [n,a,b]; backward sums over the new leading axis.
Tensor expand_leading(const Tensor& x, int64_t n);

}  // namespace trajphen
