#include "trajphen/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace trajphen {

namespace {

thread_local bool g_grad_enabled = true;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

[[noreturn]] void shape_error(const std::string& op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(op + ": incompatible shapes " + shape_str(a) + " and " +
                              shape_str(b));
}

}  // namespace

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

struct Tensor::Impl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until touched
  bool requires_grad = false;
  std::vector<std::shared_ptr<Impl>> parents;
  std::function<void(Impl*)> backward_fn;

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  std::vector<double>& grad_buf() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

Tensor::Tensor(Shape shape, double fill, bool requires_grad) {
  for (int64_t d : shape) {
    if (d <= 0) throw std::invalid_argument("Tensor: nonpositive dimension in " + shape_str(shape));
  }
  if (shape.size() > 3) throw std::invalid_argument("Tensor: rank > 3 not supported " + shape_str(shape));
  impl_ = std::make_shared<Impl>();
  impl_->shape = std::move(shape);
  impl_->data.assign(static_cast<size_t>(shape_numel(impl_->shape)), fill);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  Tensor t(Shape{}, 0.0, requires_grad);
  t.impl_->data[0] = v;
  return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  Tensor t(std::move(shape), 0.0, requires_grad);
  if (static_cast<int64_t>(data.size()) != t.numel()) {
    throw std::invalid_argument("Tensor::from_data: data size " + std::to_string(data.size()) +
                                " does not match shape " + shape_str(t.shape()));
  }
  t.impl_->data = std::move(data);
  return t;
}

const Shape& Tensor::shape() const { return impl_->shape; }

int64_t Tensor::dim(int i) const {
  if (i < 0 || i >= rank()) throw std::out_of_range("Tensor::dim: axis out of range");
  return impl_->shape[static_cast<size_t>(i)];
}

int64_t Tensor::numel() const { return impl_->numel(); }

const std::vector<double>& Tensor::data() const { return impl_->data; }
std::vector<double>& Tensor::data() { return impl_->data; }

double Tensor::value() const {
  if (numel() != 1) throw std::invalid_argument("Tensor::value: tensor is not scalar, shape " + shape_str(shape()));
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }
void Tensor::set_requires_grad(bool v) { impl_->requires_grad = v; }

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }
const std::vector<double>& Tensor::grad() const {
  if (impl_->grad.empty()) throw std::runtime_error("Tensor::grad: no gradient populated");
  return impl_->grad;
}
std::vector<double>& Tensor::grad_buffer() { return impl_->grad_buf(); }

void Tensor::zero_grad() {
  if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::detach() const {
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  t.impl_->shape = impl_->shape;
  t.impl_->data = impl_->data;
  return t;
}

void Tensor::backward() const {
  if (!impl_) throw std::runtime_error("backward: undefined tensor");
  if (numel() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got shape " + shape_str(shape()));
  }
  // Post-order DFS over parents, then run consumers before producers.
  std::vector<Impl*> order;
  std::unordered_set<Impl*> seen;
  struct Frame {
    Impl* node;
    size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({impl_.get(), 0});
  seen.insert(impl_.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      Impl* p = f.node->parents[f.next_parent++].get();
      if (seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }
  impl_->grad_buf()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Impl* node = *it;
    if (node->backward_fn) {
      node->grad_buf();  // nodes in the sweep always read a buffer
      node->backward_fn(node);
    }
  }
}

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

bool grad_enabled() { return g_grad_enabled; }

// ---------------------------------------------------------------------------
// op plumbing

namespace {

bool want_grad(std::initializer_list<const Tensor*> ins) {
  if (!g_grad_enabled) return false;
  for (const Tensor* t : ins) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

void attach(Tensor& out, std::vector<Tensor> parents, std::function<void(Tensor::Impl*)> fn) {
  auto& im = out.impl();
  im->requires_grad = true;
  im->parents.reserve(parents.size());
  for (Tensor& p : parents) im->parents.push_back(p.impl());
  im->backward_fn = std::move(fn);
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw std::invalid_argument(std::string(op) + ": undefined tensor operand");
}

// b must equal a trailing suffix of a's shape; returns how many copies of b
// tile a.
int64_t suffix_factor(const char* op, const Shape& a, const Shape& b) {
  if (b.size() > a.size()) shape_error(op, a, b);
  size_t off = a.size() - b.size();
  for (size_t i = 0; i < b.size(); ++i) {
    if (a[off + i] != b[i]) shape_error(op, a, b);
  }
  int64_t lead = 1;
  for (size_t i = 0; i < off; ++i) lead *= a[i];
  return lead;
}

struct AxisSplit {
  int64_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, int axis) {
  AxisSplit r;
  for (int i = 0; i < static_cast<int>(s.size()); ++i) {
    if (i < axis) r.outer *= s[i];
    else if (i == axis) r.n = s[i];
    else r.inner *= s[i];
  }
  return r;
}

Shape drop_axis(const Shape& s, int axis) {
  Shape r;
  for (int i = 0; i < static_cast<int>(s.size()); ++i) {
    if (i != axis) r.push_back(s[i]);
  }
  return r;
}

int64_t last_dim(const Shape& s) { return s.empty() ? 1 : s.back(); }

// Elementwise unary op with derivative expressed from (x, y).
template <typename Fwd, typename Bwd>
Tensor unary_op(const char* name, const Tensor& x, Fwd f, Bwd dfdx) {
  require_defined(x, name);
  Tensor out(x.shape());
  const auto& xd = x.data();
  auto& od = out.data();
  for (size_t i = 0; i < xd.size(); ++i) od[i] = f(xd[i]);
  if (want_grad({&x})) {
    auto xi = x.impl();
    attach(out, {x}, [xi, dfdx](Tensor::Impl* self) {
      if (!xi->requires_grad) return;
      auto& gx = xi->grad_buf();
      const auto& gy = self->grad;
      for (size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * dfdx(xi->data[i], self->data[i]);
    });
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// matmul family

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();

  int64_t batch = 1, m = 0, k = 0, n = 0;
  bool b_batched = false;
  if (sa.size() == 2 && sb.size() == 2) {
    m = sa[0]; k = sa[1]; n = sb[1];
    if (sb[0] != k) shape_error("matmul", sa, sb);
  } else if (sa.size() == 3 && sb.size() == 2) {
    batch = sa[0]; m = sa[1]; k = sa[2]; n = sb[1];
    if (sb[0] != k) shape_error("matmul", sa, sb);
  } else if (sa.size() == 3 && sb.size() == 3) {
    if (sa[0] != sb[0] || sb[1] != sa[2]) shape_error("matmul", sa, sb);
    batch = sa[0]; m = sa[1]; k = sa[2]; n = sb[2];
    b_batched = true;
  } else {
    shape_error("matmul", sa, sb);
  }

  Shape out_shape = (sa.size() == 2) ? Shape{m, n} : Shape{batch, m, n};
  Tensor out(out_shape);
  {
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* pc = out.data().data();
    for (int64_t i = 0; i < batch; ++i) {
      ConstMap ma(pa + i * m * k, m, k);
      ConstMap mb(pb + (b_batched ? i * k * n : 0), k, n);
      MutMap mc(pc + i * m * n, m, n);
      mc.noalias() = ma * mb;
    }
  }
  if (want_grad({&a, &b})) {
    auto ai = a.impl();
    auto bi = b.impl();
    attach(out, {a, b}, [ai, bi, batch, m, k, n, b_batched](Tensor::Impl* self) {
      const double* pg = self->grad.data();
      if (ai->requires_grad) {
        double* pga = ai->grad_buf().data();
        const double* pb = bi->data.data();
        for (int64_t i = 0; i < batch; ++i) {
          MutMap ga(pga + i * m * k, m, k);
          ConstMap gc(pg + i * m * n, m, n);
          ConstMap mb(pb + (b_batched ? i * k * n : 0), k, n);
          ga.noalias() += gc * mb.transpose();
        }
      }
      if (bi->requires_grad) {
        double* pgb = bi->grad_buf().data();
        const double* pa = ai->data.data();
        for (int64_t i = 0; i < batch; ++i) {
          MutMap gb(pgb + (b_batched ? i * k * n : 0), k, n);
          ConstMap ma(pa + i * m * k, m, k);
          ConstMap gc(pg + i * m * n, m, n);
          gb.noalias() += ma.transpose() * gc;
        }
      }
    });
  }
  return out;
}

Tensor transpose_last2(const Tensor& x) {
  require_defined(x, "transpose_last2");
  const Shape& s = x.shape();
  if (s.size() < 2) throw std::invalid_argument("transpose_last2: needs rank >= 2, got " + shape_str(s));
  int64_t batch = (s.size() == 3) ? s[0] : 1;
  int64_t m = s[s.size() - 2], n = s[s.size() - 1];
  Shape out_shape = s;
  std::swap(out_shape[out_shape.size() - 2], out_shape[out_shape.size() - 1]);
  Tensor out(out_shape);
  const double* px = x.data().data();
  double* po = out.data().data();
  for (int64_t i = 0; i < batch; ++i) {
    for (int64_t r = 0; r < m; ++r) {
      for (int64_t c = 0; c < n; ++c) po[i * m * n + c * m + r] = px[i * m * n + r * n + c];
    }
  }
  if (want_grad({&x})) {
    auto xi = x.impl();
    attach(out, {x}, [xi, batch, m, n](Tensor::Impl* self) {
      if (!xi->requires_grad) return;
      double* gx = xi->grad_buf().data();
      const double* gy = self->grad.data();
      for (int64_t i = 0; i < batch; ++i) {
        for (int64_t r = 0; r < m; ++r) {
          for (int64_t c = 0; c < n; ++c) gx[i * m * n + r * n + c] += gy[i * m * n + c * m + r];
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// elementwise / broadcasting

namespace {

enum class EwKind { Add, Sub, Mul };

Tensor ew_op(const char* name, EwKind kind, const Tensor& a, const Tensor& b) {
  require_defined(a, name);
  require_defined(b, name);
  int64_t lead = suffix_factor(name, a.shape(), b.shape());
  int64_t bn = b.numel();
  Tensor out(a.shape());
  const auto& ad = a.data();
  const auto& bd = b.data();
  auto& od = out.data();
  for (int64_t l = 0; l < lead; ++l) {
    const double* pa = ad.data() + l * bn;
    double* po = od.data() + l * bn;
    switch (kind) {
      case EwKind::Add:
        for (int64_t i = 0; i < bn; ++i) po[i] = pa[i] + bd[i];
        break;
      case EwKind::Sub:
        for (int64_t i = 0; i < bn; ++i) po[i] = pa[i] - bd[i];
        break;
      case EwKind::Mul:
        for (int64_t i = 0; i < bn; ++i) po[i] = pa[i] * bd[i];
        break;
    }
  }
  if (want_grad({&a, &b})) {
    auto ai = a.impl();
    auto bi = b.impl();
    attach(out, {a, b}, [ai, bi, kind, lead, bn](Tensor::Impl* self) {
      const auto& gy = self->grad;
      if (ai->requires_grad) {
        auto& ga = ai->grad_buf();
        if (kind == EwKind::Mul) {
          for (int64_t l = 0; l < lead; ++l) {
            for (int64_t i = 0; i < bn; ++i) ga[l * bn + i] += gy[l * bn + i] * bi->data[i];
          }
        } else {
          for (size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i];
        }
      }
      if (bi->requires_grad) {
        auto& gb = bi->grad_buf();
        for (int64_t l = 0; l < lead; ++l) {
          for (int64_t i = 0; i < bn; ++i) {
            double g = gy[l * bn + i];
            switch (kind) {
              case EwKind::Add: gb[i] += g; break;
              case EwKind::Sub: gb[i] -= g; break;
              case EwKind::Mul: gb[i] += g * ai->data[l * bn + i]; break;
            }
          }
        }
      }
    });
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return ew_op("add", EwKind::Add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return ew_op("sub", EwKind::Sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return ew_op("mul", EwKind::Mul, a, b); }

Tensor neg(const Tensor& x) {
  return unary_op("neg", x, [](double v) { return -v; }, [](double, double) { return -1.0; });
}

Tensor add_scalar(const Tensor& x, double c) {
  return unary_op("add_scalar", x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& x, double c) {
  return unary_op("mul_scalar", x, [c](double v) { return v * c; }, [c](double, double) { return c; });
}

Tensor scale_rows(const Tensor& x, const Tensor& s) {
  require_defined(x, "scale_rows");
  require_defined(s, "scale_rows");
  const Shape& xs = x.shape();
  Shape expect(xs.begin(), xs.empty() ? xs.end() : xs.end() - 1);
  if (s.shape() != expect) shape_error("scale_rows", xs, s.shape());
  int64_t n = last_dim(xs);
  int64_t rows = x.numel() / n;
  Tensor out(xs);
  const auto& xd = x.data();
  const auto& sd = s.data();
  auto& od = out.data();
  for (int64_t r = 0; r < rows; ++r) {
    double c = sd[r];
    for (int64_t i = 0; i < n; ++i) od[r * n + i] = xd[r * n + i] * c;
  }
  if (want_grad({&x, &s})) {
    auto xi = x.impl();
    auto si = s.impl();
    attach(out, {x, s}, [xi, si, rows, n](Tensor::Impl* self) {
      const auto& gy = self->grad;
      if (xi->requires_grad) {
        auto& gx = xi->grad_buf();
        for (int64_t r = 0; r < rows; ++r) {
          double c = si->data[r];
          for (int64_t i = 0; i < n; ++i) gx[r * n + i] += gy[r * n + i] * c;
        }
      }
      if (si->requires_grad) {
        auto& gs = si->grad_buf();
        for (int64_t r = 0; r < rows; ++r) {
          double acc = 0.0;
          for (int64_t i = 0; i < n; ++i) acc += gy[r * n + i] * xi->data[r * n + i];
          gs[r] += acc;
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// nonlinearities

Tensor relu(const Tensor& x) {
  return unary_op("relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
                  [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  return unary_op(
      "gelu", x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); },
      [](double v, double) {
        return 0.5 * (1.0 + std::erf(v * kInvSqrt2)) + v * kInvSqrt2Pi * std::exp(-0.5 * v * v);
      });
}

Tensor exp(const Tensor& x) {
  return unary_op("exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary_op("log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor sqrt(const Tensor& x) {
  return unary_op("sqrt", x, [](double v) { return std::sqrt(v); },
                  [](double, double y) { return 0.5 / y; });
}

Tensor rsqrt(const Tensor& x) {
  return unary_op("rsqrt", x, [](double v) { return 1.0 / std::sqrt(v); },
                  [](double v, double y) { return -0.5 * y / v; });
}

Tensor abs(const Tensor& x) {
  return unary_op("abs", x, [](double v) { return std::fabs(v); },
                  [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor softplus(const Tensor& x) {
  return unary_op(
      "softplus", x,
      [](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::fabs(v))); },
      [](double v, double) { return 1.0 / (1.0 + std::exp(-v)); });
}

Tensor sigmoid(const Tensor& x) {
  return unary_op("sigmoid", x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
                  [](double, double y) { return y * (1.0 - y); });
}

// ---------------------------------------------------------------------------
// softmax / layernorm

Tensor softmax_lastdim(const Tensor& x) {
  require_defined(x, "softmax_lastdim");
  int64_t n = last_dim(x.shape());
  int64_t rows = x.numel() / n;
  Tensor out(x.shape());
  const auto& xd = x.data();
  auto& od = out.data();
  for (int64_t r = 0; r < rows; ++r) {
    const double* px = xd.data() + r * n;
    double* po = od.data() + r * n;
    double mx = px[0];
    for (int64_t i = 1; i < n; ++i) mx = std::max(mx, px[i]);
    double sum = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      po[i] = std::exp(px[i] - mx);
      sum += po[i];
    }
    double inv = 1.0 / sum;
    for (int64_t i = 0; i < n; ++i) po[i] *= inv;
  }
  if (want_grad({&x})) {
    auto xi = x.impl();
    attach(out, {x}, [xi, rows, n](Tensor::Impl* self) {
      if (!xi->requires_grad) return;
      auto& gx = xi->grad_buf();
      for (int64_t r = 0; r < rows; ++r) {
        const double* y = self->data.data() + r * n;
        const double* gy = self->grad.data() + r * n;
        double dot = 0.0;
        for (int64_t i = 0; i < n; ++i) dot += gy[i] * y[i];
        for (int64_t i = 0; i < n; ++i) gx[r * n + i] += y[i] * (gy[i] - dot);
      }
    });
  }
  return out;
}

Tensor logsumexp_lastdim(const Tensor& x) {
  require_defined(x, "logsumexp_lastdim");
  if (x.rank() < 1) throw std::invalid_argument("logsumexp_lastdim: needs rank >= 1");
  int64_t n = last_dim(x.shape());
  int64_t rows = x.numel() / n;
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  Tensor out(out_shape);
  const auto& xd = x.data();
  auto& od = out.data();
  for (int64_t r = 0; r < rows; ++r) {
    const double* px = xd.data() + r * n;
    double mx = px[0];
    for (int64_t i = 1; i < n; ++i) mx = std::max(mx, px[i]);
    double sum = 0.0;
    for (int64_t i = 0; i < n; ++i) sum += std::exp(px[i] - mx);
    od[r] = mx + std::log(sum);
  }
  if (want_grad({&x})) {
    auto xi = x.impl();
    attach(out, {x}, [xi, rows, n](Tensor::Impl* self) {
      if (!xi->requires_grad) return;
      auto& gx = xi->grad_buf();
      for (int64_t r = 0; r < rows; ++r) {
        double lse = self->data[r];
        double g = self->grad[r];
        for (int64_t i = 0; i < n; ++i) {
          gx[r * n + i] += g * std::exp(xi->data[r * n + i] - lse);
        }
      }
    });
  }
  return out;
}

Tensor layernorm_lastdim(const Tensor& x, double eps) {
  require_defined(x, "layernorm_lastdim");
  int64_t n = last_dim(x.shape());
  int64_t rows = x.numel() / n;
  Tensor out(x.shape());
  std::vector<double> inv_std(static_cast<size_t>(rows));
  const auto& xd = x.data();
  auto& od = out.data();
  for (int64_t r = 0; r < rows; ++r) {
    const double* px = xd.data() + r * n;
    double mean = 0.0;
    for (int64_t i = 0; i < n; ++i) mean += px[i];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      double d = px[i] - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    double is = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<size_t>(r)] = is;
    for (int64_t i = 0; i < n; ++i) od[r * n + i] = (px[i] - mean) * is;
  }
  if (want_grad({&x})) {
    auto xi = x.impl();
    attach(out, {x}, [xi, rows, n, inv_std = std::move(inv_std)](Tensor::Impl* self) {
      if (!xi->requires_grad) return;
      auto& gx = xi->grad_buf();
      for (int64_t r = 0; r < rows; ++r) {
        const double* xh = self->data.data() + r * n;
        const double* gy = self->grad.data() + r * n;
        double mean_g = 0.0, mean_gxh = 0.0;
        for (int64_t i = 0; i < n; ++i) {
          mean_g += gy[i];
          mean_gxh += gy[i] * xh[i];
        }
        mean_g /= static_cast<double>(n);
        mean_gxh /= static_cast<double>(n);
        double is = inv_std[static_cast<size_t>(r)];
        for (int64_t i = 0; i < n; ++i) {
          gx[r * n + i] += is * (gy[i] - mean_g - xh[i] * mean_gxh);
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// lookup / gather

Tensor embedding_lookup(const Tensor& table, const std::vector<int64_t>& ids,
                        const Shape& id_shape) {
  require_defined(table, "embedding_lookup");
  if (table.rank() != 2) {
    throw std::invalid_argument("embedding_lookup: table must be rank 2, got " +
                                shape_str(table.shape()));
  }
  if (static_cast<int64_t>(ids.size()) != shape_numel(id_shape)) {
    throw std::invalid_argument("embedding_lookup: ids size does not match id_shape " +
                                shape_str(id_shape));
  }
  int64_t v = table.dim(0), d = table.dim(1);
  Shape out_shape = id_shape;
  out_shape.push_back(d);
  Tensor out(out_shape);
  const auto& td = table.data();
  auto& od = out.data();
  for (size_t r = 0; r < ids.size(); ++r) {
    int64_t id = ids[r];
    if (id < 0 || id >= v) {
      throw std::invalid_argument("embedding_lookup: id " + std::to_string(id) +
                                  " out of range for table " + shape_str(table.shape()));
    }
    std::copy_n(td.data() + id * d, d, od.data() + static_cast<int64_t>(r) * d);
  }
  if (want_grad({&table})) {
    auto ti = table.impl();
    attach(out, {table}, [ti, ids, d](Tensor::Impl* self) {
      if (!ti->requires_grad) return;
      auto& gt = ti->grad_buf();
      for (size_t r = 0; r < ids.size(); ++r) {
        const double* gy = self->grad.data() + static_cast<int64_t>(r) * d;
        double* row = gt.data() + ids[r] * d;
        for (int64_t i = 0; i < d; ++i) row[i] += gy[i];
      }
    });
  }
  return out;
}

Tensor gather_lastdim(const Tensor& x, const std::vector<int64_t>& ids) {
  require_defined(x, "gather_lastdim");
  if (x.rank() < 1) throw std::invalid_argument("gather_lastdim: needs rank >= 1");
  int64_t n = last_dim(x.shape());
  int64_t rows = x.numel() / n;
  if (static_cast<int64_t>(ids.size()) != rows) {
    throw std::invalid_argument("gather_lastdim: ids size " + std::to_string(ids.size()) +
                                " does not match leading positions of " + shape_str(x.shape()));
  }
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  Tensor out(out_shape);
  const auto& xd = x.data();
  auto& od = out.data();
  for (int64_t r = 0; r < rows; ++r) {
    int64_t id = ids[static_cast<size_t>(r)];
    if (id < 0 || id >= n) {
      throw std::invalid_argument("gather_lastdim: index " + std::to_string(id) +
                                  " out of range for " + shape_str(x.shape()));
    }
    od[r] = xd[r * n + id];
  }
  if (want_grad({&x})) {
    auto xi = x.impl();
    attach(out, {x}, [xi, ids, rows, n](Tensor::Impl* self) {
      if (!xi->requires_grad) return;
      auto& gx = xi->grad_buf();
      for (int64_t r = 0; r < rows; ++r) {
        gx[r * n + ids[static_cast<size_t>(r)]] += self->grad[r];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// shape ops

Tensor concat(const std::vector<Tensor>& xs, int axis) {
  if (xs.empty()) throw std::invalid_argument("concat: empty input list");
  for (const Tensor& t : xs) require_defined(t, "concat");
  const Shape& s0 = xs[0].shape();
  int rank = static_cast<int>(s0.size());
  if (axis < 0 || axis >= rank) throw std::invalid_argument("concat: axis out of range");
  int64_t total_axis = 0;
  for (const Tensor& t : xs) {
    const Shape& s = t.shape();
    if (static_cast<int>(s.size()) != rank) shape_error("concat", s0, s);
    for (int i = 0; i < rank; ++i) {
      if (i != axis && s[i] != s0[i]) shape_error("concat", s0, s);
    }
    total_axis += s[axis];
  }
  Shape out_shape = s0;
  out_shape[axis] = total_axis;
  Tensor out(out_shape);
  AxisSplit sp = split_at(out_shape, axis);
  auto& od = out.data();
  int64_t offset = 0;
  for (const Tensor& t : xs) {
    int64_t len = t.shape()[axis];
    const auto& td = t.data();
    for (int64_t o = 0; o < sp.outer; ++o) {
      std::copy_n(td.data() + o * len * sp.inner, len * sp.inner,
                  od.data() + (o * sp.n + offset) * sp.inner);
    }
    offset += len;
  }
  bool any_grad = false;
  for (const Tensor& t : xs) any_grad |= t.requires_grad();
  if (g_grad_enabled && any_grad) {
    std::vector<std::shared_ptr<Tensor::Impl>> impls;
    std::vector<int64_t> lens;
    for (const Tensor& t : xs) {
      impls.push_back(t.impl());
      lens.push_back(t.shape()[axis]);
    }
    attach(out, xs, [impls, lens, sp](Tensor::Impl* self) {
      int64_t offset = 0;
      for (size_t j = 0; j < impls.size(); ++j) {
        auto& p = impls[j];
        int64_t len = lens[j];
        if (p->requires_grad) {
          auto& gp = p->grad_buf();
          for (int64_t o = 0; o < sp.outer; ++o) {
            const double* gy = self->grad.data() + (o * sp.n + offset) * sp.inner;
            double* gx = gp.data() + o * len * sp.inner;
            for (int64_t i = 0; i < len * sp.inner; ++i) gx[i] += gy[i];
          }
        }
        offset += len;
      }
    });
  }
  return out;
}

Tensor slice_axis(const Tensor& x, int axis, int64_t start, int64_t len) {
  require_defined(x, "slice_axis");
  int rank = x.rank();
  if (axis < 0 || axis >= rank) throw std::invalid_argument("slice_axis: axis out of range");
  int64_t n = x.shape()[axis];
  if (start < 0 || len <= 0 || start + len > n) {
    throw std::invalid_argument("slice_axis: range [" + std::to_string(start) + "," +
                                std::to_string(start + len) + ") out of bounds for axis size " +
                                std::to_string(n));
  }
  Shape out_shape = x.shape();
  out_shape[axis] = len;
  Tensor out(out_shape);
  AxisSplit sp = split_at(x.shape(), axis);
  const auto& xd = x.data();
  auto& od = out.data();
  for (int64_t o = 0; o < sp.outer; ++o) {
    std::copy_n(xd.data() + (o * sp.n + start) * sp.inner, len * sp.inner,
                od.data() + o * len * sp.inner);
  }
  if (want_grad({&x})) {
    auto xi = x.impl();
    attach(out, {x}, [xi, sp, start, len](Tensor::Impl* self) {
      if (!xi->requires_grad) return;
      auto& gx = xi->grad_buf();
      for (int64_t o = 0; o < sp.outer; ++o) {
        const double* gy = self->grad.data() + o * len * sp.inner;
        double* gp = gx.data() + (o * sp.n + start) * sp.inner;
        for (int64_t i = 0; i < len * sp.inner; ++i) gp[i] += gy[i];
      }
    });
  }
  return out;
}

Tensor slice_lastdim(const Tensor& x, int64_t start, int64_t len) {
  return slice_axis(x, x.rank() - 1, start, len);
}

Tensor reshape(const Tensor& x, Shape new_shape) {
  require_defined(x, "reshape");
  if (shape_numel(new_shape) != x.numel()) {
    shape_error("reshape", x.shape(), new_shape);
  }
  Tensor out = Tensor::from_data(std::move(new_shape), x.data());
  if (want_grad({&x})) {
    auto xi = x.impl();
    attach(out, {x}, [xi](Tensor::Impl* self) {
      if (!xi->requires_grad) return;
      auto& gx = xi->grad_buf();
      for (size_t i = 0; i < gx.size(); ++i) gx[i] += self->grad[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// reductions

Tensor sum_all(const Tensor& x) {
  require_defined(x, "sum_all");
  double s = 0.0;
  for (double v : x.data()) s += v;
  Tensor out = Tensor::scalar(s);
  if (want_grad({&x})) {
    auto xi = x.impl();
    attach(out, {x}, [xi](Tensor::Impl* self) {
      if (!xi->requires_grad) return;
      auto& gx = xi->grad_buf();
      double g = self->grad[0];
      for (double& v : gx) v += g;
    });
  }
  return out;
}

Tensor mean_all(const Tensor& x) {
  require_defined(x, "mean_all");
  return mul_scalar(sum_all(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor sum_axis(const Tensor& x, int axis) {
  require_defined(x, "sum_axis");
  if (axis < 0 || axis >= x.rank()) throw std::invalid_argument("sum_axis: axis out of range");
  AxisSplit sp = split_at(x.shape(), axis);
  Tensor out(drop_axis(x.shape(), axis));
  const auto& xd = x.data();
  auto& od = out.data();
  for (int64_t o = 0; o < sp.outer; ++o) {
    for (int64_t j = 0; j < sp.n; ++j) {
      const double* px = xd.data() + (o * sp.n + j) * sp.inner;
      double* po = od.data() + o * sp.inner;
      for (int64_t i = 0; i < sp.inner; ++i) po[i] += px[i];
    }
  }
  if (want_grad({&x})) {
    auto xi = x.impl();
    attach(out, {x}, [xi, sp](Tensor::Impl* self) {
      if (!xi->requires_grad) return;
      auto& gx = xi->grad_buf();
      for (int64_t o = 0; o < sp.outer; ++o) {
        const double* gy = self->grad.data() + o * sp.inner;
        for (int64_t j = 0; j < sp.n; ++j) {
          double* gp = gx.data() + (o * sp.n + j) * sp.inner;
          for (int64_t i = 0; i < sp.inner; ++i) gp[i] += gy[i];
        }
      }
    });
  }
  return out;
}

Tensor mean_axis(const Tensor& x, int axis) {
  require_defined(x, "mean_axis");
  if (axis < 0 || axis >= x.rank()) throw std::invalid_argument("mean_axis: axis out of range");
  double inv = 1.0 / static_cast<double>(x.shape()[axis]);
  return mul_scalar(sum_axis(x, axis), inv);
}

// ---------------------------------------------------------------------------
// masking / broadcast

Tensor masked_fill(const Tensor& x, const std::vector<uint8_t>& mask, double value) {
  require_defined(x, "masked_fill");
  if (static_cast<int64_t>(mask.size()) != x.numel()) {
    throw std::invalid_argument("masked_fill: mask size " + std::to_string(mask.size()) +
                                " does not match tensor " + shape_str(x.shape()));
  }
  Tensor out(x.shape());
  const auto& xd = x.data();
  auto& od = out.data();
  for (size_t i = 0; i < xd.size(); ++i) od[i] = mask[i] ? value : xd[i];
  if (want_grad({&x})) {
    auto xi = x.impl();
    attach(out, {x}, [xi, mask](Tensor::Impl* self) {
      if (!xi->requires_grad) return;
      auto& gx = xi->grad_buf();
      for (size_t i = 0; i < gx.size(); ++i) {
        if (!mask[i]) gx[i] += self->grad[i];
      }
    });
  }
  return out;
}

Tensor expand_leading(const Tensor& x, int64_t n) {
  require_defined(x, "expand_leading");
  if (x.rank() > 2) throw std::invalid_argument("expand_leading: input rank must be <= 2");
  if (n <= 0) throw std::invalid_argument("expand_leading: n must be positive");
  Shape out_shape;
  out_shape.push_back(n);
  for (int64_t d : x.shape()) out_shape.push_back(d);
  Tensor out(out_shape);
  int64_t m = x.numel();
  const auto& xd = x.data();
  auto& od = out.data();
  for (int64_t r = 0; r < n; ++r) std::copy_n(xd.data(), m, od.data() + r * m);
  if (want_grad({&x})) {
    auto xi = x.impl();
    attach(out, {x}, [xi, n, m](Tensor::Impl* self) {
      if (!xi->requires_grad) return;
      auto& gx = xi->grad_buf();
      for (int64_t r = 0; r < n; ++r) {
        const double* gy = self->grad.data() + r * m;
        for (int64_t i = 0; i < m; ++i) gx[i] += gy[i];
      }
    });
  }
  return out;
}

}  // namespace trajphen
