#include "anchor/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace anchor {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

namespace detail {

void TensorData::accumulate_grad(const double* g, std::size_t n) {
  auto& buf = grad_buffer();
  for (std::size_t i = 0; i < n; ++i) buf[i] += g[i];
}

std::vector<double>& TensorData::grad_buffer() {
  if (grad.empty()) grad.assign(values.size(), 0.0);
  return grad;
}

}  // namespace detail

namespace {

void check_positive_dims(const Shape& shape) {
  for (auto d : shape) {
    if (d <= 0) {
      throw DimensionError("tensor dimensions must be positive, got " +
                           shape_str(shape));
    }
  }
}

void ensure_finite(const std::vector<double>& values, const char* op) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(op) + " produced a non-finite value");
    }
  }
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

bool should_record(const Tape* tape, std::initializer_list<const Tensor*> inputs) {
  if (!tape) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

// Shared scaffolding: validates finiteness and marks the output
// grad-connected when the op is being recorded. The caller registers the
// backward closure right after.
Tensor finish_op(bool record, Shape shape, std::vector<double> values,
                 const char* op) {
  ensure_finite(values, op);
  Tensor out(std::move(shape), std::move(values));
  if (record) out.set_requires_grad(true);
  return out;
}

}  // namespace

Tensor::Tensor(Shape shape, double fill, bool requires_grad)
    : data_(std::make_shared<detail::TensorData>()) {
  check_positive_dims(shape);
  const auto n = static_cast<std::size_t>(shape_numel(shape));
  data_->shape = std::move(shape);
  data_->values.assign(n, fill);
  data_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : data_(std::make_shared<detail::TensorData>()) {
  check_positive_dims(shape);
  if (shape_numel(shape) != static_cast<std::int64_t>(values.size())) {
    throw DimensionError("value count " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(shape));
  }
  data_->shape = std::move(shape);
  data_->values = std::move(values);
  data_->requires_grad = requires_grad;
}

const std::vector<double>& Tensor::grad() const {
  if (data_->grad.empty()) {
    throw ContractError("tensor has no gradient; run backward() first");
  }
  return data_->grad;
}

Tensor add(const Tensor& a, const Tensor& b, Tape* tape) {
  check_same_shape(a, b, "add");
  const bool rec = should_record(tape, {&a, &b});
  std::vector<double> out(a.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[static_cast<std::int64_t>(i)];
  auto ad = a.data(), bd = b.data();
  Tensor result = finish_op(rec, a.shape(), std::move(out), "add");
  if (rec) {
    auto od = result.data();
    const bool na = a.requires_grad(), nb = b.requires_grad();
    tape->record(od, [=] {
      if (na) ad->accumulate_grad(od->grad.data(), od->grad.size());
      if (nb) bd->accumulate_grad(od->grad.data(), od->grad.size());
    });
  }
  return result;
}

Tensor sub(const Tensor& a, const Tensor& b, Tape* tape) {
  check_same_shape(a, b, "sub");
  const bool rec = should_record(tape, {&a, &b});
  std::vector<double> out(a.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[static_cast<std::int64_t>(i)];
  auto ad = a.data(), bd = b.data();
  Tensor result = finish_op(rec, a.shape(), std::move(out), "sub");
  if (rec) {
    auto od = result.data();
    const bool na = a.requires_grad(), nb = b.requires_grad();
    tape->record(od, [=] {
      if (na) ad->accumulate_grad(od->grad.data(), od->grad.size());
      if (nb) {
        auto& buf = bd->grad_buffer();
        for (std::size_t i = 0; i < buf.size(); ++i) buf[i] -= od->grad[i];
      }
    });
  }
  return result;
}

Tensor mul(const Tensor& a, const Tensor& b, Tape* tape) {
  check_same_shape(a, b, "mul");
  const bool rec = should_record(tape, {&a, &b});
  std::vector<double> out(a.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[static_cast<std::int64_t>(i)];
  auto ad = a.data(), bd = b.data();
  Tensor result = finish_op(rec, a.shape(), std::move(out), "mul");
  if (rec) {
    auto od = result.data();
    const bool na = a.requires_grad(), nb = b.requires_grad();
    tape->record(od, [=] {
      if (na) {
        auto& buf = ad->grad_buffer();
        for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += od->grad[i] * bd->values[i];
      }
      if (nb) {
        auto& buf = bd->grad_buffer();
        for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += od->grad[i] * ad->values[i];
      }
    });
  }
  return result;
}

Tensor relu(const Tensor& a, Tape* tape) {
  const bool rec = should_record(tape, {&a});
  std::vector<double> out(a.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] > 0.0 ? a[i] : 0.0;
  auto ad = a.data();
  Tensor result = finish_op(rec, a.shape(), std::move(out), "relu");
  if (rec) {
    auto od = result.data();
    tape->record(od, [=] {
      auto& buf = ad->grad_buffer();
      for (std::size_t i = 0; i < buf.size(); ++i) {
        if (ad->values[i] > 0.0) buf[i] += od->grad[i];
      }
    });
  }
  return result;
}

Tensor scale(const Tensor& a, double s, Tape* tape) {
  const bool rec = should_record(tape, {&a});
  std::vector<double> out(a.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * s;
  auto ad = a.data();
  Tensor result = finish_op(rec, a.shape(), std::move(out), "scale");
  if (rec) {
    auto od = result.data();
    tape->record(od, [=] {
      auto& buf = ad->grad_buffer();
      for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += od->grad[i] * s;
    });
  }
  return result;
}

Tensor add_scalar(const Tensor& a, double s, Tape* tape) {
  const bool rec = should_record(tape, {&a});
  std::vector<double> out(a.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + s;
  auto ad = a.data();
  Tensor result = finish_op(rec, a.shape(), std::move(out), "add_scalar");
  if (rec) {
    auto od = result.data();
    tape->record(od, [=] { ad->accumulate_grad(od->grad.data(), od->grad.size()); });
  }
  return result;
}

Tensor sum(const Tensor& a, Tape* tape) {
  const bool rec = should_record(tape, {&a});
  double total = 0.0;
  for (std::size_t i = 0; i < a.values().size(); ++i) total += a.values()[i];
  auto ad = a.data();
  Tensor result = finish_op(rec, Shape{1}, std::vector<double>{total}, "sum");
  if (rec) {
    auto od = result.data();
    tape->record(od, [=] {
      const double g = od->grad[0];
      auto& buf = ad->grad_buffer();
      for (double& v : buf) v += g;
    });
  }
  return result;
}

namespace {

// C[m,n] += A[m,k] . B[k,n], ikj order for contiguous inner loops.
void matmul_accum(const double* a, const double* b, double* c,
                  std::int64_t m, std::int64_t k, std::int64_t n) {
  for (std::int64_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::int64_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m,n] += A[k,m]^T . B[k,n]
void matmul_at_accum(const double* a, const double* b, double* c,
                     std::int64_t k, std::int64_t m, std::int64_t n) {
  for (std::int64_t p = 0; p < k; ++p) {
    const double* arow = a + p * m;
    const double* brow = b + p * n;
    for (std::int64_t i = 0; i < m; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* crow = c + i * n;
      for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m,k] += A[m,n] . B[k,n]^T
void matmul_bt_accum(const double* a, const double* b, double* c,
                     std::int64_t m, std::int64_t n, std::int64_t k) {
  for (std::int64_t i = 0; i < m; ++i) {
    const double* arow = a + i * n;
    double* crow = c + i * k;
    for (std::int64_t p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      double acc = 0.0;
      for (std::int64_t j = 0; j < n; ++j) acc += arow[j] * brow[j];
      crow[p] += acc;
    }
  }
}

void check_matmul_dims(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected rank-2 tensors, got " +
                         shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  if (a.dim(1) != b.dim(0)) {
    throw DimensionError(std::string(op) + ": inner dimensions disagree, " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape) {
  check_matmul_dims(a, b, "matmul");
  const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  const bool rec = should_record(tape, {&a, &b});
  std::vector<double> out(static_cast<std::size_t>(m * n), 0.0);
  matmul_accum(a.values().data(), b.values().data(), out.data(), m, k, n);
  auto ad = a.data(), bd = b.data();
  Tensor result = finish_op(rec, Shape{m, n}, std::move(out), "matmul");
  if (rec) {
    auto od = result.data();
    const bool na = a.requires_grad(), nb = b.requires_grad();
    tape->record(od, [=] {
      if (na) {  // dA = dC . B^T
        matmul_bt_accum(od->grad.data(), bd->values.data(),
                        ad->grad_buffer().data(), m, n, k);
      }
      if (nb) {  // dB = A^T . dC
        matmul_at_accum(ad->values.data(), od->grad.data(),
                        bd->grad_buffer().data(), m, k, n);
      }
    });
  }
  return result;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias, Tape* tape) {
  check_matmul_dims(x, w, "linear");
  const std::int64_t n = x.dim(0), in = x.dim(1), out_dim = w.dim(1);
  if (bias.rank() != 1 || bias.dim(0) != out_dim) {
    throw DimensionError("linear: bias shape " + shape_str(bias.shape()) +
                         " does not match output width " + std::to_string(out_dim));
  }
  const bool rec = should_record(tape, {&x, &w, &bias});
  std::vector<double> out(static_cast<std::size_t>(n * out_dim));
  for (std::int64_t i = 0; i < n; ++i) {
    std::copy(bias.values().begin(), bias.values().end(),
              out.begin() + i * out_dim);
  }
  matmul_accum(x.values().data(), w.values().data(), out.data(), n, in, out_dim);
  auto xd = x.data(), wd = w.data(), bd = bias.data();
  Tensor result = finish_op(rec, Shape{n, out_dim}, std::move(out), "linear");
  if (rec) {
    auto od = result.data();
    const bool nx = x.requires_grad(), nw = w.requires_grad(), nb = bias.requires_grad();
    tape->record(od, [=] {
      if (nx) {
        matmul_bt_accum(od->grad.data(), wd->values.data(),
                        xd->grad_buffer().data(), n, out_dim, in);
      }
      if (nw) {
        matmul_at_accum(xd->values.data(), od->grad.data(),
                        wd->grad_buffer().data(), n, in, out_dim);
      }
      if (nb) {
        auto& buf = bd->grad_buffer();
        for (std::int64_t i = 0; i < n; ++i) {
          const double* grow = od->grad.data() + i * out_dim;
          for (std::int64_t j = 0; j < out_dim; ++j) buf[static_cast<std::size_t>(j)] += grow[j];
        }
      }
    });
  }
  return result;
}

namespace {

struct ConvDims {
  std::int64_t n, cin, h, w, f, kh, kw, oh, ow;
  int stride, padding;
};

ConvDims check_conv_dims(const Tensor& input, const Tensor& kernel,
                         const Tensor& bias, int stride, int padding) {
  if (input.rank() != 4 || kernel.rank() != 4) {
    throw DimensionError("conv2d: expected rank-4 input and kernel, got " +
                         shape_str(input.shape()) + " and " + shape_str(kernel.shape()));
  }
  if (stride < 1) throw ValidationError("conv2d: stride must be >= 1");
  if (padding < 0) throw ValidationError("conv2d: padding must be >= 0");
  ConvDims d{};
  d.n = input.dim(0); d.cin = input.dim(1); d.h = input.dim(2); d.w = input.dim(3);
  d.f = kernel.dim(0); d.kh = kernel.dim(2); d.kw = kernel.dim(3);
  d.stride = stride; d.padding = padding;
  if (kernel.dim(1) != d.cin) {
    throw DimensionError("conv2d: kernel channels " + shape_str(kernel.shape()) +
                         " do not match input " + shape_str(input.shape()));
  }
  if (bias.rank() != 1 || bias.dim(0) != d.f) {
    throw DimensionError("conv2d: bias shape " + shape_str(bias.shape()) +
                         " does not match filter count " + std::to_string(d.f));
  }
  if (d.h + 2 * padding < d.kh || d.w + 2 * padding < d.kw) {
    throw DimensionError("conv2d: kernel " + shape_str(kernel.shape()) +
                         " larger than padded input " + shape_str(input.shape()));
  }
  d.oh = (d.h + 2 * padding - d.kh) / stride + 1;
  d.ow = (d.w + 2 * padding - d.kw) / stride + 1;
  return d;
}

// Output rows touched by kernel row offset kr: oh*stride - padding + kr in [0, H).
inline void out_range(std::int64_t k_off, std::int64_t in_dim, std::int64_t out_dim,
                      int stride, int padding, std::int64_t& lo, std::int64_t& hi) {
  const std::int64_t shift = k_off - padding;  // in = out*stride + shift
  lo = 0;
  if (shift < 0) lo = (-shift + stride - 1) / stride;
  hi = out_dim - 1;
  const std::int64_t max_in = in_dim - 1 - shift;
  if (max_in < 0) { hi = -1; return; }
  hi = std::min(hi, max_in / stride);
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              int stride, int padding, Tape* tape) {
  const ConvDims d = check_conv_dims(input, kernel, bias, stride, padding);
  const bool rec = should_record(tape, {&input, &kernel, &bias});
  std::vector<double> out(static_cast<std::size_t>(d.n * d.f * d.oh * d.ow));

  const double* in = input.values().data();
  const double* ker = kernel.values().data();
  const std::int64_t in_hw = d.h * d.w, out_hw = d.oh * d.ow;

  for (std::int64_t ni = 0; ni < d.n; ++ni) {
    for (std::int64_t fi = 0; fi < d.f; ++fi) {
      double* out_map = out.data() + (ni * d.f + fi) * out_hw;
      const double bv = bias[fi];
      for (std::int64_t i = 0; i < out_hw; ++i) out_map[i] = bv;
      for (std::int64_t ci = 0; ci < d.cin; ++ci) {
        const double* in_map = in + (ni * d.cin + ci) * in_hw;
        const double* kmap = ker + (fi * d.cin + ci) * d.kh * d.kw;
        for (std::int64_t kr = 0; kr < d.kh; ++kr) {
          std::int64_t oh_lo, oh_hi;
          out_range(kr, d.h, d.oh, stride, padding, oh_lo, oh_hi);
          for (std::int64_t kc = 0; kc < d.kw; ++kc) {
            const double kv = kmap[kr * d.kw + kc];
            if (kv == 0.0) continue;
            std::int64_t ow_lo, ow_hi;
            out_range(kc, d.w, d.ow, stride, padding, ow_lo, ow_hi);
            for (std::int64_t oh = oh_lo; oh <= oh_hi; ++oh) {
              const std::int64_t ih = oh * stride - padding + kr;
              const double* in_row = in_map + ih * d.w - padding + kc;
              double* out_row = out_map + oh * d.ow;
              for (std::int64_t ow = ow_lo; ow <= ow_hi; ++ow) {
                out_row[ow] += kv * in_row[ow * stride];
              }
            }
          }
        }
      }
    }
  }

  auto id = input.data(), kd = kernel.data(), bd = bias.data();
  Tensor result = finish_op(rec, Shape{d.n, d.f, d.oh, d.ow},
                            std::move(out), "conv2d");
  if (rec) {
    auto od = result.data();
    const bool ngi = input.requires_grad();
    const bool ngk = kernel.requires_grad();
    const bool ngb = bias.requires_grad();
    tape->record(od, [=] {
      const double* gout = od->grad.data();
      const std::int64_t in_hw2 = d.h * d.w, out_hw2 = d.oh * d.ow;
      double* gin = ngi ? id->grad_buffer().data() : nullptr;
      double* gker = ngk ? kd->grad_buffer().data() : nullptr;
      if (ngb) {
        auto& gb = bd->grad_buffer();
        for (std::int64_t ni = 0; ni < d.n; ++ni) {
          for (std::int64_t fi = 0; fi < d.f; ++fi) {
            const double* gmap = gout + (ni * d.f + fi) * out_hw2;
            double acc = 0.0;
            for (std::int64_t i = 0; i < out_hw2; ++i) acc += gmap[i];
            gb[static_cast<std::size_t>(fi)] += acc;
          }
        }
      }
      if (!ngi && !ngk) return;
      for (std::int64_t ni = 0; ni < d.n; ++ni) {
        for (std::int64_t fi = 0; fi < d.f; ++fi) {
          const double* gmap = gout + (ni * d.f + fi) * out_hw2;
          for (std::int64_t ci = 0; ci < d.cin; ++ci) {
            const double* in_map = id->values.data() + (ni * d.cin + ci) * in_hw2;
            double* gin_map = ngi ? gin + (ni * d.cin + ci) * in_hw2 : nullptr;
            const std::int64_t koff = (fi * d.cin + ci) * d.kh * d.kw;
            for (std::int64_t kr = 0; kr < d.kh; ++kr) {
              std::int64_t oh_lo, oh_hi;
              out_range(kr, d.h, d.oh, d.stride, d.padding, oh_lo, oh_hi);
              for (std::int64_t kc = 0; kc < d.kw; ++kc) {
                std::int64_t ow_lo, ow_hi;
                out_range(kc, d.w, d.ow, d.stride, d.padding, ow_lo, ow_hi);
                const double kv = kd->values[static_cast<std::size_t>(koff + kr * d.kw + kc)];
                double kacc = 0.0;
                for (std::int64_t oh = oh_lo; oh <= oh_hi; ++oh) {
                  const std::int64_t ih = oh * d.stride - d.padding + kr;
                  const std::int64_t base = ih * d.w - d.padding + kc;
                  const double* grow = gmap + oh * d.ow;
                  if (ngk) {
                    const double* in_row = in_map + base;
                    for (std::int64_t ow = ow_lo; ow <= ow_hi; ++ow) {
                      kacc += grow[ow] * in_row[ow * d.stride];
                    }
                  }
                  if (ngi && kv != 0.0) {
                    double* gin_row = gin_map + base;
                    for (std::int64_t ow = ow_lo; ow <= ow_hi; ++ow) {
                      gin_row[ow * d.stride] += kv * grow[ow];
                    }
                  }
                }
                if (ngk) gker[koff + kr * d.kw + kc] += kacc;
              }
            }
          }
        }
      }
    });
  }
  return result;
}

Tensor avg_pool2d(const Tensor& input, int window, Tape* tape) {
  if (input.rank() != 4) {
    throw DimensionError("avg_pool2d: expected rank-4 input, got " +
                         shape_str(input.shape()));
  }
  if (window < 1) throw ValidationError("avg_pool2d: window must be >= 1");
  const std::int64_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (h % window != 0 || w % window != 0) {
    throw DimensionError("avg_pool2d: input " + shape_str(input.shape()) +
                         " not divisible by window " + std::to_string(window));
  }
  const std::int64_t oh = h / window, ow = w / window;
  const double inv = 1.0 / (static_cast<double>(window) * window);
  const bool rec = should_record(tape, {&input});
  std::vector<double> out(static_cast<std::size_t>(n * c * oh * ow), 0.0);
  const double* in = input.values().data();
  for (std::int64_t m = 0; m < n * c; ++m) {
    const double* in_map = in + m * h * w;
    double* out_map = out.data() + m * oh * ow;
    for (std::int64_t i = 0; i < oh; ++i) {
      for (std::int64_t j = 0; j < ow; ++j) {
        double acc = 0.0;
        for (int r = 0; r < window; ++r) {
          const double* row = in_map + (i * window + r) * w + j * window;
          for (int s = 0; s < window; ++s) acc += row[s];
        }
        out_map[i * ow + j] = acc * inv;
      }
    }
  }
  auto id = input.data();
  Tensor result = finish_op(rec, Shape{n, c, oh, ow}, std::move(out),
                            "avg_pool2d");
  if (rec) {
    auto od = result.data();
    tape->record(od, [=] {
      auto& gin = id->grad_buffer();
      const double* gout = od->grad.data();
      for (std::int64_t m = 0; m < n * c; ++m) {
        double* gin_map = gin.data() + m * h * w;
        const double* gmap = gout + m * oh * ow;
        for (std::int64_t i = 0; i < oh; ++i) {
          for (std::int64_t j = 0; j < ow; ++j) {
            const double g = gmap[i * ow + j] * inv;
            for (int r = 0; r < window; ++r) {
              double* row = gin_map + (i * window + r) * w + j * window;
              for (int s = 0; s < window; ++s) row[s] += g;
            }
          }
        }
      }
    });
  }
  return result;
}

namespace {

void check_rows(const Tensor& t, const char* op) {
  if (t.rank() != 2 || t.dim(1) < 1) {
    throw DimensionError(std::string(op) + ": expected [N,C] with C >= 1, got " +
                         shape_str(t.shape()));
  }
}

// Stable per-row softmax into `out`; returns nothing else.
void softmax_rows(const double* logits, double* out, std::int64_t n, std::int64_t c) {
  for (std::int64_t i = 0; i < n; ++i) {
    const double* row = logits + i * c;
    double* orow = out + i * c;
    double mx = row[0];
    for (std::int64_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (std::int64_t j = 0; j < c; ++j) {
      orow[j] = std::exp(row[j] - mx);
      denom += orow[j];
    }
    const double inv = 1.0 / denom;
    for (std::int64_t j = 0; j < c; ++j) orow[j] *= inv;
  }
}

}  // namespace

Tensor logsumexp(const Tensor& logits, Tape* tape) {
  check_rows(logits, "logsumexp");
  const std::int64_t n = logits.dim(0), c = logits.dim(1);
  const bool rec = should_record(tape, {&logits});
  std::vector<double> out(static_cast<std::size_t>(n));
  const double* in = logits.values().data();
  for (std::int64_t i = 0; i < n; ++i) {
    const double* row = in + i * c;
    double mx = row[0];
    for (std::int64_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double acc = 0.0;
    for (std::int64_t j = 0; j < c; ++j) acc += std::exp(row[j] - mx);
    out[static_cast<std::size_t>(i)] = mx + std::log(acc);
  }
  auto ld = logits.data();
  Tensor result = finish_op(rec, Shape{n}, std::move(out), "logsumexp");
  if (rec) {
    auto od = result.data();
    tape->record(od, [=] {
      auto& buf = ld->grad_buffer();
      std::vector<double> sm(static_cast<std::size_t>(n * c));
      softmax_rows(ld->values.data(), sm.data(), n, c);
      for (std::int64_t i = 0; i < n; ++i) {
        const double g = od->grad[static_cast<std::size_t>(i)];
        for (std::int64_t j = 0; j < c; ++j) buf[i * c + j] += g * sm[i * c + j];
      }
    });
  }
  return result;
}

Tensor cross_entropy_soft(const Tensor& logits, const Tensor& target, Tape* tape) {
  check_rows(logits, "cross_entropy_soft");
  check_same_shape(logits, target, "cross_entropy_soft");
  const std::int64_t n = logits.dim(0), c = logits.dim(1);
  const double* tgt = target.values().data();
  for (std::int64_t i = 0; i < n; ++i) {
    double row_sum = 0.0;
    for (std::int64_t j = 0; j < c; ++j) {
      const double t = tgt[i * c + j];
      if (t < 0.0) {
        throw ValidationError("cross_entropy_soft: negative target entry in row " +
                              std::to_string(i));
      }
      row_sum += t;
    }
    if (std::abs(row_sum - 1.0) > 1e-6) {
      throw ValidationError("cross_entropy_soft: target row " + std::to_string(i) +
                            " sums to " + std::to_string(row_sum) + ", expected 1");
    }
  }
  const bool rec = should_record(tape, {&logits, &target});
  const double* in = logits.values().data();
  double loss = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double* row = in + i * c;
    double mx = row[0];
    for (std::int64_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (std::int64_t j = 0; j < c; ++j) denom += std::exp(row[j] - mx);
    const double lse = mx + std::log(denom);
    for (std::int64_t j = 0; j < c; ++j) {
      const double t = tgt[i * c + j];
      if (t != 0.0) loss -= t * (row[j] - lse);
    }
  }
  loss /= static_cast<double>(n);
  auto ld = logits.data(), td = target.data();
  Tensor result = finish_op(rec, Shape{1}, std::vector<double>{loss},
                            "cross_entropy_soft");
  if (rec) {
    auto od = result.data();
    tape->record(od, [=] {
      const double g = od->grad[0] / static_cast<double>(n);
      auto& buf = ld->grad_buffer();
      std::vector<double> sm(static_cast<std::size_t>(n * c));
      softmax_rows(ld->values.data(), sm.data(), n, c);
      for (std::int64_t i = 0; i < n * c; ++i) {
        buf[i] += g * (sm[i] - td->values[static_cast<std::size_t>(i)]);
      }
    });
  }
  return result;
}

Tensor softmax(const Tensor& logits) {
  check_rows(logits, "softmax");
  const std::int64_t n = logits.dim(0), c = logits.dim(1);
  std::vector<double> out(static_cast<std::size_t>(n * c));
  softmax_rows(logits.values().data(), out.data(), n, c);
  return Tensor(logits.shape(), std::move(out));
}

void backward(const Tensor& loss, Tape& tape) {
  if (loss.size() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " +
                        shape_str(loss.shape()));
  }
  bool on_tape = false;
  for (const auto& node : tape.nodes_) {
    if (node.output == loss.data()) { on_tape = true; break; }
  }
  if (!on_tape) {
    throw ContractError("backward: loss tensor was not produced on this tape");
  }
  loss.data()->grad_buffer()[0] += 1.0;
  for (auto it = tape.nodes_.rbegin(); it != tape.nodes_.rend(); ++it) {
    if (it->output->grad.empty()) continue;  // unreachable from the loss
    it->backward();
  }
}

void sgd_step(ParamList& params, SgdState& state) {
  for (auto& p : params) {
    auto& data = *p.tensor.data();
    if (data.grad.empty()) {
      throw ContractError("sgd_step: parameter '" + p.name + "' has no gradient");
    }
    auto& vel = state.velocity[p.name];
    if (vel.empty()) vel.assign(data.values.size(), 0.0);
    if (vel.size() != data.values.size()) {
      throw ContractError("sgd_step: velocity size mismatch for '" + p.name + "'");
    }
    for (std::size_t i = 0; i < data.values.size(); ++i) {
      const double g = data.grad[i] + state.weight_decay * data.values[i];
      vel[i] = state.momentum * vel[i] + g;
      data.values[i] -= state.learning_rate * vel[i];
    }
  }
}

}  // namespace anchor
