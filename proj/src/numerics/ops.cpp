#include "saig/numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "gemm.hpp"

namespace saig::nn {

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

namespace {

using detail::gemm_nn;
using detail::gemm_nt;
using detail::gemm_tn;

// Grad buffer of input `i`, or nullptr when that input does not take gradients.
template <typename T>
T* grad_of(Node<T>& self, std::size_t i) {
  auto& in = *self.inputs[i];
  return in.requires_grad ? in.grad.data() : nullptr;
}

template <typename T>
const std::vector<T>& value_of(const Node<T>& self, std::size_t i) {
  return self.inputs[i]->value;
}

std::size_t last_dim(const Shape& s) { return s.empty() ? 0 : s.back(); }

void require_rank(const Shape& s, std::size_t rank, const char* op) {
  if (s.size() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(s));
  }
}

}  // namespace

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> value, std::vector<Tensor<T>> inputs, const char* op,
                      std::function<void(Node<T>&)> backward) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  const bool needs_grad =
      !detail::no_grad_flag() && std::any_of(inputs.begin(), inputs.end(), [](const Tensor<T>& t) { return t.requires_grad(); });
  if (needs_grad) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& t : inputs) node->inputs.push_back(t.shared_node());
    node->backward = std::move(backward);
  }
  return Tensor<T>(std::move(node));
}

template <typename T>
void check_finite(const Tensor<T>& x, const std::string& where) {
  for (std::size_t i = 0; i < x.numel(); ++i) {
    if (!std::isfinite(x[i])) {
      throw NumericError("non-finite value at flat index " + std::to_string(i) + " in " + where);
    }
  }
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("add: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return make_result<T>(a.shape(), std::move(out), {a, b}, "add", [](Node<T>& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (T* g = grad_of(self, k)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
      }
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("mul: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return make_result<T>(a.shape(), std::move(out), {a, b}, "mul", [](Node<T>& self) {
    const auto& av = value_of(self, 0);
    const auto& bv = value_of(self, 1);
    T* ga = grad_of(self, 0);
    T* gb = grad_of(self, 1);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (ga) ga[i] += self.grad[i] * bv[i];
      if (gb) gb[i] += self.grad[i] * av[i];
    }
  });
}

template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  const std::size_t n = last_dim(x.shape());
  if (bias.numel() != n) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " vs input " + shape_str(x.shape()));
  }
  const std::size_t rows = x.numel() / n;
  std::vector<T> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = x[r * n + j] + bias[j];
  }
  return make_result<T>(x.shape(), std::move(out), {x, bias}, "add_bias", [rows, n](Node<T>& self) {
    const auto& g = self.grad;
    if (T* gx = grad_of(self, 0)) {
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (T* gb = grad_of(self, 1)) {
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < n; ++j) gb[j] += g[r * n + j];
      }
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
  return make_result<T>(x.shape(), std::move(out), {x}, "scale", [factor](Node<T>& self) {
    if (T* gx = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i] * factor;
    }
  });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > T{0} ? x[i] : T{0};
  return make_result<T>(x.shape(), std::move(out), {x}, "relu", [](Node<T>& self) {
    if (T* gx = grad_of(self, 0)) {
      const auto& xv = value_of(self, 0);
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        if (xv[i] > T{0}) gx[i] += self.grad[i];
      }
    }
  });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T kInvSqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = x[i] * T(0.5) * (T(1) + std::erf(x[i] * kInvSqrt2));
  }
  return make_result<T>(x.shape(), std::move(out), {x}, "gelu", [](Node<T>& self) {
    if (T* gx = grad_of(self, 0)) {
      constexpr T kInvSqrt2 = T(1) / std::numbers::sqrt2_v<T>;
      const T inv_sqrt_2pi = std::numbers::inv_sqrtpi_v<T> * kInvSqrt2;
      const auto& xv = value_of(self, 0);
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        const T cdf = T(0.5) * (T(1) + std::erf(xv[i] * kInvSqrt2));
        const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * xv[i] * xv[i]);
        gx[i] += self.grad[i] * (cdf + xv[i] * pdf);
      }
    }
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total{0};
  for (std::size_t i = 0; i < x.numel(); ++i) total += x[i];
  return make_result<T>(Shape{1}, {total}, {x}, "sum", [](Node<T>& self) {
    if (T* gx = grad_of(self, 0)) {
      const std::size_t n = self.inputs[0]->value.size();
      for (std::size_t i = 0; i < n; ++i) gx[i] += self.grad[0];
    }
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  return make_result<T>(std::move(shape), std::move(out), {x}, "reshape", [](Node<T>& self) {
    if (T* gx = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> transpose_last2(const Tensor<T>& x) {
  if (x.rank() < 2) throw DimensionError("transpose_last2: rank < 2");
  const std::size_t m = x.dim(x.rank() - 2), n = x.dim(x.rank() - 1);
  const std::size_t batch = x.numel() / (m * n);
  Shape shape = x.shape();
  std::swap(shape[shape.size() - 2], shape[shape.size() - 1]);
  std::vector<T> out(x.numel());
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) out[b * m * n + j * m + i] = x[b * m * n + i * n + j];
    }
  }
  return make_result<T>(std::move(shape), std::move(out), {x}, "transpose", [batch, m, n](Node<T>& self) {
    if (T* gx = grad_of(self, 0)) {
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) gx[b * m * n + i * n + j] += self.grad[b * m * n + j * m + i];
        }
      }
    }
  });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (b.rank() != 2 || a.rank() < 1 || last_dim(a.shape()) != b.dim(0)) {
    throw DimensionError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const std::size_t k = b.dim(0), n = b.dim(1), m = a.numel() / k;
  Shape shape = a.shape();
  shape.back() = n;
  std::vector<T> out(m * n, T{0});
  gemm_nn(m, n, k, a.data().data(), b.data().data(), out.data());
  return make_result<T>(std::move(shape), std::move(out), {a, b}, "matmul", [m, n, k](Node<T>& self) {
    const T* g = self.grad.data();
    if (T* ga = grad_of(self, 0)) gemm_nt(m, k, n, g, value_of(self, 1).data(), ga);
    if (T* gb = grad_of(self, 1)) gemm_tn(k, n, m, value_of(self, 0).data(), g, gb);
  });
}

template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) {
    throw DimensionError("matmul_nt: " + shape_str(a.shape()) + " x " + shape_str(b.shape()) + "^T");
  }
  const std::size_t m = a.dim(0), n = b.dim(0), k = a.dim(1);
  std::vector<T> out(m * n, T{0});
  gemm_nt(m, n, k, a.data().data(), b.data().data(), out.data());
  return make_result<T>(Shape{m, n}, std::move(out), {a, b}, "matmul_nt", [m, n, k](Node<T>& self) {
    const T* g = self.grad.data();
    if (T* ga = grad_of(self, 0)) gemm_nn(m, k, n, g, value_of(self, 1).data(), ga);
    if (T* gb = grad_of(self, 1)) gemm_tn(n, k, m, g, value_of(self, 0).data(), gb);
  });
}

template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
    throw DimensionError("bmm: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const std::size_t B = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  std::vector<T> out(B * m * n, T{0});
  for (std::size_t i = 0; i < B; ++i) {
    gemm_nn(m, n, k, a.data().data() + i * m * k, b.data().data() + i * k * n, out.data() + i * m * n);
  }
  return make_result<T>(Shape{B, m, n}, std::move(out), {a, b}, "bmm", [B, m, n, k](Node<T>& self) {
    const T* g = self.grad.data();
    const T* av = value_of(self, 0).data();
    const T* bv = value_of(self, 1).data();
    T* ga = grad_of(self, 0);
    T* gb = grad_of(self, 1);
    for (std::size_t i = 0; i < B; ++i) {
      if (ga) gemm_nt(m, k, n, g + i * m * n, bv + i * k * n, ga + i * m * k);
      if (gb) gemm_tn(k, n, m, av + i * m * k, g + i * m * n, gb + i * k * n);
    }
  });
}

template <typename T>
Tensor<T> bmm_nt(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2)) {
    throw DimensionError("bmm_nt: " + shape_str(a.shape()) + " x " + shape_str(b.shape()) + "^T");
  }
  const std::size_t B = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(1);
  std::vector<T> out(B * m * n, T{0});
  for (std::size_t i = 0; i < B; ++i) {
    gemm_nt(m, n, k, a.data().data() + i * m * k, b.data().data() + i * n * k, out.data() + i * m * n);
  }
  return make_result<T>(Shape{B, m, n}, std::move(out), {a, b}, "bmm_nt", [B, m, n, k](Node<T>& self) {
    const T* g = self.grad.data();
    const T* av = value_of(self, 0).data();
    const T* bv = value_of(self, 1).data();
    T* ga = grad_of(self, 0);
    T* gb = grad_of(self, 1);
    for (std::size_t i = 0; i < B; ++i) {
      if (ga) gemm_nn(m, k, n, g + i * m * n, bv + i * n * k, ga + i * m * k);
      if (gb) gemm_tn(n, k, m, g + i * m * n, av + i * m * k, gb + i * n * k);
    }
  });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  return add_bias(matmul(x, weight), bias);
}

template <typename T>
Tensor<T> softmax_row(const Tensor<T>& x) {
  const std::size_t n = last_dim(x.shape());
  if (n == 0) throw DimensionError("softmax_row: empty last axis");
  const std::size_t rows = x.numel() / n;
  std::vector<T> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = x.data().data() + r * n;
    T* o = out.data() + r * n;
    const T peak = *std::max_element(in, in + n);
    T total{0};
    for (std::size_t j = 0; j < n; ++j) {
      o[j] = std::exp(in[j] - peak);
      total += o[j];
    }
    for (std::size_t j = 0; j < n; ++j) o[j] /= total;
  }
  return make_result<T>(x.shape(), std::move(out), {x}, "softmax", [rows, n](Node<T>& self) {
    if (T* gx = grad_of(self, 0)) {
      for (std::size_t r = 0; r < rows; ++r) {
        const T* y = self.value.data() + r * n;
        const T* g = self.grad.data() + r * n;
        T dot{0};
        for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
        for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += y[j] * (g[j] - dot);
      }
    }
  });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  const std::size_t d = last_dim(x.shape());
  if (d == 0 || gamma.numel() != d || beta.numel() != d) {
    throw DimensionError("layer_norm: input " + shape_str(x.shape()) + ", gamma " + shape_str(gamma.shape()));
  }
  if (!(eps > T{0})) throw ContractError("layer_norm: eps must be positive");
  const std::size_t rows = x.numel() / d;
  std::vector<T> out(x.numel()), xhat(x.numel()), rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = x.data().data() + r * d;
    T mu{0};
    for (std::size_t j = 0; j < d; ++j) mu += in[j];
    mu /= static_cast<T>(d);
    T var{0};
    for (std::size_t j = 0; j < d; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= static_cast<T>(d);
    rstd[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (in[j] - mu) * rstd[r];
      out[r * d + j] = xhat[r * d + j] * gamma[j] + beta[j];
    }
  }
  return make_result<T>(
      x.shape(), std::move(out), {x, gamma, beta}, "layer_norm",
      [rows, d, xhat = std::move(xhat), rstd = std::move(rstd)](Node<T>& self) {
        const auto& g = self.grad;
        const auto& gam = value_of(self, 1);
        T* gx = grad_of(self, 0);
        T* gg = grad_of(self, 1);
        T* gb = grad_of(self, 2);
        std::vector<T> gxhat(d);
        for (std::size_t r = 0; r < rows; ++r) {
          T mean_g{0}, mean_gx{0};
          for (std::size_t j = 0; j < d; ++j) {
            const std::size_t i = r * d + j;
            if (gg) gg[j] += g[i] * xhat[i];
            if (gb) gb[j] += g[i];
            gxhat[j] = g[i] * gam[j];
            mean_g += gxhat[j];
            mean_gx += gxhat[j] * xhat[i];
          }
          if (!gx) continue;
          mean_g /= static_cast<T>(d);
          mean_gx /= static_cast<T>(d);
          for (std::size_t j = 0; j < d; ++j) {
            const std::size_t i = r * d + j;
            gx[i] += rstd[r] * (gxhat[j] - mean_g - xhat[i] * mean_gx);
          }
        }
      });
}

template <typename T>
Tensor<T> l2_normalize_rows(const Tensor<T>& x) {
  const std::size_t d = last_dim(x.shape());
  const std::size_t rows = x.numel() / d;
  std::vector<T> out(x.numel()), norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    T sq{0};
    for (std::size_t j = 0; j < d; ++j) sq += x[r * d + j] * x[r * d + j];
    norms[r] = std::sqrt(sq);
    if (!(norms[r] > T{0}) || !std::isfinite(norms[r])) {
      throw NumericError("l2_normalize: degenerate input row " + std::to_string(r) + " (norm " +
                         std::to_string(static_cast<double>(norms[r])) + ")");
    }
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = x[r * d + j] / norms[r];
  }
  return make_result<T>(x.shape(), std::move(out), {x}, "l2_normalize",
                        [rows, d, norms = std::move(norms)](Node<T>& self) {
                          T* gx = grad_of(self, 0);
                          if (!gx) return;
                          for (std::size_t r = 0; r < rows; ++r) {
                            const T* y = self.value.data() + r * d;
                            const T* g = self.grad.data() + r * d;
                            T dot{0};
                            for (std::size_t j = 0; j < d; ++j) dot += g[j] * y[j];
                            for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += (g[j] - y[j] * dot) / norms[r];
                          }
                        });
}

template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, std::size_t heads) {
  require_rank(x.shape(), 3, "split_heads");
  const std::size_t B = x.dim(0), P = x.dim(1), D = x.dim(2);
  if (heads == 0 || D % heads != 0) {
    throw DimensionError("split_heads: width " + std::to_string(D) + " not divisible by " + std::to_string(heads));
  }
  const std::size_t dh = D / heads;
  std::vector<T> out(x.numel());
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t p = 0; p < P; ++p) {
      for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t e = 0; e < dh; ++e) {
          out[((b * heads + h) * P + p) * dh + e] = x[(b * P + p) * D + h * dh + e];
        }
      }
    }
  }
  return make_result<T>(Shape{B * heads, P, dh}, std::move(out), {x}, "split_heads",
                        [B, P, D, heads, dh](Node<T>& self) {
                          T* gx = grad_of(self, 0);
                          if (!gx) return;
                          for (std::size_t b = 0; b < B; ++b) {
                            for (std::size_t p = 0; p < P; ++p) {
                              for (std::size_t h = 0; h < heads; ++h) {
                                for (std::size_t e = 0; e < dh; ++e) {
                                  gx[(b * P + p) * D + h * dh + e] += self.grad[((b * heads + h) * P + p) * dh + e];
                                }
                              }
                            }
                          }
                        });
}

template <typename T>
Tensor<T> merge_heads(const Tensor<T>& x, std::size_t heads) {
  require_rank(x.shape(), 3, "merge_heads");
  if (heads == 0 || x.dim(0) % heads != 0) throw DimensionError("merge_heads: batch not divisible by heads");
  const std::size_t B = x.dim(0) / heads, P = x.dim(1), dh = x.dim(2), D = dh * heads;
  std::vector<T> out(x.numel());
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t p = 0; p < P; ++p) {
        for (std::size_t e = 0; e < dh; ++e) {
          out[(b * P + p) * D + h * dh + e] = x[((b * heads + h) * P + p) * dh + e];
        }
      }
    }
  }
  return make_result<T>(Shape{B, P, D}, std::move(out), {x}, "merge_heads", [B, P, D, heads, dh](Node<T>& self) {
    T* gx = grad_of(self, 0);
    if (!gx) return;
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t p = 0; p < P; ++p) {
          for (std::size_t e = 0; e < dh; ++e) {
            gx[((b * heads + h) * P + p) * dh + e] += self.grad[(b * P + p) * D + h * dh + e];
          }
        }
      }
    }
  });
}

namespace {

struct ConvGeometry {
  std::size_t channels, height, width, out_h, out_w, stride, padding;
};

// col[(c*9 + ky*3 + kx), oy*out_w + ox] = x[c, oy*stride + ky - pad, ox*stride + kx - pad]
template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* col) {
  const std::size_t spatial = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ky = 0; ky < 3; ++ky) {
      for (std::size_t kx = 0; kx < 3; ++kx) {
        T* row = col + ((c * 3 + ky) * 3 + kx) * spatial;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.padding);
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.padding);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(g.height) &&
                                ix < static_cast<long>(g.width);
            row[oy * g.out_w + ox] = inside ? x[(c * g.height + iy) * g.width + ix] : T{0};
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, T* x) {
  const std::size_t spatial = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ky = 0; ky < 3; ++ky) {
      for (std::size_t kx = 0; kx < 3; ++kx) {
        const T* row = col + ((c * 3 + ky) * 3 + kx) * spatial;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.padding);
          if (iy < 0 || iy >= static_cast<long>(g.height)) continue;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.padding);
            if (ix < 0 || ix >= static_cast<long>(g.width)) continue;
            x[(c * g.height + iy) * g.width + ix] += row[oy * g.out_w + ox];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, std::size_t stride, std::size_t padding) {
  const bool batched = input.rank() == 4;
  if (!batched && input.rank() != 3) throw DimensionError("conv2d: input must be [N,C,H,W] or [C,H,W]");
  require_rank(weight.shape(), 4, "conv2d weight");
  if (weight.dim(2) != 3 || weight.dim(3) != 3) throw DimensionError("conv2d: kernel must be 3x3");
  if (stride == 0) throw ContractError("conv2d: stride must be positive");
  const std::size_t off = batched ? 1 : 0;
  const std::size_t N = batched ? input.dim(0) : 1;
  ConvGeometry g{input.dim(off), input.dim(off + 1), input.dim(off + 2), 0, 0, stride, padding};
  if (weight.dim(1) != g.channels) {
    throw DimensionError("conv2d: weight " + shape_str(weight.shape()) + " vs input " + shape_str(input.shape()));
  }
  if (g.height + 2 * padding < 3 || g.width + 2 * padding < 3) {
    throw DimensionError("conv2d: output extent < 1 for input " + shape_str(input.shape()));
  }
  g.out_h = (g.height + 2 * padding - 3) / stride + 1;
  g.out_w = (g.width + 2 * padding - 3) / stride + 1;
  const std::size_t co = weight.dim(0), patch = g.channels * 9, spatial = g.out_h * g.out_w;
  const std::size_t in_size = g.channels * g.height * g.width;

  std::vector<T> out(N * co * spatial, T{0});
  std::vector<T> col(patch * spatial);
  for (std::size_t n = 0; n < N; ++n) {
    im2col(input.data().data() + n * in_size, g, col.data());
    gemm_nn(co, spatial, patch, weight.data().data(), col.data(), out.data() + n * co * spatial);
  }
  Shape shape = batched ? Shape{N, co, g.out_h, g.out_w} : Shape{co, g.out_h, g.out_w};
  return make_result<T>(std::move(shape), std::move(out), {input, weight}, "conv2d",
                        [g, N, co, patch, spatial, in_size](Node<T>& self) {
                          const T* xv = value_of(self, 0).data();
                          const T* wv = value_of(self, 1).data();
                          T* gx = grad_of(self, 0);
                          T* gw = grad_of(self, 1);
                          std::vector<T> col(patch * spatial);
                          for (std::size_t n = 0; n < N; ++n) {
                            const T* gout = self.grad.data() + n * co * spatial;
                            if (gw) {
                              im2col(xv + n * in_size, g, col.data());
                              gemm_nt(co, patch, spatial, gout, col.data(), gw);
                            }
                            if (gx) {
                              std::fill(col.begin(), col.end(), T{0});
                              gemm_tn(patch, spatial, co, wv, gout, col.data());
                              col2im_add(col.data(), g, gx + n * in_size);
                            }
                          }
                        });
}

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, BatchNormStats<T>& stats,
                     BnMode mode, T momentum, T eps) {
  const bool batched = x.rank() == 4;
  if (!batched && x.rank() != 3) throw DimensionError("batch_norm: input must be [N,C,H,W] or [C,H,W]");
  const std::size_t N = batched ? x.dim(0) : 1;
  const std::size_t C = x.dim(batched ? 1 : 0);
  const std::size_t S = x.numel() / (N * C);
  if (gamma.numel() != C || beta.numel() != C || stats.running_mean.size() != C || stats.running_var.size() != C) {
    throw DimensionError("batch_norm: " + std::to_string(C) + " channels vs gamma " + shape_str(gamma.shape()));
  }
  const std::size_t count = N * S;
  std::vector<T> out(x.numel()), xhat(x.numel()), rstd(C);
  for (std::size_t c = 0; c < C; ++c) {
    T mu, var;
    if (mode == BnMode::kTrain) {
      mu = T{0};
      for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t s = 0; s < S; ++s) mu += x[(n * C + c) * S + s];
      }
      mu /= static_cast<T>(count);
      var = T{0};
      for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t s = 0; s < S; ++s) {
          const T d = x[(n * C + c) * S + s] - mu;
          var += d * d;
        }
      }
      var /= static_cast<T>(count);
      const T unbiased = count > 1 ? var * static_cast<T>(count) / static_cast<T>(count - 1) : var;
      stats.running_mean[c] = (T(1) - momentum) * stats.running_mean[c] + momentum * mu;
      stats.running_var[c] = (T(1) - momentum) * stats.running_var[c] + momentum * unbiased;
    } else {
      mu = stats.running_mean[c];
      var = stats.running_var[c];
    }
    rstd[c] = T(1) / std::sqrt(var + eps);
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t s = 0; s < S; ++s) {
        const std::size_t i = (n * C + c) * S + s;
        xhat[i] = (x[i] - mu) * rstd[c];
        out[i] = xhat[i] * gamma[c] + beta[c];
      }
    }
  }
  const bool train = mode == BnMode::kTrain;
  return make_result<T>(
      x.shape(), std::move(out), {x, gamma, beta}, "batch_norm",
      [N, C, S, count, train, xhat = std::move(xhat), rstd = std::move(rstd)](Node<T>& self) {
        const auto& g = self.grad;
        const auto& gam = value_of(self, 1);
        T* gx = grad_of(self, 0);
        T* gg = grad_of(self, 1);
        T* gb = grad_of(self, 2);
        for (std::size_t c = 0; c < C; ++c) {
          T sum_g{0}, sum_gx{0};
          for (std::size_t n = 0; n < N; ++n) {
            for (std::size_t s = 0; s < S; ++s) {
              const std::size_t i = (n * C + c) * S + s;
              sum_g += g[i];
              sum_gx += g[i] * xhat[i];
            }
          }
          if (gg) gg[c] += sum_gx;
          if (gb) gb[c] += sum_g;
          if (!gx) continue;
          const T k = gam[c] * rstd[c];
          const T inv = T(1) / static_cast<T>(count);
          for (std::size_t n = 0; n < N; ++n) {
            for (std::size_t s = 0; s < S; ++s) {
              const std::size_t i = (n * C + c) * S + s;
              gx[i] += train ? k * (g[i] - sum_g * inv - xhat[i] * sum_gx * inv) : k * g[i];
            }
          }
        }
      });
}

template <typename T>
Tensor<T> feature_map_to_tokens(const Tensor<T>& x) {
  require_rank(x.shape(), 4, "feature_map_to_tokens");
  const std::size_t N = x.dim(0), C = x.dim(1), P = x.dim(2) * x.dim(3);
  std::vector<T> out(x.numel());
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t p = 0; p < P; ++p) out[(n * P + p) * C + c] = x[(n * C + c) * P + p];
    }
  }
  return make_result<T>(Shape{N, P, C}, std::move(out), {x}, "to_tokens", [N, C, P](Node<T>& self) {
    T* gx = grad_of(self, 0);
    if (!gx) return;
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t p = 0; p < P; ++p) gx[(n * C + c) * P + p] += self.grad[(n * P + p) * C + c];
      }
    }
  });
}

template <typename T>
Tensor<T> mean_tokens(const Tensor<T>& x) {
  require_rank(x.shape(), 3, "mean_tokens");
  const std::size_t N = x.dim(0), P = x.dim(1), C = x.dim(2);
  std::vector<T> out(N * C, T{0});
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t p = 0; p < P; ++p) {
      for (std::size_t c = 0; c < C; ++c) out[n * C + c] += x[(n * P + p) * C + c];
    }
    for (std::size_t c = 0; c < C; ++c) out[n * C + c] /= static_cast<T>(P);
  }
  return make_result<T>(Shape{N, C}, std::move(out), {x}, "mean_tokens", [N, P, C](Node<T>& self) {
    T* gx = grad_of(self, 0);
    if (!gx) return;
    const T inv = T(1) / static_cast<T>(P);
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t p = 0; p < P; ++p) {
        for (std::size_t c = 0; c < C; ++c) gx[(n * P + p) * C + c] += self.grad[n * C + c] * inv;
      }
    }
  });
}

template <typename T>
Tensor<T> token_avg_pool(const Tensor<T>& x, std::size_t grid_h, std::size_t grid_w, std::size_t out_h,
                         std::size_t out_w) {
  require_rank(x.shape(), 3, "token_avg_pool");
  const std::size_t N = x.dim(0), P = x.dim(1), C = x.dim(2);
  if (grid_h * grid_w != P) {
    throw DimensionError("token_avg_pool: grid " + std::to_string(grid_h) + "x" + std::to_string(grid_w) +
                         " does not hold " + std::to_string(P) + " tokens");
  }
  if (out_h == 0 || out_w == 0 || grid_h % out_h != 0 || grid_w % out_w != 0) {
    throw DimensionError("token_avg_pool: grid " + std::to_string(grid_h) + "x" + std::to_string(grid_w) +
                         " not divisible into " + std::to_string(out_h) + "x" + std::to_string(out_w));
  }
  const std::size_t wh = grid_h / out_h, ww = grid_w / out_w, Q = out_h * out_w;
  const T inv = T(1) / static_cast<T>(wh * ww);
  // Pooled cell of each source token.
  std::vector<std::size_t> cell(P);
  for (std::size_t y = 0; y < grid_h; ++y) {
    for (std::size_t xx = 0; xx < grid_w; ++xx) cell[y * grid_w + xx] = (y / wh) * out_w + xx / ww;
  }
  std::vector<T> out(N * Q * C, T{0});
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t p = 0; p < P; ++p) {
      for (std::size_t c = 0; c < C; ++c) out[(n * Q + cell[p]) * C + c] += x[(n * P + p) * C + c] * inv;
    }
  }
  return make_result<T>(Shape{N, Q, C}, std::move(out), {x}, "token_avg_pool",
                        [N, P, Q, C, inv, cell = std::move(cell)](Node<T>& self) {
                          T* gx = grad_of(self, 0);
                          if (!gx) return;
                          for (std::size_t n = 0; n < N; ++n) {
                            for (std::size_t p = 0; p < P; ++p) {
                              for (std::size_t c = 0; c < C; ++c) {
                                gx[(n * P + p) * C + c] += self.grad[(n * Q + cell[p]) * C + c] * inv;
                              }
                            }
                          }
                        });
}

template <typename T>
Tensor<T> pairwise_l2(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) {
    throw DimensionError("pairwise_l2: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const std::size_t N = a.dim(0), M = b.dim(0), d = a.dim(1);
  // Squared distances below this floor are clamped; the clamped entry has zero gradient.
  constexpr T kFloor = T(1e-24);
  std::vector<T> out(N * M);
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t j = 0; j < M; ++j) {
      T sq{0};
      for (std::size_t k = 0; k < d; ++k) {
        const T diff = a[i * d + k] - b[j * d + k];
        sq += diff * diff;
      }
      out[i * M + j] = std::sqrt(std::max(sq, kFloor));
    }
  }
  return make_result<T>(Shape{N, M}, std::move(out), {a, b}, "pairwise_l2", [N, M, d](Node<T>& self) {
    const auto& av = value_of(self, 0);
    const auto& bv = value_of(self, 1);
    T* ga = grad_of(self, 0);
    T* gb = grad_of(self, 1);
    for (std::size_t i = 0; i < N; ++i) {
      for (std::size_t j = 0; j < M; ++j) {
        const T dist = self.value[i * M + j];
        const T g = self.grad[i * M + j];
        if (g == T{0} || dist * dist <= kFloor) continue;
        const T coef = g / dist;
        for (std::size_t k = 0; k < d; ++k) {
          const T diff = (av[i * d + k] - bv[j * d + k]) * coef;
          if (ga) ga[i * d + k] += diff;
          if (gb) gb[j * d + k] -= diff;
        }
      }
    }
  });
}

#define SAIG_INSTANTIATE_OPS(T)                                                                               \
  template Tensor<T> make_result<T>(Shape, std::vector<T>, std::vector<Tensor<T>>, const char*,              \
                                    std::function<void(Node<T>&)>);                                          \
  template void check_finite<T>(const Tensor<T>&, const std::string&);                                       \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                                             \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                                             \
  template Tensor<T> add_bias<T>(const Tensor<T>&, const Tensor<T>&);                                        \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                                                          \
  template Tensor<T> relu<T>(const Tensor<T>&);                                                              \
  template Tensor<T> gelu<T>(const Tensor<T>&);                                                              \
  template Tensor<T> sum<T>(const Tensor<T>&);                                                               \
  template Tensor<T> mean<T>(const Tensor<T>&);                                                              \
  template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                                                    \
  template Tensor<T> transpose_last2<T>(const Tensor<T>&);                                                   \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                                          \
  template Tensor<T> matmul_nt<T>(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> bmm<T>(const Tensor<T>&, const Tensor<T>&);                                             \
  template Tensor<T> bmm_nt<T>(const Tensor<T>&, const Tensor<T>&);                                          \
  template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> softmax_row<T>(const Tensor<T>&);                                                       \
  template Tensor<T> layer_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);                 \
  template Tensor<T> l2_normalize_rows<T>(const Tensor<T>&);                                                 \
  template Tensor<T> split_heads<T>(const Tensor<T>&, std::size_t);                                          \
  template Tensor<T> merge_heads<T>(const Tensor<T>&, std::size_t);                                          \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, std::size_t, std::size_t);                \
  template Tensor<T> batch_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, BatchNormStats<T>&, \
                                   BnMode, T, T);                                                            \
  template Tensor<T> feature_map_to_tokens<T>(const Tensor<T>&);                                             \
  template Tensor<T> mean_tokens<T>(const Tensor<T>&);                                                       \
  template Tensor<T> token_avg_pool<T>(const Tensor<T>&, std::size_t, std::size_t, std::size_t, std::size_t); \
  template Tensor<T> pairwise_l2<T>(const Tensor<T>&, const Tensor<T>&);

SAIG_INSTANTIATE_OPS(float)
SAIG_INSTANTIATE_OPS(double)

}  // namespace saig::nn
