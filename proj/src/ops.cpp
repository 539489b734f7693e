#include "fast/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace fast::ops {

namespace {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

std::string shape_str(const Tensor& t) { return std::to_string(t.rows()) + "x" + std::to_string(t.cols()); }

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
  }
}

Tensor make(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor::from(rows, cols, std::move(values));
}

// Attaches a backward closure when any parent is on the graph.
template <class Fn>
Tensor attach(Tensor out, std::vector<NodePtr> parents, Fn&& fn) {
  if (!grad_enabled()) return out;
  bool any = std::any_of(parents.begin(), parents.end(), [](const NodePtr& p) { return p->requires_grad; });
  if (!any) return out;
  auto* n = out.node();
  n->requires_grad = true;
  n->parents = std::move(parents);
  n->backward_fn = std::forward<Fn>(fn);
  return out;
}

// Returns the parent's gradient buffer, or nullptr if it takes none.
double* grad_of(Node& self, std::size_t i) {
  auto& p = self.parents[i];
  if (!p->requires_grad) return nullptr;
  p->ensure_grad();
  return p->grad.data();
}

// C[m x n] += A[m x k] * B[k x n]
void gemm_nn(const double* A, const double* B, double* C, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* c = C + i * n;
    const double* a = A + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[p];
      if (av == 0.0) continue;
      const double* b = B + p * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

// C[m x n] += A[m x k] * B[n x k]^T
void gemm_nt(const double* A, const double* B, double* C, std::size_t m, std::size_t k, std::size_t n) {
  // transpose once so the inner loop is a contiguous axpy
  std::vector<double> bt(k * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = B[j * k + p];
  gemm_nn(A, bt.data(), C, m, k, n);
}

// C[m x n] += A[k x m]^T * B[k x n]
void gemm_tn(const double* A, const double* B, double* C, std::size_t k, std::size_t m, std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* a = A + p * m;
    const double* b = B + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = a[i];
      if (av == 0.0) continue;
      double* c = C + i * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

template <class F, class D>
Tensor unary(const Tensor& a, F f, D df) {
  std::vector<double> out(a.size());
  auto in = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  return attach(make(a.rows(), a.cols(), std::move(out)), {a.shared()}, [df](Node& self) {
    double* g = grad_of(self, 0);
    if (!g) return;
    const auto& x = self.parents[0]->data;
    for (std::size_t i = 0; i < x.size(); ++i) g[i] += self.grad[i] * df(x[i], self.data[i]);
  });
}

constexpr double kKlEps = 1e-6;

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) throw DimensionError("matmul: inner dimensions " + shape_str(a) + " * " + shape_str(b));
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> out(m * n, 0.0);
  gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  return attach(make(m, n, std::move(out)), {a.shared(), b.shared()}, [m, k, n](Node& self) {
    const auto& A = self.parents[0]->data;
    const auto& B = self.parents[1]->data;
    if (double* ga = grad_of(self, 0)) gemm_nt(self.grad.data(), B.data(), ga, m, n, k);
    if (double* gb = grad_of(self, 1)) gemm_tn(A.data(), self.grad.data(), gb, m, k, n);
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) throw DimensionError("matmul_nt: inner dimensions " + shape_str(a) + " * " + shape_str(b) + "^T");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  std::vector<double> out(m * n, 0.0);
  gemm_nt(a.data().data(), b.data().data(), out.data(), m, k, n);
  return attach(make(m, n, std::move(out)), {a.shared(), b.shared()}, [m, k, n](Node& self) {
    const auto& A = self.parents[0]->data;
    const auto& B = self.parents[1]->data;
    if (double* ga = grad_of(self, 0)) gemm_nn(self.grad.data(), B.data(), ga, m, n, k);
    if (double* gb = grad_of(self, 1)) gemm_tn(self.grad.data(), A.data(), gb, m, n, k);
  });
}

Tensor transpose(const Tensor& a) {
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<double> out(r * c);
  auto in = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = in[i * c + j];
  return attach(make(c, r, std::move(out)), {a.shared()}, [r, c](Node& self) {
    double* g = grad_of(self, 0);
    if (!g) return;
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return attach(make(a.rows(), a.cols(), std::move(out)), {a.shared(), b.shared()}, [](Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (double* g = grad_of(self, p))
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw DimensionError("add_row: row " + shape_str(row) + " does not broadcast over " + shape_str(a));
  }
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<double> out(a.size());
  auto x = a.data(), b = row.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x[i * c + j] + b[j];
  return attach(make(r, c, std::move(out)), {a.shared(), row.shared()}, [r, c](Node& self) {
    if (double* g = grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    if (double* g = grad_of(self, 1))
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j];
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return attach(make(a.rows(), a.cols(), std::move(out)), {a.shared(), b.shared()}, [](Node& self) {
    if (double* g = grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    if (double* g = grad_of(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return attach(make(a.rows(), a.cols(), std::move(out)), {a.shared(), b.shared()}, [](Node& self) {
    const auto& x = self.parents[0]->data;
    const auto& y = self.parents[1]->data;
    if (double* g = grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * y[i];
    if (double* g = grad_of(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * x[i];
  });
}

Tensor scale(const Tensor& a, double s) {
  return unary(a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& a, const Tensor& s) {
  if (s.size() != 1) throw DimensionError("mul_scalar: multiplier must be 1x1, got " + shape_str(s));
  const double v = s.item();
  std::vector<double> out(a.size());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * v;
  return attach(make(a.rows(), a.cols(), std::move(out)), {a.shared(), s.shared()}, [](Node& self) {
    const auto& x = self.parents[0]->data;
    const double v = self.parents[1]->data[0];
    if (double* g = grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * v;
    if (double* g = grad_of(self, 1)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * x[i];
      g[0] += acc;
    }
  });
}

Tensor reciprocal(const Tensor& a) {
  return unary(a, [](double x) { return 1.0 / x; }, [](double x, double) { return -1.0 / (x * x); });
}

Tensor abs(const Tensor& a) {
  return unary(a, [](double x) { return std::fabs(x); },
               [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  return attach(make(1, 1, {acc}), {a.shared()}, [](Node& self) {
    double* g = grad_of(self, 0);
    if (!g) return;
    const std::size_t n = self.parents[0]->data.size();
    for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw ContractError("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor gelu(const Tensor& a) {
  return unary(
      a, [](double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); },
      [](double x, double) {
        const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
        const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
        return cdf + x * pdf;
      });
}

Tensor relu(const Tensor& a) {
  return unary(a, [](double x) { return x > 0 ? x : 0.0; }, [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Tensor softmax_rows(const Tensor& x) {
  const std::size_t r = x.rows(), c = x.cols();
  std::vector<double> out(x.size());
  auto in = x.data();
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = in.data() + i * c;
    double* o = out.data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += (o[j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < c; ++j) o[j] /= z;
  }
  return attach(make(r, c, std::move(out)), {x.shared()}, [r, c](Node& self) {
    double* g = grad_of(self, 0);
    if (!g) return;
    for (std::size_t i = 0; i < r; ++i) {
      const double* y = self.data.data() + i * c;
      const double* dy = self.grad.data() + i * c;
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += dy[j] * y[j];
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += y[j] * (dy[j] - dot);
    }
  });
}

Tensor log_softmax_rows(const Tensor& x) {
  const std::size_t r = x.rows(), c = x.cols();
  std::vector<double> out(x.size());
  auto in = x.data();
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = in.data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    const double lz = mx + std::log(z);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = row[j] - lz;
  }
  return attach(make(r, c, std::move(out)), {x.shared()}, [r, c](Node& self) {
    double* g = grad_of(self, 0);
    if (!g) return;
    for (std::size_t i = 0; i < r; ++i) {
      const double* ly = self.data.data() + i * c;
      const double* dy = self.grad.data() + i * c;
      double total = 0.0;
      for (std::size_t j = 0; j < c; ++j) total += dy[j];
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += dy[j] - std::exp(ly[j]) * total;
    }
  });
}

Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t r = x.rows(), c = x.cols();
  if (gain.size() != c || bias.size() != c) throw DimensionError("layer_norm_rows: gain/bias width mismatch");
  std::vector<double> out(x.size());
  std::vector<double> xhat(x.size());
  std::vector<double> inv_std(r);
  auto in = x.data();
  auto gv = gain.data(), bv = bias.data();
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = in.data() + i * c;
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += row[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(c);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      const double h = (row[j] - mu) * inv_std[i];
      xhat[i * c + j] = h;
      out[i * c + j] = h * gv[j] + bv[j];
    }
  }
  return attach(make(r, c, std::move(out)), {x.shared(), gain.shared(), bias.shared()},
                [r, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                  const auto& gv = self.parents[1]->data;
                  double* gx = grad_of(self, 0);
                  double* gg = grad_of(self, 1);
                  double* gb = grad_of(self, 2);
                  const double inv_c = 1.0 / static_cast<double>(c);
                  for (std::size_t i = 0; i < r; ++i) {
                    const double* dy = self.grad.data() + i * c;
                    const double* h = xhat.data() + i * c;
                    if (gg || gb) {
                      for (std::size_t j = 0; j < c; ++j) {
                        if (gg) gg[j] += dy[j] * h[j];
                        if (gb) gb[j] += dy[j];
                      }
                    }
                    if (gx) {
                      double m1 = 0.0, m2 = 0.0;
                      for (std::size_t j = 0; j < c; ++j) {
                        const double dh = dy[j] * gv[j];
                        m1 += dh;
                        m2 += dh * h[j];
                      }
                      m1 *= inv_c;
                      m2 *= inv_c;
                      for (std::size_t j = 0; j < c; ++j) {
                        const double dh = dy[j] * gv[j];
                        gx[i * c + j] += inv_std[i] * (dh - m1 - h[j] * m2);
                      }
                    }
                  }
                });
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  if (begin > end || end > a.rows()) {
    throw IndexError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(end) + ") of " + shape_str(a));
  }
  const std::size_t c = a.cols();
  auto in = a.data();
  std::vector<double> out(in.begin() + static_cast<std::ptrdiff_t>(begin * c),
                          in.begin() + static_cast<std::ptrdiff_t>(end * c));
  return attach(make(end - begin, c, std::move(out)), {a.shared()}, [begin, c](Node& self) {
    double* g = grad_of(self, 0);
    if (!g) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * c + i] += self.grad[i];
  });
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  if (begin > end || end > a.cols()) {
    throw IndexError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(end) + ") of " + shape_str(a));
  }
  const std::size_t r = a.rows(), c = a.cols(), w = end - begin;
  std::vector<double> out(r * w);
  auto in = a.data();
  for (std::size_t i = 0; i < r; ++i)
    std::copy_n(in.data() + i * c + begin, w, out.data() + i * w);
  return attach(make(r, w, std::move(out)), {a.shared()}, [r, c, w, begin](Node& self) {
    double* g = grad_of(self, 0);
    if (!g) return;
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < w; ++j) g[i * c + begin + j] += self.grad[i * w + j];
  });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  const std::size_t c = parts[0].cols();
  std::size_t r = 0;
  for (const auto& p : parts) {
    if (p.cols() != c) throw DimensionError("concat_rows: column mismatch " + shape_str(p));
    r += p.rows();
  }
  std::vector<double> out;
  out.reserve(r * c);
  std::vector<NodePtr> parents;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    offsets.push_back(out.size());
    auto d = p.data();
    out.insert(out.end(), d.begin(), d.end());
    parents.push_back(p.shared());
  }
  return attach(make(r, c, std::move(out)), std::move(parents), [offsets = std::move(offsets)](Node& self) {
    for (std::size_t p = 0; p < self.parents.size(); ++p) {
      double* g = grad_of(self, p);
      if (!g) continue;
      const std::size_t n = self.parents[p]->data.size();
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[offsets[p] + i];
    }
  });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  const std::size_t r = parts[0].rows();
  std::size_t c = 0;
  std::vector<std::size_t> offsets;
  std::vector<NodePtr> parents;
  for (const auto& p : parts) {
    if (p.rows() != r) throw DimensionError("concat_cols: row mismatch " + shape_str(p));
    offsets.push_back(c);
    c += p.cols();
    parents.push_back(p.shared());
  }
  std::vector<double> out(r * c);
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const std::size_t w = parts[p].cols();
    auto d = parts[p].data();
    for (std::size_t i = 0; i < r; ++i) std::copy_n(d.data() + i * w, w, out.data() + i * c + offsets[p]);
  }
  return attach(make(r, c, std::move(out)), std::move(parents), [r, c, offsets = std::move(offsets)](Node& self) {
    for (std::size_t p = 0; p < self.parents.size(); ++p) {
      double* g = grad_of(self, p);
      if (!g) continue;
      const std::size_t w = self.parents[p]->cols;
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < w; ++j) g[i * w + j] += self.grad[i * c + offsets[p] + j];
    }
  });
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> ids) {
  const std::size_t c = table.cols();
  std::vector<double> out(ids.size() * c);
  auto in = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= table.rows()) {
      throw IndexError("gather_rows: id " + std::to_string(ids[i]) + " >= " + std::to_string(table.rows()));
    }
    std::copy_n(in.data() + ids[i] * c, c, out.data() + i * c);
  }
  std::vector<std::size_t> idx(ids.begin(), ids.end());
  return attach(make(ids.size(), c, std::move(out)), {table.shared()}, [c, idx = std::move(idx)](Node& self) {
    double* g = grad_of(self, 0);
    if (!g) return;
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < c; ++j) g[idx[i] * c + j] += self.grad[i * c + j];
  });
}

Tensor reshape(const Tensor& a, std::size_t rows, std::size_t cols) {
  if (rows * cols != a.size()) {
    throw DimensionError("reshape: " + shape_str(a) + " to " + std::to_string(rows) + "x" + std::to_string(cols));
  }
  auto d = a.data();
  return attach(make(rows, cols, std::vector<double>(d.begin(), d.end())), {a.shared()}, [](Node& self) {
    double* g = grad_of(self, 0);
    if (!g) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor cosine_rows(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "cosine_rows");
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<double> out(r, 0.0);
  std::vector<double> na(r), nb(r);
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < r; ++i) {
    double dot = 0.0, sa = 0.0, sb = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double u = x[i * c + j], v = y[i * c + j];
      dot += u * v;
      sa += u * u;
      sb += v * v;
    }
    na[i] = std::sqrt(sa);
    nb[i] = std::sqrt(sb);
    if (na[i] > 0.0 && nb[i] > 0.0) out[i] = std::clamp(dot / (na[i] * nb[i]), -1.0, 1.0);
  }
  return attach(make(r, 1, std::move(out)), {a.shared(), b.shared()},
                [r, c, na = std::move(na), nb = std::move(nb)](Node& self) {
                  const auto& x = self.parents[0]->data;
                  const auto& y = self.parents[1]->data;
                  double* ga = grad_of(self, 0);
                  double* gb = grad_of(self, 1);
                  for (std::size_t i = 0; i < r; ++i) {
                    if (na[i] == 0.0 || nb[i] == 0.0) continue;
                    const double g = self.grad[i];
                    const double cs = self.data[i];
                    const double inv = 1.0 / (na[i] * nb[i]);
                    for (std::size_t j = 0; j < c; ++j) {
                      const double u = x[i * c + j], v = y[i * c + j];
                      if (ga) ga[i * c + j] += g * (v * inv - cs * u / (na[i] * na[i]));
                      if (gb) gb[i * c + j] += g * (u * inv - cs * v / (nb[i] * nb[i]));
                    }
                  }
                });
}

double bernoulli_kl(double p, double q) {
  p = std::clamp(p, kKlEps, 1.0 - kKlEps);
  q = std::clamp(q, kKlEps, 1.0 - kKlEps);
  return p * std::log(p / q) + (1.0 - p) * std::log((1.0 - p) / (1.0 - q));
}

Tensor bernoulli_kl(const Tensor& p, const Tensor& q) {
  require_same_shape(p, q, "bernoulli_kl");
  std::vector<double> out(p.size());
  auto pv = p.data(), qv = q.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = bernoulli_kl(pv[i], qv[i]);
  return attach(make(p.rows(), p.cols(), std::move(out)), {p.shared(), q.shared()}, [](Node& self) {
    const auto& pv = self.parents[0]->data;
    const auto& qv = self.parents[1]->data;
    double* gp = grad_of(self, 0);
    double* gq = grad_of(self, 1);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const bool p_free = pv[i] > kKlEps && pv[i] < 1.0 - kKlEps;
      const bool q_free = qv[i] > kKlEps && qv[i] < 1.0 - kKlEps;
      const double pc = std::clamp(pv[i], kKlEps, 1.0 - kKlEps);
      const double qc = std::clamp(qv[i], kKlEps, 1.0 - kKlEps);
      if (gp && p_free) gp[i] += self.grad[i] * (std::log(pc / qc) - std::log((1.0 - pc) / (1.0 - qc)));
      if (gq && q_free) gq[i] += self.grad[i] * (-pc / qc + (1.0 - pc) / (1.0 - qc));
    }
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets, double smoothing) {
  const std::size_t n = logits.rows(), v = logits.cols();
  if (targets.size() != n) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " + std::to_string(n) + " rows");
  }
  if (n == 0) throw ContractError("cross_entropy: empty batch");
  for (auto t : targets) {
    if (t >= v) throw IndexError("cross_entropy: target " + std::to_string(t) + " >= vocab " + std::to_string(v));
  }
  auto in = logits.data();
  std::vector<double> probs(n * v);
  double loss = 0.0;
  const double off = smoothing / static_cast<double>(v);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = in.data() + i * v;
    const double mx = *std::max_element(row, row + v);
    double z = 0.0;
    for (std::size_t j = 0; j < v; ++j) z += std::exp(row[j] - mx);
    const double lz = mx + std::log(z);
    double row_loss = 0.0;
    for (std::size_t j = 0; j < v; ++j) {
      const double lp = row[j] - lz;
      probs[i * v + j] = std::exp(lp);
      const double q = (j == targets[i] ? 1.0 - smoothing : 0.0) + off;
      if (q != 0.0) row_loss -= q * lp;
    }
    loss += row_loss;
  }
  loss /= static_cast<double>(n);
  std::vector<std::size_t> tg(targets.begin(), targets.end());
  return attach(make(1, 1, {loss}), {logits.shared()},
                [n, v, smoothing, off, probs = std::move(probs), tg = std::move(tg)](Node& self) {
                  double* g = grad_of(self, 0);
                  if (!g) return;
                  const double s = self.grad[0] / static_cast<double>(n);
                  for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < v; ++j) {
                      const double q = (j == tg[i] ? 1.0 - smoothing : 0.0) + off;
                      g[i * v + j] += s * (probs[i * v + j] - q);
                    }
                });
}

Tensor mse(const Tensor& a, const Tensor& b) {
  auto d = sub(a, b);
  return mean(mul(d, d));
}

Tensor cif_weights(const Tensor& alpha, double beta, std::size_t units) {
  if (alpha.rows() != 1 && alpha.cols() != 1) throw DimensionError("cif_weights: alpha must be a vector, got " + shape_str(alpha));
  if (!(beta > 0.0)) throw ContractError("cif_weights: beta must be positive");
  const std::size_t t = alpha.size();
  auto av = alpha.data();
  std::vector<double> cum(t + 1, 0.0);
  for (std::size_t i = 0; i < t; ++i) cum[i + 1] = cum[i] + av[i];
  std::vector<double> out(units * t, 0.0);
  for (std::size_t j = 0; j < units; ++j) {
    const double lo = beta * static_cast<double>(j);
    const double hi = beta * static_cast<double>(j + 1);
    for (std::size_t i = 0; i < t; ++i) {
      const double w = std::min(cum[i + 1], hi) - std::max(cum[i], lo);
      if (w > 0.0) out[j * t + i] = w;
    }
  }
  return attach(make(units, t, std::move(out)), {alpha.shared()}, [units, t, beta, cum = std::move(cum)](Node& self) {
    double* g = grad_of(self, 0);
    if (!g) return;
    std::vector<double> dcum(t + 1, 0.0);
    for (std::size_t j = 0; j < units; ++j) {
      const double lo = beta * static_cast<double>(j);
      const double hi = beta * static_cast<double>(j + 1);
      for (std::size_t i = 0; i < t; ++i) {
        if (self.data[j * t + i] <= 0.0) continue;
        const double gw = self.grad[j * t + i];
        if (cum[i + 1] < hi) dcum[i + 1] += gw;
        if (cum[i] > lo) dcum[i] -= gw;
      }
    }
    // cum[k] depends on alpha[0..k-1]
    double suffix = 0.0;
    for (std::size_t k = t; k >= 1; --k) {
      suffix += dcum[k];
      g[k - 1] += suffix;
    }
  });
}

}  // namespace fast::ops
