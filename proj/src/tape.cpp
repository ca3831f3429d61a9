#include "deltamem/tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "deltamem/errors.hpp"
#include "deltamem/linalg.hpp"

namespace deltamem {

namespace {

void add_into(Matrix& dst, const Matrix& src) {
  auto d = dst.data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

std::size_t prefix(Mask mask, std::size_t r, std::size_t cols) {
  switch (mask) {
    case Mask::None:
      return cols;
    case Mask::CausalInclusive:
      return std::min(r + 1, cols);
    case Mask::CausalStrict:
      return std::min(r, cols);
  }
  return cols;
}

}  // namespace

Var Tape::push(Matrix value, std::function<void(Tape&, const Matrix&)> back) {
  nodes_.push_back(Node{std::move(value), Matrix(), std::move(back)});
  return Var{nodes_.size() - 1};
}

Matrix& Tape::acc(Var v) {
  Node& n = nodes_[v.id];
  if (n.grad.rows() != n.value.rows() || n.grad.cols() != n.value.cols()) {
    n.grad = Matrix(n.value.rows(), n.value.cols());
  }
  return n.grad;
}

const Matrix& Tape::grad(Var v) { return acc(v); }

Var Tape::leaf(Matrix value) { return push(std::move(value)); }

Var Tape::matmul(Var a, Var b) {
  return push(deltamem::matmul(value(a), value(b)), [a, b](Tape& t, const Matrix& g) {
    add_into(t.acc(a), omp::matmul_nt(g, t.value(b)));
    add_into(t.acc(b), omp::matmul_tn(t.value(a), g));
  });
}

Var Tape::matmul_nt(Var a, Var b) {
  return push(deltamem::matmul_nt(value(a), value(b)), [a, b](Tape& t, const Matrix& g) {
    add_into(t.acc(a), omp::matmul(g, t.value(b)));
    add_into(t.acc(b), omp::matmul_tn(g, t.value(a)));
  });
}

Var Tape::masked_scores(Var a, Var b, double scale, Mask mask) {
  const Matrix& av = value(a);
  const Matrix& bv = value(b);
  if (av.cols() != bv.cols()) throw DimensionError("Tape::masked_scores: inner dimension mismatch");
  const std::size_t n = av.rows(), m = bv.rows(), k = av.cols();
  Matrix y(n, m);
  for (std::size_t r = 0; r < n; ++r) {
    const double* ar = av.row(r).data();
    double* yr = y.row(r).data();
    const std::size_t lim = prefix(mask, r, m);
    for (std::size_t c = 0; c < lim; ++c) {
      const double* bc = bv.row(c).data();
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += ar[p] * bc[p];
      yr[c] = scale * acc;
    }
  }
  return push(std::move(y), [a, b, scale, mask](Tape& t, const Matrix& g) {
    const Matrix& av = t.value(a);
    const Matrix& bv = t.value(b);
    Matrix& ga = t.acc(a);
    Matrix& gb = t.acc(b);
    const std::size_t k = av.cols();
    for (std::size_t r = 0; r < g.rows(); ++r) {
      const double* ar = av.row(r).data();
      double* gar = ga.row(r).data();
      const std::size_t lim = prefix(mask, r, g.cols());
      for (std::size_t c = 0; c < lim; ++c) {
        const double w = scale * g(r, c);
        if (w == 0.0) continue;
        const double* bc = bv.row(c).data();
        double* gbc = gb.row(c).data();
        for (std::size_t p = 0; p < k; ++p) {
          gar[p] += w * bc[p];
          gbc[p] += w * ar[p];
        }
      }
    }
  });
}

Var Tape::masked_matmul(Var p, Var u, Mask mask) {
  const Matrix& pv = value(p);
  const Matrix& uv = value(u);
  if (pv.cols() != uv.rows()) throw DimensionError("Tape::masked_matmul: inner dimension mismatch");
  const std::size_t n = pv.rows(), m = uv.cols();
  Matrix y(n, m);
  for (std::size_t r = 0; r < n; ++r) {
    double* yr = y.row(r).data();
    const std::size_t lim = prefix(mask, r, pv.cols());
    for (std::size_t c = 0; c < lim; ++c) {
      const double w = pv(r, c);
      if (w == 0.0) continue;
      const double* uc = uv.row(c).data();
      for (std::size_t j = 0; j < m; ++j) yr[j] += w * uc[j];
    }
  }
  return push(std::move(y), [p, u, mask](Tape& t, const Matrix& g) {
    const Matrix& pv = t.value(p);
    const Matrix& uv = t.value(u);
    Matrix& gp = t.acc(p);
    Matrix& gu = t.acc(u);
    const std::size_t m = uv.cols();
    for (std::size_t r = 0; r < g.rows(); ++r) {
      const double* gr = g.row(r).data();
      const std::size_t lim = prefix(mask, r, pv.cols());
      for (std::size_t c = 0; c < lim; ++c) {
        const double* uc = uv.row(c).data();
        double* guc = gu.row(c).data();
        const double w = pv(r, c);
        double d = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
          d += gr[j] * uc[j];
          guc[j] += w * gr[j];
        }
        gp(r, c) += d;
      }
    }
  });
}

Var Tape::add(Var a, Var b) {
  return push(deltamem::add(value(a), value(b)), [a, b](Tape& t, const Matrix& g) {
    add_into(t.acc(a), g);
    add_into(t.acc(b), g);
  });
}

Var Tape::sub(Var a, Var b) {
  return push(deltamem::sub(value(a), value(b)), [a, b](Tape& t, const Matrix& g) {
    add_into(t.acc(a), g);
    add_into(t.acc(b), deltamem::scale(g, -1.0));
  });
}

Var Tape::hadamard(Var a, Var b) {
  return push(deltamem::hadamard(value(a), value(b)), [a, b](Tape& t, const Matrix& g) {
    add_into(t.acc(a), deltamem::hadamard(g, t.value(b)));
    add_into(t.acc(b), deltamem::hadamard(g, t.value(a)));
  });
}

Var Tape::scale(Var a, double s) {
  return push(deltamem::scale(value(a), s),
              [a, s](Tape& t, const Matrix& g) { add_into(t.acc(a), deltamem::scale(g, s)); });
}

Var Tape::add_row_bias(Var x, Var bias) {
  const Matrix& xv = value(x);
  const Matrix& bv = value(bias);
  if (bv.rows() != 1 || bv.cols() != xv.cols()) throw DimensionError("Tape::add_row_bias: bad bias shape");
  Matrix y = xv;
  for (std::size_t r = 0; r < y.rows(); ++r)
    for (std::size_t c = 0; c < y.cols(); ++c) y(r, c) += bv(0, c);
  return push(std::move(y), [x, bias](Tape& t, const Matrix& g) {
    add_into(t.acc(x), g);
    Matrix& gb = t.acc(bias);
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < g.cols(); ++c) gb(0, c) += g(r, c);
  });
}

Var Tape::mul_scalar(Var x, Var s) {
  if (value(s).rows() != 1 || value(s).cols() != 1) throw DimensionError("Tape::mul_scalar: scalar must be 1x1");
  return push(deltamem::scale(value(x), value(s)(0, 0)), [x, s](Tape& t, const Matrix& g) {
    const Matrix& xv = t.value(x);
    add_into(t.acc(x), deltamem::scale(g, t.value(s)(0, 0)));
    double d = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) d += g.data()[i] * xv.data()[i];
    t.acc(s)(0, 0) += d;
  });
}

Var Tape::row_softmax(Var x, Mask mask, bool allow_empty) {
  const Matrix& xv = value(x);
  Matrix y(xv.rows(), xv.cols());
  if (!xv.all_finite()) throw DimensionError("Tape::row_softmax: non-finite input");
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    const std::size_t lim = prefix(mask, r, xv.cols());
    if (lim == 0) {
      if (!allow_empty) throw DimensionError("Tape::row_softmax: row " + std::to_string(r) + " is fully masked");
      continue;
    }
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < lim; ++j) mx = std::max(mx, xv(r, j));
    double z = 0.0;
    for (std::size_t j = 0; j < lim; ++j) z += (y(r, j) = std::exp(xv(r, j) - mx));
    for (std::size_t j = 0; j < lim; ++j) y(r, j) /= z;
  }
  const std::size_t self = nodes_.size();
  return push(std::move(y), [x, self](Tape& t, const Matrix& g) {
    const Matrix& yv = t.nodes_[self].value;
    Matrix& gx = t.acc(x);
    for (std::size_t r = 0; r < g.rows(); ++r) {
      double s = 0.0;
      for (std::size_t j = 0; j < g.cols(); ++j) s += g(r, j) * yv(r, j);
      for (std::size_t j = 0; j < g.cols(); ++j) gx(r, j) += yv(r, j) * (g(r, j) - s);
    }
  });
}

Var Tape::exp(Var x) {
  Matrix y = value(x);
  for (double& e : y.data()) e = std::exp(e);
  const std::size_t self = nodes_.size();
  return push(std::move(y), [x, self](Tape& t, const Matrix& g) {
    add_into(t.acc(x), deltamem::hadamard(g, t.nodes_[self].value));
  });
}

Var Tape::relu(Var x) {
  Matrix y = value(x);
  for (double& e : y.data()) e = std::max(e, 0.0);
  return push(std::move(y), [x](Tape& t, const Matrix& g) {
    Matrix& gx = t.acc(x);
    const auto xv = t.value(x).data();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xv[i] > 0.0) gx.data()[i] += g.data()[i];
  });
}

Var Tape::round_ste(Var x, int decimals) {
  const double f = std::pow(10.0, decimals);
  Matrix y = value(x);
  for (double& e : y.data()) e = std::nearbyint(e * f) / f;
  return push(std::move(y), [x](Tape& t, const Matrix& g) { add_into(t.acc(x), g); });
}

Var Tape::mask_lower(Var x, Mask mask) {
  Matrix y = value(x);
  for (std::size_t r = 0; r < y.rows(); ++r)
    for (std::size_t c = prefix(mask, r, y.cols()); c < y.cols(); ++c) y(r, c) = 0.0;
  return push(std::move(y), [x, mask](Tape& t, const Matrix& g) {
    Matrix& gx = t.acc(x);
    for (std::size_t r = 0; r < g.rows(); ++r) {
      const std::size_t lim = prefix(mask, r, g.cols());
      for (std::size_t c = 0; c < lim; ++c) gx(r, c) += g(r, c);
    }
  });
}

Var Tape::tri_solve(Var a, Var rhs) {
  const std::size_t self = nodes_.size();
  return push(tri_solve_unit_lower(value(a), value(rhs)), [a, rhs, self](Tape& t, const Matrix& g) {
    const Matrix& av = t.value(a);
    const Matrix& xv = t.nodes_[self].value;
    // Implicit differentiation of (I + A) X = R: dR = (I + A)^-T G and
    // dA = -strict_lower(dR X^T).
    const Matrix dr = tri_solve_unit_lower_transposed(av, g);
    Matrix& ga = t.acc(a);
    for (std::size_t r = 1; r < av.rows(); ++r)
      for (std::size_t c = 0; c < r; ++c) ga(r, c) -= dot(dr.row(r), xv.row(c));
    add_into(t.acc(rhs), dr);
  });
}

Var Tape::gather_rows(Var table, const std::vector<int>& ids) {
  const Matrix& tv = value(table);
  Matrix y(ids.size(), tv.cols());
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= tv.rows()) {
      throw DimensionError("Tape::gather_rows: id " + std::to_string(ids[r]) + " out of range");
    }
    std::copy(tv.row(ids[r]).begin(), tv.row(ids[r]).end(), y.row(r).begin());
  }
  return push(std::move(y), [table, ids](Tape& t, const Matrix& g) {
    Matrix& gt = t.acc(table);
    for (std::size_t r = 0; r < ids.size(); ++r) {
      auto dst = gt.row(ids[r]);
      auto src = g.row(r);
      for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
    }
  });
}

Var Tape::slice_cols(Var x, std::size_t begin, std::size_t end) {
  return push(deltamem::slice_cols(value(x), begin, end), [x, begin](Tape& t, const Matrix& g) {
    Matrix& gx = t.acc(x);
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < g.cols(); ++c) gx(r, begin + c) += g(r, c);
  });
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("Tape::concat_cols: no parts");
  const std::size_t rows = value(parts[0]).rows();
  std::size_t cols = 0;
  for (Var p : parts) {
    if (value(p).rows() != rows) throw DimensionError("Tape::concat_cols: row mismatch");
    cols += value(p).cols();
  }
  Matrix y(rows, cols);
  std::size_t off = 0;
  for (Var p : parts) {
    const Matrix& pv = value(p);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < pv.cols(); ++c) y(r, off + c) = pv(r, c);
    off += pv.cols();
  }
  return push(std::move(y), [parts](Tape& t, const Matrix& g) {
    std::size_t off = 0;
    for (Var p : parts) {
      Matrix& gp = t.acc(p);
      for (std::size_t r = 0; r < gp.rows(); ++r)
        for (std::size_t c = 0; c < gp.cols(); ++c) gp(r, c) += g(r, off + c);
      off += gp.cols();
    }
  });
}

Var Tape::rms_norm_rows(Var x, double eps) {
  const Matrix& xv = value(x);
  Matrix y(xv.rows(), xv.cols());
  std::vector<double> inv_r(xv.rows());
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    double ms = 0.0;
    for (double e : xv.row(r)) ms += e * e;
    ms /= static_cast<double>(xv.cols());
    inv_r[r] = 1.0 / std::sqrt(ms + eps);
    for (std::size_t c = 0; c < xv.cols(); ++c) y(r, c) = xv(r, c) * inv_r[r];
  }
  const std::size_t self = nodes_.size();
  return push(std::move(y), [x, self, inv_r](Tape& t, const Matrix& g) {
    const Matrix& yv = t.nodes_[self].value;
    Matrix& gx = t.acc(x);
    const double n = static_cast<double>(g.cols());
    for (std::size_t r = 0; r < g.rows(); ++r) {
      const double m = dot(g.row(r), yv.row(r)) / n;
      for (std::size_t c = 0; c < g.cols(); ++c) gx(r, c) += (g(r, c) - yv(r, c) * m) * inv_r[r];
    }
  });
}

Var Tape::rope(Var x, double base) {
  const Matrix& xv = value(x);
  const std::size_t d = xv.cols();
  const std::size_t pairs = d / 2;
  std::vector<double> freq(pairs);
  for (std::size_t i = 0; i < pairs; ++i) freq[i] = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(d));
  Matrix y = xv;
  for (std::size_t r = 0; r < xv.rows(); ++r)
    for (std::size_t i = 0; i < pairs; ++i) {
      const double th = static_cast<double>(r) * freq[i];
      const double cs = std::cos(th), sn = std::sin(th);
      const double a = xv(r, 2 * i), b = xv(r, 2 * i + 1);
      y(r, 2 * i) = a * cs - b * sn;
      y(r, 2 * i + 1) = a * sn + b * cs;
    }
  return push(std::move(y), [x, freq, pairs](Tape& t, const Matrix& g) {
    Matrix& gx = t.acc(x);
    for (std::size_t r = 0; r < g.rows(); ++r) {
      for (std::size_t i = 0; i < pairs; ++i) {
        const double th = static_cast<double>(r) * freq[i];
        const double cs = std::cos(th), sn = std::sin(th);
        const double ga = g(r, 2 * i), gb = g(r, 2 * i + 1);
        gx(r, 2 * i) += ga * cs + gb * sn;
        gx(r, 2 * i + 1) += -ga * sn + gb * cs;
      }
      for (std::size_t c = 2 * pairs; c < g.cols(); ++c) gx(r, c) += g(r, c);
    }
  });
}

Var Tape::sum(Var x) {
  double s = 0.0;
  for (double e : value(x).data()) s += e;
  return push(Matrix(1, 1, s), [x](Tape& t, const Matrix& g) {
    for (double& e : t.acc(x).data()) e += g(0, 0);
  });
}

Var Tape::mean(Var x) {
  const double n = static_cast<double>(std::max<std::size_t>(value(x).size(), 1));
  return scale(sum(x), 1.0 / n);
}

Var Tape::cross_entropy(Var logits, const std::vector<int>& labels) {
  const Matrix& lv = value(logits);
  if (labels.size() != lv.rows()) throw DimensionError("Tape::cross_entropy: label count mismatch");
  Matrix p(lv.rows(), lv.cols());
  double loss = 0.0;
  for (std::size_t r = 0; r < lv.rows(); ++r) {
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= lv.cols()) {
      throw DimensionError("Tape::cross_entropy: label out of range");
    }
    double mx = -std::numeric_limits<double>::infinity();
    for (double e : lv.row(r)) mx = std::max(mx, e);
    double z = 0.0;
    for (std::size_t c = 0; c < lv.cols(); ++c) z += (p(r, c) = std::exp(lv(r, c) - mx));
    for (std::size_t c = 0; c < lv.cols(); ++c) p(r, c) /= z;
    loss += std::log(z) + mx - lv(r, labels[r]);
  }
  const double n = static_cast<double>(std::max<std::size_t>(lv.rows(), 1));
  return push(Matrix(1, 1, loss / n), [logits, labels, p, n](Tape& t, const Matrix& g) {
    Matrix& gl = t.acc(logits);
    const double s = g(0, 0) / n;
    for (std::size_t r = 0; r < p.rows(); ++r) {
      for (std::size_t c = 0; c < p.cols(); ++c) gl(r, c) += s * p(r, c);
      gl(r, labels[r]) -= s;
    }
  });
}

void Tape::backward(Var out) {
  const Matrix& ov = value(out);
  if (ov.rows() != 1 || ov.cols() != 1) throw DimensionError("Tape::backward: output must be 1x1");
  for (auto& n : nodes_) n.grad = Matrix();
  acc(out)(0, 0) = 1.0;
  for (std::size_t i = out.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.back || n.grad.empty()) continue;
    n.back(*this, n.grad);
  }
}

double grad_check(const std::function<Var(Tape&, Var)>& f, const Matrix& x, double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-4)) throw DimensionError("grad_check: eps must lie in [1e-7, 1e-4]");
  Tape tape;
  const Var xv = tape.leaf(x);
  const Var out = f(tape, xv);
  tape.backward(out);
  const Matrix g_ad = tape.grad(xv);

  auto eval = [&](const Matrix& at) {
    Tape t;
    const Var o = f(t, t.leaf(at));
    if (t.value(o).rows() != 1 || t.value(o).cols() != 1) throw DimensionError("grad_check: output must be 1x1");
    return t.value(o)(0, 0);
  };
  double worst = 0.0;
  Matrix probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe.data()[i];
    probe.data()[i] = orig + eps;
    const double fp = eval(probe);
    probe.data()[i] = orig - eps;
    const double fm = eval(probe);
    probe.data()[i] = orig;
    const double g_fd = (fp - fm) / (2.0 * eps);
    const double ga = g_ad.data()[i];
    worst = std::max(worst, std::abs(ga - g_fd) / (std::abs(ga) + std::abs(g_fd) + 1e-12));
  }
  return worst;
}

}  // namespace deltamem
