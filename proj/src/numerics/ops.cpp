#include "lewm/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "lewm/errors.hpp"

namespace lewm::ops {

namespace {

void require_vector(const Array& x, const char* what) {
  if (x.rank() != 1) {
    throw ContractViolation(std::string(what) + ": expected a vector, got " +
                            shape_string(x.shape()));
  }
}

void require_same_shape(const Array& a, const Array& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ContractViolation(std::string(what) + ": shape mismatch " + shape_string(a.shape()) +
                            " vs " + shape_string(b.shape()));
  }
}

}  // namespace

Activation parse_activation(std::string_view name) {
  if (name == "tanh") return Activation::tanh;
  if (name == "relu") return Activation::relu;
  throw ConfigError("unknown nonlinearity '" + std::string(name) + "'");
}

std::string_view activation_name(Activation kind) {
  return kind == Activation::tanh ? "tanh" : "relu";
}

Array affine(const Array& x, const Array& W, const Array& b) {
  if (x.rank() != 1 || W.rank() != 2 || b.rank() != 1 || W.cols() != x.size() ||
      W.rows() != b.size()) {
    throw ContractViolation("affine: shapes do not conform: x " + shape_string(x.shape()) +
                            ", W " + shape_string(W.shape()) + ", b " + shape_string(b.shape()));
  }
  const std::size_t m = W.rows();
  const std::size_t n = W.cols();
  Array y = b;
  const double* w = W.values().data();
  const double* xv = x.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    double acc = 0.0;
    const double* row = w + i * n;
    for (std::size_t j = 0; j < n; ++j) acc += row[j] * xv[j];
    y[i] += acc;
  }
  return y;
}

void affine_backward(const Array& x, const Array& W, const Array& dy, Array* dx, Array* dW,
                     Array* db) {
  const std::size_t m = W.rows();
  const std::size_t n = W.cols();
  if (dy.size() != m || x.size() != n) {
    throw ContractViolation("affine_backward: dy " + shape_string(dy.shape()) + " / x " +
                            shape_string(x.shape()) + " vs W " + shape_string(W.shape()));
  }
  const double* w = W.values().data();
  const double* xv = x.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    const double g = dy[i];
    if (g == 0.0) continue;
    if (db) (*db)[i] += g;
    if (dW) {
      double* row = dW->values().data() + i * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += g * xv[j];
    }
    if (dx) {
      const double* wrow = w + i * n;
      double* out = dx->values().data();
      for (std::size_t j = 0; j < n; ++j) out[j] += g * wrow[j];
    }
  }
}

Array activate(const Array& x, Activation kind) {
  Array y = x;
  for (double& v : y.values()) {
    v = kind == Activation::tanh ? std::tanh(v) : std::max(v, 0.0);
  }
  return y;
}

Array activate_backward(const Array& x, const Array& y, const Array& dy, Activation kind) {
  require_same_shape(x, dy, "activate_backward");
  Array dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i) {
    dx[i] *= kind == Activation::tanh ? 1.0 - y[i] * y[i] : (x[i] > 0.0 ? 1.0 : 0.0);
  }
  return dx;
}

Array softmax(const Array& x) {
  require_vector(x, "softmax");
  if (x.empty()) throw ContractViolation("softmax of an empty vector");
  const double shift = *std::max_element(x.values().begin(), x.values().end());
  Array y = x;
  double total = 0.0;
  for (double& v : y.values()) {
    v = std::exp(v - shift);
    total += v;
  }
  for (double& v : y.values()) v /= total;
  return y;
}

Array softmax_backward(const Array& y, const Array& dy) {
  require_same_shape(y, dy, "softmax_backward");
  double dot = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) dot += y[i] * dy[i];
  Array dx = y;
  for (std::size_t i = 0; i < y.size(); ++i) dx[i] = y[i] * (dy[i] - dot);
  return dx;
}

double cross_entropy(const Array& pred, const Array& target) {
  require_same_shape(pred, target, "cross_entropy");
  double loss = 0.0;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    if (target[k] != 0.0) loss -= target[k] * std::log(std::max(pred[k], kLogClamp));
  }
  return loss;
}

double cross_entropy(const Array& pred, std::size_t target) {
  if (target >= pred.size()) {
    throw ContractViolation("cross_entropy: target index " + std::to_string(target) +
                            " out of range for " + shape_string(pred.shape()));
  }
  return -std::log(std::max(pred[target], kLogClamp));
}

Array cross_entropy_grad(const Array& pred, const Array& target) {
  require_same_shape(pred, target, "cross_entropy_grad");
  Array g = Array::zeros_like(pred);
  for (std::size_t k = 0; k < pred.size(); ++k) {
    // The clamp is flat below kLogClamp, so its derivative is zero there.
    if (target[k] != 0.0 && pred[k] > kLogClamp) g[k] = -target[k] / pred[k];
  }
  return g;
}

double mse(const Array& pred, const Array& target) {
  require_same_shape(pred, target, "mse");
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    total += d * d;
  }
  return total / static_cast<double>(pred.size());
}

Array mse_grad(const Array& pred, const Array& target) {
  require_same_shape(pred, target, "mse_grad");
  Array g = pred;
  const double scale = 2.0 / static_cast<double>(pred.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = scale * (pred[i] - target[i]);
  return g;
}

Array concat(const std::vector<const Array*>& parts) {
  std::vector<double> values;
  for (const Array* p : parts) {
    require_vector(*p, "concat");
    values.insert(values.end(), p->values().begin(), p->values().end());
  }
  return Array::vector(std::move(values));
}

Array slice(const Array& x, std::size_t begin, std::size_t length) {
  require_vector(x, "slice");
  if (begin + length > x.size() || length == 0) {
    throw ContractViolation("slice [" + std::to_string(begin) + ", +" + std::to_string(length) +
                            ") out of range for " + shape_string(x.shape()));
  }
  auto first = x.values().begin() + static_cast<std::ptrdiff_t>(begin);
  return Array::vector(std::vector<double>(first, first + static_cast<std::ptrdiff_t>(length)));
}

Array one_hot(std::size_t index, std::size_t k) {
  if (index >= k) throw ContractViolation("one_hot index out of range");
  Array out({k});
  out[index] = 1.0;
  return out;
}

std::size_t argmax(const Array& x) {
  if (x.empty()) throw ContractViolation("argmax of an empty array");
  std::size_t best = 0;
  for (std::size_t i = 1; i < x.size(); ++i) {
    if (x[i] > x[best]) best = i;
  }
  return best;
}

double l2_norm(const Array& x) {
  double s = 0.0;
  for (double v : x.values()) s += v * v;
  return std::sqrt(s);
}

bool on_simplex(const Array& p, double tol) {
  if (p.rank() != 1 || p.empty()) return false;
  double total = 0.0;
  for (double v : p.values()) {
    if (!std::isfinite(v) || v < 0.0 || v > 1.0) return false;
    total += v;
  }
  return std::abs(total - 1.0) <= tol;
}

}  // namespace lewm::ops
