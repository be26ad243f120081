#pragma once

#include <cstddef>
#include <string_view>
#include <vector>

#include "lewm/array.hpp"

namespace lewm::ops {

/// Floor applied to every probability before taking its log.
inline constexpr double kLogClamp = 1e-12;

enum class Activation { tanh, relu };

Activation parse_activation(std::string_view name);
std::string_view activation_name(Activation kind);

/// y = W x + b for x[n], W[m x n], b[m].
Array affine(const Array& x, const Array& W, const Array& b);

/// Accumulates gradients of y = W x + b into the non-null outputs.
void affine_backward(const Array& x, const Array& W, const Array& dy, Array* dx, Array* dW,
                     Array* db);

Array activate(const Array& x, Activation kind);

/// Gradient w.r.t. the activation input given its input x and output y.
Array activate_backward(const Array& x, const Array& y, const Array& dy, Activation kind);

/// Max-shifted softmax over a vector.
Array softmax(const Array& x);

/// Gradient w.r.t. the logits given softmax output y and upstream dy.
Array softmax_backward(const Array& y, const Array& dy);

/// -sum_k target_k log(max(pred_k, kLogClamp)).
double cross_entropy(const Array& pred, const Array& target);
double cross_entropy(const Array& pred, std::size_t target);
Array cross_entropy_grad(const Array& pred, const Array& target);

double mse(const Array& pred, const Array& target);
Array mse_grad(const Array& pred, const Array& target);

Array concat(const std::vector<const Array*>& parts);
Array slice(const Array& x, std::size_t begin, std::size_t length);
Array one_hot(std::size_t index, std::size_t k);
/// Index of the largest entry; ties go to the lowest index.
std::size_t argmax(const Array& x);
double l2_norm(const Array& x);

bool on_simplex(const Array& p, double tol = 1e-9);

}  // namespace lewm::ops
