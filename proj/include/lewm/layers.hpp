#pragma once

#include <cstddef>
#include <string>

#include "lewm/array.hpp"
#include "lewm/ops.hpp"
#include "lewm/rng.hpp"

namespace lewm {

/// Uniform Glorot initialisation of an [out x in] matrix.
Array glorot(std::size_t out, std::size_t in, Rng& rng);

/// Two-layer feed-forward map  out = W2 act(W1 x + b1) + b2.
/// Parameters live in a ParamStore under "<prefix>.w1", ".b1", ".w2", ".b2".
class FeedForward {
 public:
  struct Trace {
    Array input;
    Array pre;
    Array hidden;
  };

  FeedForward() = default;
  FeedForward(std::string prefix, ops::Activation act = ops::Activation::tanh)
      : prefix_(std::move(prefix)), act_(act) {}

  void add_params(ParamStore& params, std::size_t in, std::size_t hidden, std::size_t out,
                  Rng& rng, bool trainable = true) const;

  Array forward(const ParamStore& params, const Array& x, Trace* trace = nullptr) const;

  /// Accumulates parameter gradients into `grads` (when non-null) and returns
  /// the gradient w.r.t. the input.
  Array backward(const ParamStore& params, const Trace& trace, const Array& dout,
                 ParamStore* grads) const;

  const std::string& prefix() const noexcept { return prefix_; }
  std::string w1() const { return prefix_ + ".w1"; }
  std::string b1() const { return prefix_ + ".b1"; }
  std::string w2() const { return prefix_ + ".w2"; }
  std::string b2() const { return prefix_ + ".b2"; }

 private:
  std::string prefix_;
  ops::Activation act_ = ops::Activation::tanh;
};

/// Mutable handle to a gradient entry, or nullptr when `grads` is null or the
/// entry is absent.
Array* grad_slot(ParamStore* grads, const std::string& name);

}  // namespace lewm
