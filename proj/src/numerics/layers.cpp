#include "lewm/layers.hpp"

#include <cmath>

namespace lewm {

Array glorot(std::size_t out, std::size_t in, Rng& rng) {
  Array w({out, in});
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  for (double& v : w.values()) v = (2.0 * rng.uniform() - 1.0) * limit;
  return w;
}

Array* grad_slot(ParamStore* grads, const std::string& name) {
  return grads ? grads->find(name) : nullptr;
}

void FeedForward::add_params(ParamStore& params, std::size_t in, std::size_t hidden,
                             std::size_t out, Rng& rng, bool trainable) const {
  params.add(w1(), glorot(hidden, in, rng), trainable);
  params.add(b1(), Array({hidden}), trainable);
  params.add(w2(), glorot(out, hidden, rng), trainable);
  params.add(b2(), Array({out}), trainable);
}

Array FeedForward::forward(const ParamStore& params, const Array& x, Trace* trace) const {
  Array pre = ops::affine(x, params.get(w1()), params.get(b1()));
  Array hidden = ops::activate(pre, act_);
  Array out = ops::affine(hidden, params.get(w2()), params.get(b2()));
  if (trace) {
    trace->input = x;
    trace->pre = std::move(pre);
    trace->hidden = std::move(hidden);
  }
  return out;
}

Array FeedForward::backward(const ParamStore& params, const Trace& trace, const Array& dout,
                            ParamStore* grads) const {
  Array dhidden = Array::zeros_like(trace.hidden);
  ops::affine_backward(trace.hidden, params.get(w2()), dout, &dhidden, grad_slot(grads, w2()),
                       grad_slot(grads, b2()));
  Array dpre = ops::activate_backward(trace.pre, trace.hidden, dhidden, act_);
  Array dx = Array::zeros_like(trace.input);
  ops::affine_backward(trace.input, params.get(w1()), dpre, &dx, grad_slot(grads, w1()),
                       grad_slot(grads, b1()));
  return dx;
}

}  // namespace lewm
