#pragma once

#include "binaural/audionet/model.hpp"
#include "binaural/core/ops.hpp"

namespace binaural::training {

/// ||Yl~ - Yl||^2 + ||Yr~ - Yr||^2 with Yl~ = (A + O~)/2, Yr~ = (A - O~)/2,
/// all as [2 x F x T] planes. Returns a [1] scalar node.
template <typename T>
ad::Var<T> binaural_loss(const audionet::ForwardGraph<T>& g, const Tensor<T>& yl, const Tensor<T>& yr) {
  const auto& a = g.mixture.value();
  if (yl.shape() != a.shape() || yr.shape() != a.shape())
    throw ShapeError("loss: targets " + shape_str(yl.shape()) + "/" + shape_str(yr.shape()) +
                     " do not match prediction " + shape_str(a.shape()));
  auto& tape = *g.mixture.tape;
  const auto pl = ad::scale(ad::add(g.mixture, g.difference), T{0.5});
  const auto pr = ad::scale(ad::sub(g.mixture, g.difference), T{0.5});
  return ad::add(ad::sum_squares(ad::sub(pl, tape.constant_ref(yl))), ad::sum_squares(ad::sub(pr, tape.constant_ref(yr))));
}

/// Same loss on plain tensors: predicted and true left/right planes.
inline double binaural_loss(const Tensor<double>& pl, const Tensor<double>& pr, const Tensor<double>& yl,
                            const Tensor<double>& yr) {
  pl.require_same_shape(yl, "loss");
  pr.require_same_shape(yr, "loss");
  double s = 0.0;
  for (std::int64_t i = 0; i < pl.numel(); ++i) s += (pl[i] - yl[i]) * (pl[i] - yl[i]);
  for (std::int64_t i = 0; i < pr.numel(); ++i) s += (pr[i] - yr[i]) * (pr[i] - yr[i]);
  return s;
}

}  // namespace binaural::training
