#pragma once

#include "pssc/autograd.hpp"

/// Differentiable tensor ops recorded on a Tape. Image tensors are
/// N x C x H x W; vectors per sample are N x K.
namespace pssc::ops {

template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
template <typename T> Var<T> scale(Var<T> a, T s);
template <typename T> Var<T> add_scalar(Var<T> a, T s);
template <typename T> Var<T> one_minus(Var<T> a);
/// Sum of all elements; scalar [1].
template <typename T> Var<T> sum(Var<T> a);
/// Mean of all elements; scalar [1].
template <typename T> Var<T> mean(Var<T> a);
/// Inner product with a constant tensor of the same shape; scalar [1].
template <typename T> Var<T> dot_const(Var<T> a, const Tensor<T>& weights);

template <typename T> Var<T> leaky_relu(Var<T> a, T slope);
template <typename T> Var<T> tanh(Var<T> a);
template <typename T> Var<T> softplus(Var<T> a);

/// y = gain * x w^T + b with x [N,K], w [M,K], b [M].
template <typename T> Var<T> linear(Var<T> x, Var<T> w, Var<T> b, T gain);
/// Stride-1, same-padded convolution with odd square kernels; w [O,C,k,k].
template <typename T> Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, T gain);

template <typename T> Var<T> upsample2x(Var<T> x);
template <typename T> Var<T> avgpool2x(Var<T> x);
/// [N,C,H,W] -> [N,C]
template <typename T> Var<T> global_avg_pool(Var<T> x);

template <typename T> Var<T> reshape(Var<T> x, Shape shape);
/// [1,...] -> [n,...]
template <typename T> Var<T> broadcast_batch(Var<T> x, int n);
/// [N,K] -> [N,1]
template <typename T> Var<T> select_column(Var<T> x, int column);

/// Along the last axis.
template <typename T> Var<T> softmax_last(Var<T> x);
template <typename T> Var<T> cumax_last(Var<T> x);
/// Divides each last-axis row by its maximum (rows must be positive).
template <typename T> Var<T> normalize_max_last(Var<T> x);

/// gh [N,J,H], gw [N,J,W] -> per-rectangle outer products [N,J,H,W].
template <typename T> Var<T> outer_rects(Var<T> gh, Var<T> gw);
/// [N,J,H,W] -> mean over J, [N,H,W].
template <typename T> Var<T> mean_rects(Var<T> rects);

/// Per-channel instance renormalisation to (mean, std) with x, mean/std
/// shaped [N,C,H,W] and [N,C]. Population std; eps is added to sigma.
template <typename T> Var<T> adain(Var<T> x, Var<T> style_mean, Var<T> style_std, T eps);
/// gamma * (1 - mask) + styled * mask, mask [N,H,W] broadcast over channels.
template <typename T> Var<T> mask_blend(Var<T> gamma, Var<T> styled, Var<T> mask);

/// Identity forward; multiplies the incoming gradient by `s`.
template <typename T> Var<T> grad_scale(Var<T> a, T s);

}  // namespace pssc::ops
