#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "pagen/tensor.hpp"

// Differentiable operations. Every op records itself on the thread's tape when
// an input requires a gradient.
namespace pagen::ops {

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;
};

// input [B,Cin,H,W], weight [Cout,Cin/groups,k,k], bias [Cout] -> [B,Cout,H',W'].
// H' = (H + 2*padding - k) / stride + 1. When k == stride (patchify) the
// spatial extents must divide evenly.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              Conv2dOptions options = {});

// [...,m,k] x [...,k,n]. Batch extents must match, or `b` may be rank 2 and is
// then shared across the batch of `a`.
Tensor matmul(const Tensor& a, const Tensor& b);

// Swaps the last two axes.
Tensor transpose_last2(const Tensor& x);

// Numerically stable softmax over the last axis.
Tensor softmax_lastdim(const Tensor& x);

// Corner-aligned bilinear resize of [B,C,h,w] to [B,C,out_h,out_w].
Tensor upsample_bilinear(const Tensor& x, std::size_t out_h, std::size_t out_w);

Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis);
// Inverse of concat: cuts `x` along `axis` into pieces of the given extents.
std::vector<Tensor> split(const Tensor& x, std::span<const std::size_t> extents, std::size_t axis);

Tensor reshape(const Tensor& x, Shape shape);
// out.shape[i] = x.shape[axes[i]].
Tensor permute(const Tensor& x, std::span<const std::size_t> axes);
Tensor permute(const Tensor& x, std::initializer_list<std::size_t> axes);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);
// Divides each leading slice x[i,...] by divisors[i]; divisors has shape [x.dim(0)].
Tensor divide_slices(const Tensor& x, const Tensor& divisors);

Tensor exp(const Tensor& x);
Tensor log1p(const Tensor& x);
Tensor expm1(const Tensor& x);
// x * sigmoid(x).
Tensor silu(const Tensor& x);
// Forward clamps to [lo,hi]; gradient passes unchanged inside the range and is
// zero outside it.
Tensor clip(const Tensor& x, double lo, double hi);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// Mean over all elements of (a-b)^2.
Tensor mse(const Tensor& a, const Tensor& b);

// Mean binary cross-entropy of sigmoid(logits) against targets in [0,1].
Tensor bce_with_logits(const Tensor& logits, const Tensor& targets);
// Mean of |pred - target| over elements whose mask entry is nonzero; 0 when
// the mask is empty.
Tensor masked_l1(const Tensor& pred, const Tensor& target, std::span<const unsigned char> mask);
// logits [K,N] with classes along axis 0; labels[n] in [0,K) or -1 to skip.
// Mean negative log-likelihood over the labeled columns; 0 when none are.
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

}  // namespace pagen::ops
