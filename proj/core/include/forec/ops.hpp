#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "forec/tensor.hpp"

namespace forec::ops {

/// Validated geometry of a conv2d call.
struct ConvDims {
  int n, cin, h, w;
  int cout, kh, kw;
  int stride, pad;
  int oh, ow;
};

ConvDims conv_dims(const std::vector<int>& input_shape, const std::vector<int>& weight_shape,
                   int stride, int pad);

/// out[n,co,oy,ox] = sum_{ci,ky,kx} in[n,ci,oy*s-p+ky,ox*s-p+kx] * w[co,ci,ky,kx] (+ b[co]).
/// Zero padding. Inner accumulation at 64-bit, stored as 32-bit; the
/// per-element reduction order is fixed, so results do not depend on the
/// worker count.
Tensor conv2d_forward(const Tensor& input, const Tensor& weight, const Tensor* bias,
                      int stride, int pad);

/// Adds gradients into the provided buffers (any of them may be null).
void conv2d_backward(const Tensor& input, const Tensor& weight, int stride, int pad,
                     const Tensor& dout, Tensor* dinput, Tensor* dweight, Tensor* dbias);

Tensor relu_forward(const Tensor& input);
void relu_backward(const Tensor& input, const Tensor& dout, Tensor& dinput);

Tensor upsample_nearest_forward(const Tensor& input, int factor);
void upsample_nearest_backward(const Tensor& dout, int factor, Tensor& dinput);

/// Mean negative log-likelihood of the per-pixel softmax over the channel
/// axis. Pixels labeled 255 are ignored; zero valid pixels yields loss 0.
struct SoftmaxCeResult {
  float loss = 0.f;
  Tensor probs;          // softmax(logits), saved for backward
  int64_t valid = 0;     // non-ignored pixel count
};
SoftmaxCeResult softmax_ce_forward(const Tensor& logits, const std::vector<LabelMap>& labels);

/// dlogits += seed * (probs - onehot(label)) / valid at non-ignored pixels.
void softmax_ce_backward(const SoftmaxCeResult& fwd, const std::vector<LabelMap>& labels,
                         float seed, Tensor& dlogits);

/// Masked mean squared error: sum over channels and mask=1 pixels of
/// (pred-target)^2, divided by (channels * masked-in pixel count). Zero if
/// the mask is all zero. Mask must be binary, shape [N,1,H,W].
struct MaskedMseResult {
  float loss = 0.f;
  int64_t masked_in = 0;
};
MaskedMseResult masked_mse_forward(const Tensor& pred, const Tensor& target, const Tensor& mask);
void masked_mse_backward(const Tensor& pred, const Tensor& target, const Tensor& mask,
                         int64_t masked_in, float seed, Tensor& dpred);

/// Per-pixel softmax over the channel axis (inference path, no gradients).
Tensor softmax_channels(const Tensor& logits);

/// Per-pixel argmax over the channel axis; ties break toward the lowest
/// class index. Input [C,H,W] or one slice of [N,C,H,W] via `n`.
LabelMap argmax_channels(const Tensor& logits, int n = 0);

}  // namespace forec::ops
