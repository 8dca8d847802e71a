#pragma once

#include <optional>
#include <string>

#include "crowdsca/tensor.hpp"

namespace crowdsca {

inline constexpr double kProbEps = 1e-7;

struct LossWeights {
    double lambda_s = 0.01;   // source segmentation
    double lambda_t = 0.01;   // target segmentation
    double lambda_d = 0.001;  // adversarial
    void validate() const;    // all >= 0, finite
};

/// One training iteration's losses. Adaptation terms are absent in baseline mode.
struct LossRecord {
    double den = 0.0;
    std::optional<double> seg_s;
    std::optional<double> seg_t;
    std::optional<double> adv;
    double total = 0.0;
    std::optional<double> disc;
};

/// A scalar loss and its gradient with respect to the (first) input.
template <typename T>
struct LossGrad {
    T value = 0;
    Tensor<T> grad;
};

/// Euclidean density loss: (1 / 2N) * sum_i ||pred_i - gt_i||^2 over a batch of N maps.
template <typename T>
LossGrad<T> density_loss(const Tensor<T>& pred, const Tensor<T>& gt);

/// Binary cross entropy against an exact mask: per-image pixel mean, then batch mean.
/// Probabilities are clamped to [eps, 1 - eps] first; clamped pixels get zero gradient.
template <typename T>
LossGrad<T> source_seg_loss(const Tensor<T>& z_hat, const Tensor<T>& z, double eps = kProbEps);

/// z_bar = z_hat * (1 - z) + z : pins the prediction to 1 wherever the pseudo-mask is foreground.
template <typename T>
Tensor<T> mask_filter(const Tensor<T>& z_hat, const Tensor<T>& z);

/// Cross entropy of the pseudo-mask against mask_filter(z_hat, z). Only background
/// pixels (z = 0) carry gradient; the gradient is exactly +0 wherever z = 1.
template <typename T>
LossGrad<T> target_seg_loss(const Tensor<T>& z_hat, const Tensor<T>& z, double eps = kProbEps);

/// Generator-side adversarial term: batch mean of -sum_{h,w} log p_t.
template <typename T>
LossGrad<T> adversarial_loss(const Tensor<T>& p_t, double eps = kProbEps);

template <typename T>
struct DiscriminatorLoss {
    T value = 0;
    Tensor<T> grad_source;
    Tensor<T> grad_target;
};

/// Domain classification loss: mean over source patches of -log p_s plus
/// mean over target patches of -log(1 - p_t).
template <typename T>
DiscriminatorLoss<T> discriminator_loss(const Tensor<T>& p_s, const Tensor<T>& p_t, double eps = kProbEps);

struct LossComponents {
    double den = 0.0;
    double seg_s = 0.0;
    double seg_t = 0.0;
    double adv = 0.0;
};

/// total = den + lambda_s * seg_s + lambda_t * seg_t + lambda_d * adv.
/// Throws NumericError naming the first non-finite component.
LossRecord total_loss(const LossComponents& c, const LossWeights& w);

}  // namespace crowdsca
