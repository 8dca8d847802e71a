#include "crowdsca/losses.hpp"

#include <cmath>

#include "crowdsca/errors.hpp"

namespace crowdsca {

void LossWeights::validate() const {
    for (double v : {lambda_s, lambda_t, lambda_d}) {
        if (!(v >= 0.0) || !std::isfinite(v)) {
            throw ConfigError("loss weights must be finite and non-negative");
        }
    }
}

template <typename T>
LossGrad<T> density_loss(const Tensor<T>& pred, const Tensor<T>& gt) {
    pred.check_same(gt, "density_loss");
    if (pred.n() < 1) {
        throw ShapeError("density_loss: empty batch");
    }
    LossGrad<T> out{T(0), Tensor<T>(pred.shape())};
    const T inv_n = T(1) / static_cast<T>(pred.n());
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const T r = pred[i] - gt[i];
        acc += static_cast<double>(r) * r;
        out.grad[i] = r * inv_n;
    }
    out.value = static_cast<T>(acc * 0.5 / pred.n());
    return out;
}

template <typename T>
LossGrad<T> source_seg_loss(const Tensor<T>& z_hat, const Tensor<T>& z, double eps) {
    z_hat.check_same(z, "source_seg_loss");
    const T lo = static_cast<T>(eps);
    const T hi = static_cast<T>(1.0 - eps);
    const std::size_t per_image = static_cast<std::size_t>(z.c()) * z.h() * z.w();
    const T scale = T(1) / static_cast<T>(per_image * static_cast<std::size_t>(z.n()));
    LossGrad<T> out{T(0), Tensor<T>(z.shape())};
    double acc = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        const T raw = z_hat[i];
        const bool clamped = raw < lo || raw > hi;
        const T p = raw < lo ? lo : (raw > hi ? hi : raw);
        const T y = z[i];
        acc -= static_cast<double>(y) * std::log(p) + static_cast<double>(T(1) - y) * std::log(T(1) - p);
        out.grad[i] = clamped ? T(0) : -scale * (y / p - (T(1) - y) / (T(1) - p));
    }
    out.value = static_cast<T>(acc / static_cast<double>(per_image) / z.n());
    return out;
}

template <typename T>
Tensor<T> mask_filter(const Tensor<T>& z_hat, const Tensor<T>& z) {
    z_hat.check_same(z, "mask_filter");
    Tensor<T> out(z.shape());
    for (std::size_t i = 0; i < z.size(); ++i) {
        out[i] = z_hat[i] * (T(1) - z[i]) + z[i];
    }
    return out;
}

template <typename T>
LossGrad<T> target_seg_loss(const Tensor<T>& z_hat, const Tensor<T>& z, double eps) {
    z_hat.check_same(z, "target_seg_loss");
    const Tensor<T> z_bar = mask_filter(z_hat, z);
    const T lo = static_cast<T>(eps);
    const T hi = static_cast<T>(1.0 - eps);
    const std::size_t per_image = static_cast<std::size_t>(z.c()) * z.h() * z.w();
    const T scale = T(1) / static_cast<T>(per_image * static_cast<std::size_t>(z.n()));
    LossGrad<T> out{T(0), Tensor<T>(z.shape())};
    double acc = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        const T raw = z_bar[i];
        const bool clamped = raw < lo || raw > hi;
        const T p = raw < lo ? lo : (raw > hi ? hi : raw);
        const T y = z[i];
        acc -= static_cast<double>(y) * std::log(p) + static_cast<double>(T(1) - y) * std::log(T(1) - p);
        if (y != T(0) || clamped) {
            // foreground: d z_bar / d z_hat = 1 - z = 0
            out.grad[i] = T(0);
        } else {
            out.grad[i] = scale / (T(1) - p);
        }
    }
    out.value = static_cast<T>(acc / static_cast<double>(per_image) / z.n());
    return out;
}

template <typename T>
LossGrad<T> adversarial_loss(const Tensor<T>& p_t, double eps) {
    if (p_t.n() < 1) {
        throw ShapeError("adversarial_loss: empty batch");
    }
    const T lo = static_cast<T>(eps);
    const T hi = static_cast<T>(1.0 - eps);
    const T inv_n = T(1) / static_cast<T>(p_t.n());
    LossGrad<T> out{T(0), Tensor<T>(p_t.shape())};
    double acc = 0.0;
    for (std::size_t i = 0; i < p_t.size(); ++i) {
        const T raw = p_t[i];
        const bool clamped = raw < lo || raw > hi;
        const T p = raw < lo ? lo : (raw > hi ? hi : raw);
        acc -= std::log(static_cast<double>(p));
        out.grad[i] = clamped ? T(0) : -inv_n / p;
    }
    out.value = static_cast<T>(acc / p_t.n());
    return out;
}

template <typename T>
DiscriminatorLoss<T> discriminator_loss(const Tensor<T>& p_s, const Tensor<T>& p_t, double eps) {
    if (p_s.size() == 0 || p_t.size() == 0) {
        throw ShapeError("discriminator_loss: empty input");
    }
    const T lo = static_cast<T>(eps);
    const T hi = static_cast<T>(1.0 - eps);
    DiscriminatorLoss<T> out{T(0), Tensor<T>(p_s.shape()), Tensor<T>(p_t.shape())};
    double src = 0.0;
    const T inv_s = T(1) / static_cast<T>(p_s.size());
    for (std::size_t i = 0; i < p_s.size(); ++i) {
        const T raw = p_s[i];
        const bool clamped = raw < lo || raw > hi;
        const T p = raw < lo ? lo : (raw > hi ? hi : raw);
        src -= std::log(static_cast<double>(p));
        out.grad_source[i] = clamped ? T(0) : -inv_s / p;
    }
    double tgt = 0.0;
    const T inv_t = T(1) / static_cast<T>(p_t.size());
    for (std::size_t i = 0; i < p_t.size(); ++i) {
        const T raw = p_t[i];
        const bool clamped = raw < lo || raw > hi;
        const T p = raw < lo ? lo : (raw > hi ? hi : raw);
        tgt -= std::log(1.0 - static_cast<double>(p));
        out.grad_target[i] = clamped ? T(0) : inv_t / (T(1) - p);
    }
    out.value = static_cast<T>(src / p_s.size() + tgt / p_t.size());
    return out;
}

LossRecord total_loss(const LossComponents& c, const LossWeights& w) {
    const std::pair<const char*, double> parts[] = {
        {"den", c.den}, {"seg_s", c.seg_s}, {"seg_t", c.seg_t}, {"adv", c.adv}};
    for (const auto& [name, v] : parts) {
        if (!std::isfinite(v)) {
            throw NumericError(std::string("non-finite loss component '") + name + "'");
        }
    }
    LossRecord r;
    r.den = c.den;
    r.seg_s = c.seg_s;
    r.seg_t = c.seg_t;
    r.adv = c.adv;
    r.total = c.den + w.lambda_s * c.seg_s + w.lambda_t * c.seg_t + w.lambda_d * c.adv;
    return r;
}

#define CROWDSCA_INSTANTIATE(T)                                                                     \
    template LossGrad<T> density_loss<T>(const Tensor<T>&, const Tensor<T>&);                       \
    template LossGrad<T> source_seg_loss<T>(const Tensor<T>&, const Tensor<T>&, double);            \
    template Tensor<T> mask_filter<T>(const Tensor<T>&, const Tensor<T>&);                          \
    template LossGrad<T> target_seg_loss<T>(const Tensor<T>&, const Tensor<T>&, double);            \
    template LossGrad<T> adversarial_loss<T>(const Tensor<T>&, double);                             \
    template DiscriminatorLoss<T> discriminator_loss<T>(const Tensor<T>&, const Tensor<T>&, double);

CROWDSCA_INSTANTIATE(float)
CROWDSCA_INSTANTIATE(double)
#undef CROWDSCA_INSTANTIATE

}  // namespace crowdsca
