#include "crowdsca/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

namespace crowdsca {

namespace {

thread_local KinkRecorder* g_kink = nullptr;

/// Packs one branch bit per element into 64-bit words for the active recorder.
template <typename Pred>
void record_branches(std::size_t n, Pred bit) {
    KinkRecorder* r = g_kink;
    if (r == nullptr) return;
    std::uint64_t word = 0;
    for (std::size_t i = 0; i < n; ++i) {
        word = (word << 1) | (bit(i) ? 1U : 0U);
        if (i % 64 == 63) {
            r->add(word);
            word = 0;
        }
    }
    r->add(word ^ n);
}

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;

template <typename T>
void im2col(const T* x, int C, int H, int W, int k, int stride, int pad, int Ho, int Wo, T* col) {
    const std::size_t P = static_cast<std::size_t>(Ho) * Wo;
    for (int c = 0; c < C; ++c) {
        const T* xc = x + static_cast<std::size_t>(c) * H * W;
        for (int ki = 0; ki < k; ++ki) {
            for (int kj = 0; kj < k; ++kj) {
                T* dst = col + (static_cast<std::size_t>(c * k + ki) * k + kj) * P;
                for (int oh = 0; oh < Ho; ++oh) {
                    const int ih = oh * stride - pad + ki;
                    T* row = dst + static_cast<std::size_t>(oh) * Wo;
                    if (ih < 0 || ih >= H) {
                        std::fill(row, row + Wo, T(0));
                        continue;
                    }
                    const T* src = xc + static_cast<std::size_t>(ih) * W;
                    if (stride == 1) {
                        // valid columns form one contiguous run
                        const int lo = std::clamp(pad - kj, 0, Wo);
                        const int hi = std::clamp(W + pad - kj, lo, Wo);
                        std::fill(row, row + lo, T(0));
                        std::copy(src + lo - pad + kj, src + hi - pad + kj, row + lo);
                        std::fill(row + hi, row + Wo, T(0));
                        continue;
                    }
                    for (int ow = 0; ow < Wo; ++ow) {
                        const int iw = ow * stride - pad + kj;
                        row[ow] = (iw >= 0 && iw < W) ? src[iw] : T(0);
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im(const T* col, int C, int H, int W, int k, int stride, int pad, int Ho, int Wo, T* dx) {
    const std::size_t P = static_cast<std::size_t>(Ho) * Wo;
    for (int c = 0; c < C; ++c) {
        T* xc = dx + static_cast<std::size_t>(c) * H * W;
        for (int ki = 0; ki < k; ++ki) {
            for (int kj = 0; kj < k; ++kj) {
                const T* src = col + (static_cast<std::size_t>(c * k + ki) * k + kj) * P;
                for (int oh = 0; oh < Ho; ++oh) {
                    const int ih = oh * stride - pad + ki;
                    if (ih < 0 || ih >= H) {
                        continue;
                    }
                    const T* row = src + static_cast<std::size_t>(oh) * Wo;
                    T* dst = xc + static_cast<std::size_t>(ih) * W;
                    if (stride == 1) {
                        const int lo = std::clamp(pad - kj, 0, Wo);
                        const int hi = std::clamp(W + pad - kj, lo, Wo);
                        T* d = dst - pad + kj;
                        for (int ow = lo; ow < hi; ++ow) {
                            d[ow] += row[ow];
                        }
                        continue;
                    }
                    for (int ow = 0; ow < Wo; ++ow) {
                        const int iw = ow * stride - pad + kj;
                        if (iw >= 0 && iw < W) {
                            dst[iw] += row[ow];
                        }
                    }
                }
            }
        }
    }
}

/// Interpolation taps for one axis of a half-pixel-centre bilinear resize.
struct Taps {
    std::vector<int> i0, i1;
    std::vector<double> w1;  // weight of i1; i0 gets 1 - w1
};

Taps make_taps(int in, int out) {
    Taps t;
    t.i0.resize(static_cast<std::size_t>(out));
    t.i1.resize(static_cast<std::size_t>(out));
    t.w1.resize(static_cast<std::size_t>(out));
    const double scale = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
        double src = (o + 0.5) * scale - 0.5;
        if (src < 0.0) src = 0.0;
        int i0 = static_cast<int>(src);
        if (i0 > in - 1) i0 = in - 1;
        const int i1 = std::min(i0 + 1, in - 1);
        t.i0[static_cast<std::size_t>(o)] = i0;
        t.i1[static_cast<std::size_t>(o)] = i1;
        t.w1[static_cast<std::size_t>(o)] = src - i0;
    }
    return t;
}

int bin_start(int i, int in, int bins) { return (i * in) / bins; }
int bin_end(int i, int in, int bins) { return ((i + 1) * in + bins - 1) / bins; }

}  // namespace

KinkRecorder::KinkRecorder() : previous_(g_kink) { g_kink = this; }

KinkRecorder::~KinkRecorder() { g_kink = previous_; }

KinkRecorder* KinkRecorder::active() { return g_kink; }

void KinkRecorder::add(std::uint64_t word) {
    hash_ ^= word + 0x9E3779B97F4A7C15ULL + (hash_ << 6) + (hash_ >> 2);
    hash_ = (hash_ ^ (hash_ >> 31)) * 0xBF58476D1CE4E5B9ULL;
}

// ---------------------------------------------------------------------------
// Conv2d

template <typename T>
Conv2d<T>::Conv2d(const std::string& name, int in_channels, int out_channels, int kernel, int stride, int pad,
                  bool with_bias)
    : in_(in_channels), out_(out_channels), k_(kernel), stride_(stride), pad_(pad), has_bias_(with_bias) {
    if (in_channels < 1 || out_channels < 1 || kernel < 1 || stride < 1 || pad < 0) {
        throw ShapeError("conv " + name + ": invalid geometry");
    }
    weight = Param<T>{name + ".weight", Tensor<T>(out_, in_, k_, k_), Tensor<T>(out_, in_, k_, k_), true};
    bias = Param<T>{name + ".bias", Tensor<T>(1, out_, 1, 1), Tensor<T>(1, out_, 1, 1), true};
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x, Mode, Cache* cache) {
    if (x.c() != in_) {
        throw ShapeError(weight.name + ": expected " + std::to_string(in_) + " input channels, got " +
                         std::to_string(x.c()));
    }
    const int Ho = out_size(x.h());
    const int Wo = out_size(x.w());
    if (Ho < 1 || Wo < 1) {
        throw ShapeError(weight.name + ": input " + x.shape().str() + " too small");
    }
    const int K = in_ * k_ * k_;
    const int P = Ho * Wo;
    Tensor<T> y(x.n(), out_, Ho, Wo);
    CMapR<T> Wm(weight.value.data(), out_, K);
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> b(bias.value.data(), out_);
    const bool pointwise = k_ == 1 && stride_ == 1 && pad_ == 0;
    std::vector<T> col(pointwise ? 0 : static_cast<std::size_t>(K) * P);
    for (int n = 0; n < x.n(); ++n) {
        const T* colp = x.sample(n);
        if (!pointwise) {
            im2col(x.sample(n), in_, x.h(), x.w(), k_, stride_, pad_, Ho, Wo, col.data());
            colp = col.data();
        }
        MapR<T> Y(y.sample(n), out_, P);
        Y.noalias() = Wm * CMapR<T>(colp, K, P);
        if (has_bias_) {
            Y.colwise() += b;
        }
    }
    if (cache != nullptr) {
        cache->input = x;
    }
    return y;
}

template <typename T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& dy, const Cache& cache, bool need_dx) {
    const Tensor<T>& x = cache.input;
    const int Ho = dy.h();
    const int Wo = dy.w();
    const int K = in_ * k_ * k_;
    const int P = Ho * Wo;
    CMapR<T> Wm(weight.value.data(), out_, K);
    MapR<T> dW(weight.grad.data(), out_, K);
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> db(bias.grad.data(), out_);
    const bool pointwise = k_ == 1 && stride_ == 1 && pad_ == 0;
    std::vector<T> col(pointwise ? 0 : static_cast<std::size_t>(K) * P);
    std::vector<T> dcol(pointwise ? 0 : static_cast<std::size_t>(K) * P);
    Tensor<T> dx;
    if (need_dx) {
        dx = Tensor<T>(x.shape());
    }
    for (int n = 0; n < dy.n(); ++n) {
        CMapR<T> dY(dy.sample(n), out_, P);
        const T* colp = x.sample(n);
        if (!pointwise) {
            im2col(x.sample(n), in_, x.h(), x.w(), k_, stride_, pad_, Ho, Wo, col.data());
            colp = col.data();
        }
        dW.noalias() += dY * CMapR<T>(colp, K, P).transpose();
        if (has_bias_) {
            // fixed-order loop: Eigen's vectorized reduction order depends on pointer alignment
            for (int o = 0; o < out_; ++o) {
                const T* row = dy.sample(n) + static_cast<std::size_t>(o) * P;
                double s = 0.0;
                for (int p = 0; p < P; ++p) s += row[p];
                db[o] += static_cast<T>(s);
            }
        }
        if (need_dx) {
            if (pointwise) {
                MapR<T>(dx.sample(n), K, P).noalias() = Wm.transpose() * dY;
            } else {
                MapR<T>(dcol.data(), K, P).noalias() = Wm.transpose() * dY;
                col2im(dcol.data(), in_, x.h(), x.w(), k_, stride_, pad_, Ho, Wo, dx.sample(n));
            }
        }
    }
    return dx;
}

template <typename T>
void Conv2d<T>::for_each_param(const ParamVisitor<T>& fn) {
    fn(weight);
    if (has_bias_) {
        fn(bias);
    }
}

// ---------------------------------------------------------------------------
// BatchNorm2d

template <typename T>
BatchNorm2d<T>::BatchNorm2d(const std::string& name, int channels, double momentum, double eps)
    : channels_(channels), momentum_(momentum), eps_(eps) {
    const Shape s{1, channels, 1, 1};
    gamma = Param<T>{name + ".gamma", Tensor<T>(s, T(1)), Tensor<T>(s), true};
    beta = Param<T>{name + ".beta", Tensor<T>(s), Tensor<T>(s), true};
    running_mean = Param<T>{name + ".running_mean", Tensor<T>(s), Tensor<T>(s), false};
    running_var = Param<T>{name + ".running_var", Tensor<T>(s, T(1)), Tensor<T>(s), false};
}

template <typename T>
Tensor<T> BatchNorm2d<T>::forward(const Tensor<T>& x, Mode mode, Cache* cache) {
    if (x.c() != channels_) {
        throw ShapeError(gamma.name + ": channel mismatch");
    }
    const std::size_t plane = x.shape().plane();
    const std::size_t M = plane * static_cast<std::size_t>(x.n());
    Tensor<T> y(x.shape());
    std::vector<T> inv_std(static_cast<std::size_t>(channels_));
    Tensor<T> xhat;
    if (cache != nullptr) {
        xhat = Tensor<T>(x.shape());
    }
    for (int c = 0; c < channels_; ++c) {
        double mean = 0.0;
        double var = 0.0;
        if (mode == Mode::train) {
            for (int n = 0; n < x.n(); ++n) {
                const T* p = x.plane(n, c);
                for (std::size_t i = 0; i < plane; ++i) mean += p[i];
            }
            mean /= static_cast<double>(M);
            for (int n = 0; n < x.n(); ++n) {
                const T* p = x.plane(n, c);
                for (std::size_t i = 0; i < plane; ++i) {
                    const double d = p[i] - mean;
                    var += d * d;
                }
            }
            var /= static_cast<double>(M);
            const double unbiased = M > 1 ? var * static_cast<double>(M) / static_cast<double>(M - 1) : var;
            running_mean.value[c] = static_cast<T>((1.0 - momentum_) * running_mean.value[c] + momentum_ * mean);
            running_var.value[c] = static_cast<T>((1.0 - momentum_) * running_var.value[c] + momentum_ * unbiased);
        } else {
            mean = running_mean.value[c];
            var = running_var.value[c];
        }
        const T istd = static_cast<T>(1.0 / std::sqrt(var + eps_));
        inv_std[static_cast<std::size_t>(c)] = istd;
        const T g = gamma.value[c];
        const T b = beta.value[c];
        const T m = static_cast<T>(mean);
        for (int n = 0; n < x.n(); ++n) {
            const T* p = x.plane(n, c);
            T* q = y.plane(n, c);
            T* h = cache != nullptr ? xhat.plane(n, c) : nullptr;
            for (std::size_t i = 0; i < plane; ++i) {
                const T xh = (p[i] - m) * istd;
                q[i] = g * xh + b;
                if (h != nullptr) h[i] = xh;
            }
        }
    }
    if (cache != nullptr) {
        cache->xhat = std::move(xhat);
        cache->inv_std = std::move(inv_std);
        cache->mode = mode;
    }
    return y;
}

template <typename T>
Tensor<T> BatchNorm2d<T>::backward(const Tensor<T>& dy, const Cache& cache, bool need_dx) {
    const std::size_t plane = dy.shape().plane();
    const double M = static_cast<double>(plane) * dy.n();
    Tensor<T> dx;
    if (need_dx) {
        dx = Tensor<T>(dy.shape());
    }
    for (int c = 0; c < channels_; ++c) {
        double sum_dy = 0.0;
        double sum_dy_xhat = 0.0;
        for (int n = 0; n < dy.n(); ++n) {
            const T* g = dy.plane(n, c);
            const T* h = cache.xhat.plane(n, c);
            for (std::size_t i = 0; i < plane; ++i) {
                sum_dy += g[i];
                sum_dy_xhat += static_cast<double>(g[i]) * h[i];
            }
        }
        gamma.grad[c] += static_cast<T>(sum_dy_xhat);
        beta.grad[c] += static_cast<T>(sum_dy);
        if (!need_dx) {
            continue;
        }
        const T scale = gamma.value[c] * cache.inv_std[static_cast<std::size_t>(c)];
        if (cache.mode == Mode::eval) {
            for (int n = 0; n < dy.n(); ++n) {
                const T* g = dy.plane(n, c);
                T* d = dx.plane(n, c);
                for (std::size_t i = 0; i < plane; ++i) d[i] = g[i] * scale;
            }
            continue;
        }
        const T mean_dy = static_cast<T>(sum_dy / M);
        const T mean_dy_xhat = static_cast<T>(sum_dy_xhat / M);
        for (int n = 0; n < dy.n(); ++n) {
            const T* g = dy.plane(n, c);
            const T* h = cache.xhat.plane(n, c);
            T* d = dx.plane(n, c);
            for (std::size_t i = 0; i < plane; ++i) {
                d[i] = scale * (g[i] - mean_dy - h[i] * mean_dy_xhat);
            }
        }
    }
    return dx;
}

template <typename T>
void BatchNorm2d<T>::for_each_param(const ParamVisitor<T>& fn) {
    fn(gamma);
    fn(beta);
    fn(running_mean);
    fn(running_var);
}

// ---------------------------------------------------------------------------
// Activation

template <typename T>
Tensor<T> Activation<T>::forward(const Tensor<T>& x, Mode, Cache* cache) {
    Tensor<T> y(x.shape());
    const T slope = static_cast<T>(slope_);
    const T* xp = x.data();
    T* yp = y.data();
    const std::size_t n = x.size();
    switch (kind_) {
        case ActivationKind::relu:
            for (std::size_t i = 0; i < n; ++i) yp[i] = xp[i] > T(0) ? xp[i] : T(0);
            record_branches(n, [xp](std::size_t i) { return xp[i] > T(0); });
            break;
        case ActivationKind::leaky_relu:
            for (std::size_t i = 0; i < n; ++i) yp[i] = xp[i] > T(0) ? xp[i] : slope * xp[i];
            record_branches(n, [xp](std::size_t i) { return xp[i] > T(0); });
            break;
        case ActivationKind::sigmoid:
            for (std::size_t i = 0; i < n; ++i) {
                const T v = xp[i];
                yp[i] = v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
            }
            break;
    }
    if (cache != nullptr) {
        cache->output = y;
    }
    return y;
}

template <typename T>
Tensor<T> Activation<T>::backward(const Tensor<T>& dy, const Cache& cache, bool need_dx) {
    if (!need_dx) {
        return {};
    }
    Tensor<T> dx(dy.shape());
    const T slope = static_cast<T>(slope_);
    const T* y = cache.output.data();
    const T* g = dy.data();
    T* d = dx.data();
    const std::size_t n = dy.size();
    switch (kind_) {
        case ActivationKind::relu:
            for (std::size_t i = 0; i < n; ++i) d[i] = y[i] > T(0) ? g[i] : T(0);
            break;
        case ActivationKind::leaky_relu:
            for (std::size_t i = 0; i < n; ++i) d[i] = y[i] > T(0) ? g[i] : slope * g[i];
            break;
        case ActivationKind::sigmoid:
            for (std::size_t i = 0; i < n; ++i) d[i] = g[i] * y[i] * (T(1) - y[i]);
            break;
    }
    return dx;
}

// ---------------------------------------------------------------------------
// ProbClamp

template <typename T>
Tensor<T> ProbClamp<T>::forward(const Tensor<T>& x, Mode, Cache* cache) {
    const T lo = static_cast<T>(eps_);
    const T hi = static_cast<T>(1.0 - eps_);
    Tensor<T> y(x.shape());
    if (cache != nullptr) {
        cache->pass.assign(x.size(), 1);
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
        const T v = x[i];
        if (v < lo || v > hi) {
            y[i] = v < lo ? lo : hi;
            if (cache != nullptr) cache->pass[i] = 0;
        } else {
            y[i] = v;
        }
    }
    record_branches(x.size(), [&x, lo, hi](std::size_t i) { return x[i] < lo || x[i] > hi; });
    return y;
}

template <typename T>
Tensor<T> ProbClamp<T>::backward(const Tensor<T>& dy, const Cache& cache, bool need_dx) {
    if (!need_dx) {
        return {};
    }
    Tensor<T> dx(dy.shape());
    for (std::size_t i = 0; i < dy.size(); ++i) {
        dx[i] = cache.pass[i] ? dy[i] : T(0);
    }
    return dx;
}

// ---------------------------------------------------------------------------
// MaxPool2

template <typename T>
Tensor<T> MaxPool2<T>::forward(const Tensor<T>& x, Mode, Cache* cache) {
    if (x.h() % 2 != 0 || x.w() % 2 != 0) {
        throw ShapeError("maxpool: odd input " + x.shape().str());
    }
    const int Ho = x.h() / 2;
    const int Wo = x.w() / 2;
    Tensor<T> y(x.n(), x.c(), Ho, Wo);
    if (cache != nullptr) {
        cache->input_shape = x.shape();
        cache->argmax.resize(y.size());
    }
    std::size_t o = 0;
    for (int n = 0; n < x.n(); ++n) {
        for (int c = 0; c < x.c(); ++c) {
            const T* p = x.plane(n, c);
            for (int i = 0; i < Ho; ++i) {
                for (int j = 0; j < Wo; ++j, ++o) {
                    int best = (2 * i) * x.w() + 2 * j;
                    for (int di = 0; di < 2; ++di) {
                        for (int dj = 0; dj < 2; ++dj) {
                            const int idx = (2 * i + di) * x.w() + 2 * j + dj;
                            if (p[idx] > p[best]) best = idx;
                        }
                    }
                    y[o] = p[best];
                    if (cache != nullptr) cache->argmax[o] = best;
                    if (KinkRecorder* r = g_kink) r->add(static_cast<std::uint64_t>(best));
                }
            }
        }
    }
    return y;
}

template <typename T>
Tensor<T> MaxPool2<T>::backward(const Tensor<T>& dy, const Cache& cache, bool need_dx) {
    if (!need_dx) {
        return {};
    }
    Tensor<T> dx(cache.input_shape);
    const std::size_t per_plane = dy.shape().plane();
    for (std::size_t o = 0; o < dy.size(); ++o) {
        const std::size_t plane_index = o / per_plane;
        dx[plane_index * cache.input_shape.plane() + static_cast<std::size_t>(cache.argmax[o])] += dy[o];
    }
    return dx;
}

// ---------------------------------------------------------------------------
// BilinearResize

template <typename T>
Tensor<T> BilinearResize<T>::forward(const Tensor<T>& x, Mode, Cache* cache) {
    const int Ho = factor_ > 0 ? x.h() * factor_ : out_h_;
    const int Wo = factor_ > 0 ? x.w() * factor_ : out_w_;
    if (Ho < 1 || Wo < 1) {
        throw ShapeError("bilinear resize: output size not set");
    }
    const Taps ty = make_taps(x.h(), Ho);
    const Taps tx = make_taps(x.w(), Wo);
    Tensor<T> y(x.n(), x.c(), Ho, Wo);
    for (int n = 0; n < x.n(); ++n) {
        for (int c = 0; c < x.c(); ++c) {
            const T* p = x.plane(n, c);
            T* q = y.plane(n, c);
            for (int i = 0; i < Ho; ++i) {
                const T wy = static_cast<T>(ty.w1[i]);
                const T* r0 = p + static_cast<std::size_t>(ty.i0[i]) * x.w();
                const T* r1 = p + static_cast<std::size_t>(ty.i1[i]) * x.w();
                for (int j = 0; j < Wo; ++j) {
                    const T wx = static_cast<T>(tx.w1[j]);
                    const int a = tx.i0[j];
                    const int b = tx.i1[j];
                    const T top = r0[a] + wx * (r0[b] - r0[a]);
                    const T bot = r1[a] + wx * (r1[b] - r1[a]);
                    q[static_cast<std::size_t>(i) * Wo + j] = top + wy * (bot - top);
                }
            }
        }
    }
    if (cache != nullptr) {
        cache->input_shape = x.shape();
    }
    return y;
}

template <typename T>
Tensor<T> BilinearResize<T>::backward(const Tensor<T>& dy, const Cache& cache, bool need_dx) {
    if (!need_dx) {
        return {};
    }
    const Shape& in = cache.input_shape;
    const Taps ty = make_taps(in.h, dy.h());
    const Taps tx = make_taps(in.w, dy.w());
    Tensor<T> dx(in);
    for (int n = 0; n < dy.n(); ++n) {
        for (int c = 0; c < dy.c(); ++c) {
            const T* g = dy.plane(n, c);
            T* d = dx.plane(n, c);
            for (int i = 0; i < dy.h(); ++i) {
                const T wy = static_cast<T>(ty.w1[i]);
                T* r0 = d + static_cast<std::size_t>(ty.i0[i]) * in.w;
                T* r1 = d + static_cast<std::size_t>(ty.i1[i]) * in.w;
                for (int j = 0; j < dy.w(); ++j) {
                    const T wx = static_cast<T>(tx.w1[j]);
                    const T v = g[static_cast<std::size_t>(i) * dy.w() + j];
                    const int a = tx.i0[j];
                    const int b = tx.i1[j];
                    r0[a] += v * (T(1) - wy) * (T(1) - wx);
                    r0[b] += v * (T(1) - wy) * wx;
                    r1[a] += v * wy * (T(1) - wx);
                    r1[b] += v * wy * wx;
                }
            }
        }
    }
    return dx;
}

// ---------------------------------------------------------------------------
// AdaptiveAvgPool

template <typename T>
Tensor<T> AdaptiveAvgPool<T>::forward(const Tensor<T>& x, Mode, Cache* cache) {
    if (x.h() < bins_ || x.w() < bins_) {
        throw ShapeError("adaptive pool: input " + x.shape().str() + " smaller than " + std::to_string(bins_) +
                         " bins");
    }
    Tensor<T> y(x.n(), x.c(), bins_, bins_);
    for (int n = 0; n < x.n(); ++n) {
        for (int c = 0; c < x.c(); ++c) {
            const T* p = x.plane(n, c);
            for (int bi = 0; bi < bins_; ++bi) {
                const int r0 = bin_start(bi, x.h(), bins_);
                const int r1 = bin_end(bi, x.h(), bins_);
                for (int bj = 0; bj < bins_; ++bj) {
                    const int c0 = bin_start(bj, x.w(), bins_);
                    const int c1 = bin_end(bj, x.w(), bins_);
                    T acc = 0;
                    for (int r = r0; r < r1; ++r) {
                        for (int q = c0; q < c1; ++q) acc += p[static_cast<std::size_t>(r) * x.w() + q];
                    }
                    y(n, c, bi, bj) = acc / static_cast<T>((r1 - r0) * (c1 - c0));
                }
            }
        }
    }
    if (cache != nullptr) {
        cache->input_shape = x.shape();
    }
    return y;
}

template <typename T>
Tensor<T> AdaptiveAvgPool<T>::backward(const Tensor<T>& dy, const Cache& cache, bool need_dx) {
    if (!need_dx) {
        return {};
    }
    const Shape& in = cache.input_shape;
    Tensor<T> dx(in);
    for (int n = 0; n < in.n; ++n) {
        for (int c = 0; c < in.c; ++c) {
            T* d = dx.plane(n, c);
            for (int bi = 0; bi < bins_; ++bi) {
                const int r0 = bin_start(bi, in.h, bins_);
                const int r1 = bin_end(bi, in.h, bins_);
                for (int bj = 0; bj < bins_; ++bj) {
                    const int c0 = bin_start(bj, in.w, bins_);
                    const int c1 = bin_end(bj, in.w, bins_);
                    const T g = dy(n, c, bi, bj) / static_cast<T>((r1 - r0) * (c1 - c0));
                    for (int r = r0; r < r1; ++r) {
                        for (int q = c0; q < c1; ++q) d[static_cast<std::size_t>(r) * in.w + q] += g;
                    }
                }
            }
        }
    }
    return dx;
}

// ---------------------------------------------------------------------------
// Sequential

template <typename T>
Tensor<T> Sequential<T>::forward(const Tensor<T>& x, Mode mode, Trace* trace) {
    if (trace != nullptr) {
        trace->clear();
        trace->reserve(layers_.size());
    }
    Tensor<T> h = x;
    for (auto& layer : layers_) {
        std::visit(
            [&](auto& l) {
                using L = std::decay_t<decltype(l)>;
                if (trace != nullptr) {
                    typename L::Cache c;
                    h = l.forward(h, mode, &c);
                    trace->emplace_back(std::move(c));
                } else {
                    h = l.forward(h, mode, nullptr);
                }
            },
            layer);
    }
    return h;
}

template <typename T>
Tensor<T> Sequential<T>::backward(const Tensor<T>& dy, const Trace& trace, bool need_dx) {
    if (trace.size() != layers_.size()) {
        throw ShapeError("sequential backward: trace does not match layer stack");
    }
    Tensor<T> g = dy;
    for (std::size_t i = layers_.size(); i-- > 0;) {
        const bool want = need_dx || i > 0;
        std::visit(
            [&](auto& l) {
                using L = std::decay_t<decltype(l)>;
                g = l.backward(g, std::get<typename L::Cache>(trace[i]), want);
            },
            layers_[i]);
    }
    return g;
}

template <typename T>
void Sequential<T>::for_each_param(const ParamVisitor<T>& fn) {
    for (auto& layer : layers_) {
        std::visit([&](auto& l) { l.for_each_param(fn); }, layer);
    }
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> concat_channels(const std::vector<const Tensor<T>*>& parts) {
    if (parts.empty()) {
        return {};
    }
    const Shape s0 = parts.front()->shape();
    int C = 0;
    for (const auto* p : parts) {
        if (p->n() != s0.n || p->h() != s0.h || p->w() != s0.w) {
            throw ShapeError("concat: spatial/batch mismatch");
        }
        C += p->c();
    }
    Tensor<T> out(s0.n, C, s0.h, s0.w);
    for (int n = 0; n < s0.n; ++n) {
        T* dst = out.sample(n);
        for (const auto* p : parts) {
            const std::size_t count = static_cast<std::size_t>(p->c()) * s0.plane();
            std::copy(p->sample(n), p->sample(n) + count, dst);
            dst += count;
        }
    }
    return out;
}

template <typename T>
Tensor<T> channel_slice(const Tensor<T>& t, int begin, int count) {
    Tensor<T> out(t.n(), count, t.h(), t.w());
    const std::size_t plane = t.shape().plane();
    for (int n = 0; n < t.n(); ++n) {
        std::copy(t.plane(n, begin), t.plane(n, begin) + plane * count, out.sample(n));
    }
    return out;
}

#define CROWDSCA_INSTANTIATE(T)                                                          \
    template class Conv2d<T>;                                                            \
    template class BatchNorm2d<T>;                                                       \
    template class Activation<T>;                                                        \
    template class ProbClamp<T>;                                                         \
    template class MaxPool2<T>;                                                          \
    template class BilinearResize<T>;                                                    \
    template class AdaptiveAvgPool<T>;                                                   \
    template class Sequential<T>;                                                        \
    template Tensor<T> concat_channels<T>(const std::vector<const Tensor<T>*>& parts); \
    template Tensor<T> channel_slice<T>(const Tensor<T>& t, int begin, int count);

CROWDSCA_INSTANTIATE(float)
CROWDSCA_INSTANTIATE(double)

#undef CROWDSCA_INSTANTIATE

}  // namespace crowdsca
