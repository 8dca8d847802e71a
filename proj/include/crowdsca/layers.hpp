#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <variant>
#include <vector>

#include "crowdsca/tensor.hpp"

namespace crowdsca {

enum class Mode { train, eval };

/// While an instance is alive on a thread, piecewise-linear layers (ReLU sign,
/// max-pool argmax, clamp activity) fold their branch choices into its signature.
/// Finite-difference checks compare signatures to detect steps that cross a kink.
class KinkRecorder {
public:
    KinkRecorder();
    ~KinkRecorder();
    KinkRecorder(const KinkRecorder&) = delete;
    KinkRecorder& operator=(const KinkRecorder&) = delete;
    [[nodiscard]] std::uint64_t signature() const { return hash_; }
    static KinkRecorder* active();
    void add(std::uint64_t word);

private:
    std::uint64_t hash_ = 0x9E3779B97F4A7C15ULL;
    KinkRecorder* previous_ = nullptr;
};

/// A named tensor with its gradient accumulator. Buffers (e.g. running
/// statistics) are stored as non-trainable params so checkpoints see them.
template <typename T>
struct Param {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
    bool trainable = true;
};

template <typename T>
using ParamVisitor = std::function<void(Param<T>&)>;

// ---------------------------------------------------------------------------

template <typename T>
class Conv2d {
public:
    struct Cache {
        Tensor<T> input;
    };

    Conv2d() = default;
    /// with_bias = false for convolutions feeding a normalization layer, whose shift makes a bias redundant.
    Conv2d(const std::string& name, int in_channels, int out_channels, int kernel, int stride, int pad,
           bool with_bias = true);

    Tensor<T> forward(const Tensor<T>& x, Mode mode, Cache* cache);
    Tensor<T> backward(const Tensor<T>& dy, const Cache& cache, bool need_dx);
    void for_each_param(const ParamVisitor<T>& fn);

    [[nodiscard]] int in_channels() const { return in_; }
    [[nodiscard]] int out_channels() const { return out_; }
    [[nodiscard]] int kernel() const { return k_; }
    [[nodiscard]] int stride() const { return stride_; }
    [[nodiscard]] int pad() const { return pad_; }
    [[nodiscard]] bool has_bias() const { return has_bias_; }
    [[nodiscard]] int out_size(int n) const { return (n + 2 * pad_ - k_) / stride_ + 1; }

    Param<T> weight;  // (out, in, k, k)
    Param<T> bias;    // (1, out, 1, 1)

private:
    int in_ = 0;
    int out_ = 0;
    int k_ = 1;
    int stride_ = 1;
    int pad_ = 0;
    bool has_bias_ = true;
};

/// Per-channel normalization over (batch, rows, cols) with running statistics for eval mode.
template <typename T>
class BatchNorm2d {
public:
    struct Cache {
        Tensor<T> xhat;
        std::vector<T> inv_std;
        Mode mode = Mode::train;
    };

    BatchNorm2d() = default;
    BatchNorm2d(const std::string& name, int channels, double momentum = 0.1, double eps = 1e-5);

    Tensor<T> forward(const Tensor<T>& x, Mode mode, Cache* cache);
    Tensor<T> backward(const Tensor<T>& dy, const Cache& cache, bool need_dx);
    void for_each_param(const ParamVisitor<T>& fn);

    Param<T> gamma;
    Param<T> beta;
    Param<T> running_mean;
    Param<T> running_var;

private:
    int channels_ = 0;
    double momentum_ = 0.1;
    double eps_ = 1e-5;
};

enum class ActivationKind { relu, leaky_relu, sigmoid };

template <typename T>
class Activation {
public:
    struct Cache {
        Tensor<T> output;
    };

    Activation() = default;
    explicit Activation(ActivationKind kind, double slope = 0.2) : kind_(kind), slope_(slope) {}

    Tensor<T> forward(const Tensor<T>& x, Mode mode, Cache* cache);
    Tensor<T> backward(const Tensor<T>& dy, const Cache& cache, bool need_dx);
    void for_each_param(const ParamVisitor<T>&) {}

    [[nodiscard]] ActivationKind kind() const { return kind_; }

private:
    ActivationKind kind_ = ActivationKind::relu;
    double slope_ = 0.2;
};

/// Clamps into [eps, 1 - eps]; the gradient is zero where clamping is active.
template <typename T>
class ProbClamp {
public:
    struct Cache {
        std::vector<unsigned char> pass;
    };

    ProbClamp() = default;
    explicit ProbClamp(double eps) : eps_(eps) {}

    Tensor<T> forward(const Tensor<T>& x, Mode mode, Cache* cache);
    Tensor<T> backward(const Tensor<T>& dy, const Cache& cache, bool need_dx);
    void for_each_param(const ParamVisitor<T>&) {}

private:
    double eps_ = 1e-7;
};

template <typename T>
class MaxPool2 {
public:
    struct Cache {
        Shape input_shape;
        std::vector<int> argmax;
    };

    Tensor<T> forward(const Tensor<T>& x, Mode mode, Cache* cache);
    Tensor<T> backward(const Tensor<T>& dy, const Cache& cache, bool need_dx);
    void for_each_param(const ParamVisitor<T>&) {}
};

/// Bilinear resampling with half-pixel centres (align_corners = false).
/// Either a fixed integer scale factor or an explicit output size.
template <typename T>
class BilinearResize {
public:
    struct Cache {
        Shape input_shape;
    };

    BilinearResize() = default;
    explicit BilinearResize(int factor) : factor_(factor) {}
    BilinearResize(int out_h, int out_w) : out_h_(out_h), out_w_(out_w) {}

    Tensor<T> forward(const Tensor<T>& x, Mode mode, Cache* cache);
    Tensor<T> backward(const Tensor<T>& dy, const Cache& cache, bool need_dx);
    void for_each_param(const ParamVisitor<T>&) {}

    void set_output_size(int out_h, int out_w) {
        factor_ = 0;
        out_h_ = out_h;
        out_w_ = out_w;
    }

private:
    int factor_ = 0;
    int out_h_ = 0;
    int out_w_ = 0;
};

/// Average pooling onto a fixed bins x bins grid (adaptive bin edges).
template <typename T>
class AdaptiveAvgPool {
public:
    struct Cache {
        Shape input_shape;
    };

    AdaptiveAvgPool() = default;
    explicit AdaptiveAvgPool(int bins) : bins_(bins) {}

    Tensor<T> forward(const Tensor<T>& x, Mode mode, Cache* cache);
    Tensor<T> backward(const Tensor<T>& dy, const Cache& cache, bool need_dx);
    void for_each_param(const ParamVisitor<T>&) {}

    [[nodiscard]] int bins() const { return bins_; }

private:
    int bins_ = 1;
};

// ---------------------------------------------------------------------------

template <typename T>
using Layer = std::variant<Conv2d<T>, BatchNorm2d<T>, Activation<T>, ProbClamp<T>, MaxPool2<T>,
                           BilinearResize<T>, AdaptiveAvgPool<T>>;

template <typename T>
using LayerCache =
    std::variant<typename Conv2d<T>::Cache, typename BatchNorm2d<T>::Cache, typename Activation<T>::Cache,
                 typename ProbClamp<T>::Cache, typename MaxPool2<T>::Cache, typename BilinearResize<T>::Cache,
                 typename AdaptiveAvgPool<T>::Cache>;

/// Ordered layer stack. forward() records one cache per layer into a trace
/// so the same stack can be run several times before backward().
template <typename T>
class Sequential {
public:
    using Trace = std::vector<LayerCache<T>>;

    Sequential() = default;

    template <typename L>
    L& add(L layer) {
        layers_.emplace_back(std::move(layer));
        return std::get<L>(layers_.back());
    }

    /// trace == nullptr runs without recording (inference).
    Tensor<T> forward(const Tensor<T>& x, Mode mode, Trace* trace);
    /// Accumulates parameter gradients; returns d(loss)/d(input) when need_dx.
    Tensor<T> backward(const Tensor<T>& dy, const Trace& trace, bool need_dx);
    void for_each_param(const ParamVisitor<T>& fn);

    [[nodiscard]] std::size_t size() const { return layers_.size(); }
    std::vector<Layer<T>>& layers() { return layers_; }
    const std::vector<Layer<T>>& layers() const { return layers_; }

private:
    std::vector<Layer<T>> layers_;
};

/// Channel concatenation / split helpers.
template <typename T>
Tensor<T> concat_channels(const std::vector<const Tensor<T>*>& parts);
template <typename T>
Tensor<T> channel_slice(const Tensor<T>& t, int begin, int count);

}  // namespace crowdsca
