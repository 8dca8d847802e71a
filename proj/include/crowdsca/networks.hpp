#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "crowdsca/layers.hpp"
#include "crowdsca/tensor.hpp"

namespace crowdsca {

/// Widths and depths of the four sub-networks. Feature stride is fixed at 8:
/// the first three extractor blocks end in a 2x max-pool, later blocks do not.
struct ArchConfig {
    std::vector<int> extractor_widths{16, 32, 64};
    std::vector<int> extractor_convs{2, 2, 2};
    std::vector<int> density_widths{32, 16, 8};  // one conv3x3 + 2x upsample stage each
    int pyramid_width = 8;
    std::vector<int> pyramid_bins{1, 2, 3, 6};
    std::vector<int> discriminator_widths{16, 32, 32, 32};  // four 4x4 stride-2 convs
    double leaky_slope = 0.2;
    double prob_eps = 1e-7;

    /// Throws ConfigError on zero widths or stage counts that break the stride contract.
    void validate() const;
    /// Canonical "key=value;..." string; used for config hashing and checkpoint metadata.
    [[nodiscard]] std::string describe() const;
    [[nodiscard]] int feature_channels() const { return extractor_widths.back(); }

    /// VGG16-BN front end truncated at conv4_3 (stride 8) with wider heads.
    static ArchConfig vgg16_full();
    friend bool operator==(const ArchConfig&, const ArchConfig&) = default;
};

inline constexpr int kFeatureStride = 8;
inline constexpr int kDiscriminatorStride = 16;

enum class ParamGroup { extractor, density, semantic, discriminator };
std::string_view group_prefix(ParamGroup g);  // "theta_e", "theta_c", "theta_s", "theta_d"

/// E: image (N,3,H,W) -> features (N,C_f,H/8,W/8).
template <typename T>
class FeatureExtractor {
public:
    using Trace = typename Sequential<T>::Trace;
    FeatureExtractor() = default;
    explicit FeatureExtractor(const ArchConfig& arch);

    Tensor<T> forward(const Tensor<T>& images, Mode mode, Trace* trace);
    /// Parameter gradients only; the image gradient is never needed.
    void backward(const Tensor<T>& dfeat, const Trace& trace) { net_.backward(dfeat, trace, false); }
    void for_each_param(const ParamVisitor<T>& fn) { net_.for_each_param(fn); }
    Sequential<T>& net() { return net_; }

private:
    Sequential<T> net_;
};

/// C: features -> non-negative density (N,1,H,W) via three conv3x3 + 2x upsample stages.
template <typename T>
class DensityEstimator {
public:
    using Trace = typename Sequential<T>::Trace;
    DensityEstimator() = default;
    explicit DensityEstimator(const ArchConfig& arch);

    Tensor<T> forward(const Tensor<T>& features, Mode mode, Trace* trace) { return net_.forward(features, mode, trace); }
    Tensor<T> backward(const Tensor<T>& ddensity, const Trace& trace) { return net_.backward(ddensity, trace, true); }
    void for_each_param(const ParamVisitor<T>& fn) { net_.for_each_param(fn); }
    Sequential<T>& net() { return net_; }
    /// The final 1x1 projection.
    Conv2d<T>& head();

private:
    Sequential<T> net_;
};

/// S: pyramid pooling over the feature map, fused and projected to a crowd
/// probability map at image resolution, clamped to [eps, 1 - eps].
template <typename T>
class SemanticExtractor {
public:
    struct Trace {
        Shape feature_shape;
        std::vector<typename Sequential<T>::Trace> branches;
        std::vector<typename BilinearResize<T>::Cache> branch_up;
        typename Sequential<T>::Trace head;
        typename BilinearResize<T>::Cache up;
        typename ProbClamp<T>::Cache clamp;
    };

    SemanticExtractor() = default;
    explicit SemanticExtractor(const ArchConfig& arch);

    Tensor<T> forward(const Tensor<T>& features, Mode mode, Trace* trace);
    Tensor<T> backward(const Tensor<T>& dprob, const Trace& trace);
    void for_each_param(const ParamVisitor<T>& fn);

private:
    std::vector<Sequential<T>> branches_;  // pool -> conv1x1 -> relu
    Sequential<T> head_;                   // conv1x1 -> sigmoid
    double eps_ = 1e-7;
};

/// D: four conv4x4/stride-2 + leaky layers, 1x1 projection, sigmoid, clamp.
template <typename T>
class Discriminator {
public:
    using Trace = typename Sequential<T>::Trace;
    Discriminator() = default;
    explicit Discriminator(const ArchConfig& arch);

    Tensor<T> forward(const Tensor<T>& features, Mode mode, Trace* trace);
    Tensor<T> backward(const Tensor<T>& dscore, const Trace& trace, bool need_dx) {
        return net_.backward(dscore, trace, need_dx);
    }
    void for_each_param(const ParamVisitor<T>& fn) { net_.for_each_param(fn); }

private:
    Sequential<T> net_;
};

/// All four parameter groups (the full ParamSet) plus the architecture that shaped them.
template <typename T>
struct Model {
    ArchConfig arch;
    FeatureExtractor<T> extractor;
    DensityEstimator<T> density;
    SemanticExtractor<T> semantic;
    Discriminator<T> discriminator;

    Model() = default;
    explicit Model(const ArchConfig& a);

    void for_each_param(ParamGroup g, const ParamVisitor<T>& fn);
    void for_each_param(const ParamVisitor<T>& fn);
    std::vector<Param<T>*> params(ParamGroup g);
    std::vector<Param<T>*> params();
    void zero_grad();

    /// Trainable scalar count (excludes normalization running statistics).
    std::size_t trainable_count();
};

inline constexpr double kDensityHeadStd = 1e-3;

/// Deterministic fan-in scaled (He normal) initialization; biases start at zero.
/// The final density projection uses std kDensityHeadStd instead.
template <typename T>
Model<T> init_params(const ArchConfig& arch, std::uint64_t seed);

/// Copies parameter values between precisions; architectures must match.
template <typename Dst, typename Src>
Model<Dst> convert_model(Model<Src>& src);

/// Loads theta_e/* tensors from a named-tensor file into the extractor.
/// Throws LoadError on a malformed file, unknown names, or shape mismatch.
template <typename T>
void load_pretrained_extractor(Model<T>& model, const std::filesystem::path& path);

}  // namespace crowdsca
