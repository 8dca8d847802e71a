#include "crowdsca/networks.hpp"

#include <cmath>
#include <sstream>
#include <unordered_map>

#include "crowdsca/errors.hpp"
#include "crowdsca/rng.hpp"
#include "crowdsca/tensor_file.hpp"

namespace crowdsca {

namespace {

std::uint64_t name_hash(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string join(const std::vector<int>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        out += (i ? "," : "") + std::to_string(v[i]);
    }
    return out;
}

void require_positive(const std::vector<int>& v, const char* what) {
    for (int x : v) {
        if (x < 1) {
            throw ConfigError(std::string("arch: ") + what + " entries must be >= 1");
        }
    }
}

std::string pname(ParamGroup g, const std::string& layer) { return std::string(group_prefix(g)) + "/" + layer; }

}  // namespace

std::string_view group_prefix(ParamGroup g) {
    switch (g) {
        case ParamGroup::extractor: return "theta_e";
        case ParamGroup::density: return "theta_c";
        case ParamGroup::semantic: return "theta_s";
        case ParamGroup::discriminator: return "theta_d";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// ArchConfig

void ArchConfig::validate() const {
    if (extractor_widths.size() < 3) {
        throw ConfigError("arch: extractor needs at least 3 blocks (stride 8)");
    }
    if (extractor_convs.size() != extractor_widths.size()) {
        throw ConfigError("arch: extractor_convs must list one count per extractor block");
    }
    require_positive(extractor_widths, "extractor_widths");
    require_positive(extractor_convs, "extractor_convs");
    if (density_widths.size() != 3) {
        throw ConfigError("arch: density estimator needs exactly 3 upsampling stages");
    }
    require_positive(density_widths, "density_widths");
    if (pyramid_width < 1) {
        throw ConfigError("arch: pyramid_width must be >= 1");
    }
    if (pyramid_bins.empty()) {
        throw ConfigError("arch: pyramid_bins must not be empty");
    }
    for (int b : pyramid_bins) {
        if (b < 1 || b > 8) {
            throw ConfigError("arch: pyramid bins must lie in [1, 8]");
        }
    }
    if (discriminator_widths.size() != 4) {
        throw ConfigError("arch: discriminator needs exactly 4 strided layers");
    }
    require_positive(discriminator_widths, "discriminator_widths");
    if (!(prob_eps > 0.0 && prob_eps < 0.5)) {
        throw ConfigError("arch: prob_eps must lie in (0, 0.5)");
    }
    if (!(leaky_slope >= 0.0 && leaky_slope < 1.0)) {
        throw ConfigError("arch: leaky_slope must lie in [0, 1)");
    }
}

std::string ArchConfig::describe() const {
    std::ostringstream os;
    os.precision(17);
    os << "extractor_widths=" << join(extractor_widths) << ";extractor_convs=" << join(extractor_convs)
       << ";density_widths=" << join(density_widths) << ";pyramid_width=" << pyramid_width
       << ";pyramid_bins=" << join(pyramid_bins) << ";discriminator_widths=" << join(discriminator_widths)
       << ";leaky_slope=" << leaky_slope << ";prob_eps=" << prob_eps;
    return os.str();
}

ArchConfig ArchConfig::vgg16_full() {
    ArchConfig a;
    a.extractor_widths = {64, 128, 256, 512};
    a.extractor_convs = {2, 2, 3, 3};
    a.density_widths = {256, 128, 64};
    a.pyramid_width = 128;
    a.discriminator_widths = {64, 128, 256, 512};
    return a;
}

// ---------------------------------------------------------------------------
// FeatureExtractor

template <typename T>
FeatureExtractor<T>::FeatureExtractor(const ArchConfig& arch) {
    int in = 3;
    for (std::size_t b = 0; b < arch.extractor_widths.size(); ++b) {
        const int w = arch.extractor_widths[b];
        for (int i = 0; i < arch.extractor_convs[b]; ++i) {
            const std::string tag = "b" + std::to_string(b + 1) + "_" + std::to_string(i + 1);
            net_.add(Conv2d<T>(pname(ParamGroup::extractor, "conv" + tag), in, w, 3, 1, 1, false));
            net_.add(BatchNorm2d<T>(pname(ParamGroup::extractor, "bn" + tag), w));
            net_.add(Activation<T>(ActivationKind::relu));
            in = w;
        }
        if (b < 3) {
            net_.add(MaxPool2<T>{});
        }
    }
}

template <typename T>
Tensor<T> FeatureExtractor<T>::forward(const Tensor<T>& images, Mode mode, Trace* trace) {
    if (images.c() != 3) {
        throw ShapeError("feature extractor expects 3-channel images, got " + images.shape().str());
    }
    if (images.h() % kFeatureStride != 0 || images.w() % kFeatureStride != 0 || images.h() < 8 || images.w() < 8) {
        throw ShapeError("feature extractor input " + std::to_string(images.h()) + "x" + std::to_string(images.w()) +
                         " is not a multiple of 8");
    }
    return net_.forward(images, mode, trace);
}

// ---------------------------------------------------------------------------
// DensityEstimator

template <typename T>
DensityEstimator<T>::DensityEstimator(const ArchConfig& arch) {
    int in = arch.feature_channels();
    for (std::size_t s = 0; s < arch.density_widths.size(); ++s) {
        const int w = arch.density_widths[s];
        net_.add(Conv2d<T>(pname(ParamGroup::density, "conv" + std::to_string(s + 1)), in, w, 3, 1, 1));
        net_.add(Activation<T>(ActivationKind::relu));
        net_.add(BilinearResize<T>(2));
        in = w;
    }
    net_.add(Conv2d<T>(pname(ParamGroup::density, "head"), in, 1, 1, 1, 0));
    net_.add(Activation<T>(ActivationKind::relu));
}

template <typename T>
Conv2d<T>& DensityEstimator<T>::head() {
    return std::get<Conv2d<T>>(net_.layers()[net_.size() - 2]);
}

// ---------------------------------------------------------------------------
// SemanticExtractor

template <typename T>
SemanticExtractor<T>::SemanticExtractor(const ArchConfig& arch) : eps_(arch.prob_eps) {
    const int cf = arch.feature_channels();
    for (int bins : arch.pyramid_bins) {
        Sequential<T> branch;
        branch.add(AdaptiveAvgPool<T>(bins));
        branch.add(Conv2d<T>(pname(ParamGroup::semantic, "pool" + std::to_string(bins)), cf, arch.pyramid_width, 1, 1, 0));
        branch.add(Activation<T>(ActivationKind::relu));
        branches_.push_back(std::move(branch));
    }
    const int fused = cf + static_cast<int>(arch.pyramid_bins.size()) * arch.pyramid_width;
    head_.add(Conv2d<T>(pname(ParamGroup::semantic, "fuse"), fused, 1, 1, 1, 0));
    head_.add(Activation<T>(ActivationKind::sigmoid));
}

template <typename T>
Tensor<T> SemanticExtractor<T>::forward(const Tensor<T>& f, Mode mode, Trace* trace) {
    if (f.h() < 8 || f.w() < 8) {
        throw ConfigError("semantic extractor needs feature maps of at least 8x8, got " + std::to_string(f.h()) + "x" +
                          std::to_string(f.w()));
    }
    if (trace != nullptr) {
        trace->feature_shape = f.shape();
        trace->branches.assign(branches_.size(), {});
        trace->branch_up.assign(branches_.size(), {});
    }
    std::vector<Tensor<T>> ups;
    ups.reserve(branches_.size());
    for (std::size_t b = 0; b < branches_.size(); ++b) {
        auto pooled = branches_[b].forward(f, mode, trace ? &trace->branches[b] : nullptr);
        BilinearResize<T> up(f.h(), f.w());
        ups.push_back(up.forward(pooled, mode, trace ? &trace->branch_up[b] : nullptr));
    }
    std::vector<const Tensor<T>*> parts{&f};
    for (const auto& u : ups) parts.push_back(&u);
    const auto fused = concat_channels(parts);
    auto prob = head_.forward(fused, mode, trace ? &trace->head : nullptr);
    BilinearResize<T> up(kFeatureStride);
    prob = up.forward(prob, mode, trace ? &trace->up : nullptr);
    ProbClamp<T> clamp(eps_);
    return clamp.forward(prob, mode, trace ? &trace->clamp : nullptr);
}

template <typename T>
Tensor<T> SemanticExtractor<T>::backward(const Tensor<T>& dprob, const Trace& trace) {
    ProbClamp<T> clamp(eps_);
    auto g = clamp.backward(dprob, trace.clamp, true);
    BilinearResize<T> up(kFeatureStride);
    g = up.backward(g, trace.up, true);
    const auto dfused = head_.backward(g, trace.head, true);
    const int cf = trace.feature_shape.c;
    Tensor<T> df = channel_slice(dfused, 0, cf);
    int offset = cf;
    for (std::size_t b = 0; b < branches_.size(); ++b) {
        const int cb = dfused.c() - cf;
        const int width = cb / static_cast<int>(branches_.size());
        auto dup = channel_slice(dfused, offset, width);
        offset += width;
        BilinearResize<T> bu(trace.feature_shape.h, trace.feature_shape.w);
        const auto dpooled = bu.backward(dup, trace.branch_up[b], true);
        df += branches_[b].backward(dpooled, trace.branches[b], true);
    }
    return df;
}

template <typename T>
void SemanticExtractor<T>::for_each_param(const ParamVisitor<T>& fn) {
    for (auto& b : branches_) b.for_each_param(fn);
    head_.for_each_param(fn);
}

// ---------------------------------------------------------------------------
// Discriminator

template <typename T>
Discriminator<T>::Discriminator(const ArchConfig& arch) {
    int in = arch.feature_channels();
    for (std::size_t i = 0; i < arch.discriminator_widths.size(); ++i) {
        const int w = arch.discriminator_widths[i];
        net_.add(Conv2d<T>(pname(ParamGroup::discriminator, "conv" + std::to_string(i + 1)), in, w, 4, 2, 1));
        net_.add(Activation<T>(ActivationKind::leaky_relu, arch.leaky_slope));
        in = w;
    }
    net_.add(Conv2d<T>(pname(ParamGroup::discriminator, "head"), in, 1, 1, 1, 0));
    net_.add(Activation<T>(ActivationKind::sigmoid));
    net_.add(ProbClamp<T>(arch.prob_eps));
}

template <typename T>
Tensor<T> Discriminator<T>::forward(const Tensor<T>& f, Mode mode, Trace* trace) {
    if (f.h() < kDiscriminatorStride || f.w() < kDiscriminatorStride) {
        throw ConfigError("discriminator needs feature maps of at least 16x16, got " + std::to_string(f.h()) + "x" +
                          std::to_string(f.w()));
    }
    return net_.forward(f, mode, trace);
}

// ---------------------------------------------------------------------------
// Model

template <typename T>
Model<T>::Model(const ArchConfig& a) : arch(a) {
    arch.validate();
    extractor = FeatureExtractor<T>(arch);
    density = DensityEstimator<T>(arch);
    semantic = SemanticExtractor<T>(arch);
    discriminator = Discriminator<T>(arch);
}

template <typename T>
void Model<T>::for_each_param(ParamGroup g, const ParamVisitor<T>& fn) {
    switch (g) {
        case ParamGroup::extractor: extractor.for_each_param(fn); break;
        case ParamGroup::density: density.for_each_param(fn); break;
        case ParamGroup::semantic: semantic.for_each_param(fn); break;
        case ParamGroup::discriminator: discriminator.for_each_param(fn); break;
    }
}

template <typename T>
void Model<T>::for_each_param(const ParamVisitor<T>& fn) {
    for (auto g : {ParamGroup::extractor, ParamGroup::density, ParamGroup::semantic, ParamGroup::discriminator}) {
        for_each_param(g, fn);
    }
}

template <typename T>
std::vector<Param<T>*> Model<T>::params(ParamGroup g) {
    std::vector<Param<T>*> out;
    for_each_param(g, [&](Param<T>& p) { out.push_back(&p); });
    return out;
}

template <typename T>
std::vector<Param<T>*> Model<T>::params() {
    std::vector<Param<T>*> out;
    for_each_param([&](Param<T>& p) { out.push_back(&p); });
    return out;
}

template <typename T>
void Model<T>::zero_grad() {
    for_each_param([](Param<T>& p) { p.grad.zero(); });
}

template <typename T>
std::size_t Model<T>::trainable_count() {
    std::size_t n = 0;
    for_each_param([&](Param<T>& p) {
        if (p.trainable) n += p.value.size();
    });
    return n;
}

// ---------------------------------------------------------------------------

template <typename T>
Model<T> init_params(const ArchConfig& arch, std::uint64_t seed) {
    Model<T> m(arch);
    const std::string density_head_weight = m.density.head().weight.name;
    m.for_each_param([&](Param<T>& p) {
        const auto& n = p.name;
        const bool is_weight = n.size() > 7 && n.compare(n.size() - 7, 7, ".weight") == 0;
        if (!is_weight) {
            return;  // biases/betas zero, gammas one, running stats at their defaults
        }
        const double fan_in = static_cast<double>(p.value.c()) * p.value.h() * p.value.w();
        // the density projection starts near zero so initial counts are of the order of real ones
        const double stddev = n == density_head_weight ? kDensityHeadStd : std::sqrt(2.0 / fan_in);
        Rng rng(derive_seed(seed, {name_hash(n)}));
        for (auto& v : p.value.storage()) {
            v = static_cast<T>(stddev * rng.normal());
        }
    });
    return m;
}

template <typename Dst, typename Src>
Model<Dst> convert_model(Model<Src>& src) {
    Model<Dst> dst(src.arch);
    auto from = src.params();
    auto to = dst.params();
    if (from.size() != to.size()) {
        throw ConfigError("convert_model: parameter lists differ");
    }
    for (std::size_t i = 0; i < from.size(); ++i) {
        to[i]->value = from[i]->value.template cast<Dst>();
    }
    return dst;
}

template <typename T>
void load_pretrained_extractor(Model<T>& model, const std::filesystem::path& path) {
    const auto archive = TensorArchive::load(path);
    std::unordered_map<std::string, Param<T>*> by_name;
    for (auto* p : model.params(ParamGroup::extractor)) by_name[p->name] = p;
    std::size_t loaded = 0;
    for (const auto& [name, rec] : archive.records()) {
        if (name.rfind("theta_e/", 0) != 0) {
            continue;
        }
        const auto it = by_name.find(name);
        if (it == by_name.end()) {
            throw LoadError(path.string() + ": unknown extractor tensor '" + name + "'");
        }
        auto t = archive.get<T>(name);
        if (!(t.shape() == it->second->value.shape())) {
            throw LoadError(path.string() + ": shape mismatch for '" + name + "': file " + t.shape().str() +
                            " vs model " + it->second->value.shape().str());
        }
        it->second->value = std::move(t);
        ++loaded;
    }
    if (loaded == 0) {
        throw LoadError(path.string() + ": no theta_e/* tensors found");
    }
}

#define CROWDSCA_INSTANTIATE(T)                                                            \
    template class FeatureExtractor<T>;                                                    \
    template class DensityEstimator<T>;                                                    \
    template class SemanticExtractor<T>;                                                   \
    template class Discriminator<T>;                                                       \
    template struct Model<T>;                                                              \
    template Model<T> init_params<T>(const ArchConfig&, std::uint64_t);                    \
    template void load_pretrained_extractor<T>(Model<T>&, const std::filesystem::path&);

CROWDSCA_INSTANTIATE(float)
CROWDSCA_INSTANTIATE(double)
#undef CROWDSCA_INSTANTIATE

template Model<double> convert_model<double, float>(Model<float>&);
template Model<float> convert_model<float, double>(Model<double>&);
template Model<float> convert_model<float, float>(Model<float>&);
template Model<double> convert_model<double, double>(Model<double>&);

}  // namespace crowdsca
