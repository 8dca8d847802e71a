#include "crowdsca/verification.hpp"

#include <cmath>

#include "crowdsca/density.hpp"
#include "crowdsca/errors.hpp"
#include "crowdsca/losses.hpp"
#include "crowdsca/rng.hpp"

namespace crowdsca {

ArchConfig gradcheck_arch() {
    ArchConfig a;
    a.extractor_widths = {4, 8, 8};
    a.extractor_convs = {1, 1, 1};
    a.density_widths = {8, 4, 4};
    a.pyramid_width = 4;
    a.discriminator_widths = {4, 8, 8, 8};
    return a;
}

namespace {

Param<double> random_param(const std::string& name, Shape shape, Rng& rng, double lo, double hi) {
    Param<double> p{name, Tensor<double>(shape), Tensor<double>(shape), true};
    for (auto& v : p.value.values()) v = rng.uniform(lo, hi);
    return p;
}

Tensor<double> random_mask(Shape shape, Rng& rng) {
    Tensor<double> z(shape);
    for (auto& v : z.values()) v = rng.uniform() < 0.4 ? 1.0 : 0.0;
    return z;
}

}  // namespace

std::vector<GradSuiteEntry> run_gradient_suite(const GradSuiteOptions& opt) {
    std::vector<GradSuiteEntry> out;
    Rng rng(derive_seed(opt.seed, {0x5355495445ULL}));
    const Shape map_shape{opt.batch_size, 1, 16, 16};

    {
        auto pred = random_param("pred", map_shape, rng, 0.0, 0.05);
        Tensor<double> gt(map_shape);
        for (auto& v : gt.values()) v = rng.uniform(0.0, 0.05);
        auto probe = [&](bool g) {
            auto l = density_loss(pred.value, gt);
            if (g) pred.grad = l.grad;
            return l.value;
        };
        out.push_back({"density", gradient_check(probe, {&pred}, opt.n_coords, opt.step, opt.seed)});
    }
    {
        auto zh = random_param("z_hat", map_shape, rng, 0.05, 0.95);
        const auto z = random_mask(map_shape, rng);
        auto probe = [&](bool g) {
            auto l = source_seg_loss(zh.value, z);
            if (g) zh.grad = l.grad;
            return l.value;
        };
        out.push_back({"source_seg", gradient_check(probe, {&zh}, opt.n_coords, opt.step, opt.seed)});
    }
    {
        auto zh = random_param("z_hat", map_shape, rng, 0.05, 0.95);
        const auto z = random_mask(map_shape, rng);
        auto probe = [&](bool g) {
            auto l = target_seg_loss(zh.value, z);
            if (g) zh.grad = l.grad;
            return l.value;
        };
        out.push_back({"target_seg", gradient_check(probe, {&zh}, opt.n_coords, opt.step, opt.seed)});
    }
    {
        auto pt = random_param("p_t", Shape{opt.batch_size, 1, 8, 8}, rng, 0.05, 0.95);
        auto probe = [&](bool g) {
            auto l = adversarial_loss(pt.value);
            if (g) pt.grad = l.grad;
            return l.value;
        };
        out.push_back({"adversarial", gradient_check(probe, {&pt}, opt.n_coords, opt.step, opt.seed)});
    }
    {
        auto ps = random_param("p_s", Shape{opt.batch_size, 1, 8, 8}, rng, 0.05, 0.95);
        auto pt = random_param("p_t", Shape{opt.batch_size, 1, 8, 8}, rng, 0.05, 0.95);
        auto probe = [&](bool g) {
            auto l = discriminator_loss(ps.value, pt.value);
            if (g) {
                ps.grad = l.grad_source;
                pt.grad = l.grad_target;
            }
            return l.value;
        };
        out.push_back({"discriminator", gradient_check(probe, {&ps, &pt}, opt.n_coords, opt.step, opt.seed)});
    }

    // the weighted objective through E, C, S and D on generated scenes
    Model<double> model = init_params<double>(opt.arch, opt.seed);
    // The small production head init shrinks every upstream gradient to ~1e-7, where
    // finite-difference roundoff at step 1e-5 dominates; check at He scale instead.
    {
        auto& head = model.density.head().weight;
        const double sd = std::sqrt(2.0 / static_cast<double>(head.value.c()));
        for (auto& v : head.value.values()) v = sd * rng.normal();
    }
    std::vector<Tensor<double>> si, sd, sm, ti, tm;
    for (int k = 0; k < opt.batch_size; ++k) {
        SceneConfig sc;
        sc.height = sc.width = opt.image_size;
        sc.n_people = 12;
        sc.attributes.brightness = 0.3 + 0.2 * k;
        const auto src = generate_synthetic_scene(sc, derive_seed(opt.seed, {1, static_cast<std::uint64_t>(k)}));
        sc.attributes.background_style = BackgroundStyle::textured;
        const auto tgt = generate_synthetic_scene(sc, derive_seed(opt.seed, {2, static_cast<std::uint64_t>(k)}));
        si.push_back(image_tensor<double>(src.source.image));
        sd.push_back(density_tensor<double>(gaussian_density_map(src.source.heads, sc.height, sc.width)));
        sm.push_back(mask_tensor<double>(src.source.mask));
        ti.push_back(image_tensor<double>(tgt.target.image));
        tm.push_back(mask_tensor<double>(tgt.target.mask));
    }
    const SourceBatch<double> sb{stack(si), stack(sd), stack(sm)};
    const TargetBatch<double> tb{stack(ti), stack(tm)};

    std::vector<Param<double>*> gen_params;
    for (auto g : {ParamGroup::extractor, ParamGroup::density, ParamGroup::semantic}) {
        for (auto* p : model.params(g)) gen_params.push_back(p);
    }
    for (const auto& [name, w] : {std::pair{std::string("objective"), LossWeights{}},
                                  std::pair{std::string("objective_unit_weights"), LossWeights{1.0, 1.0, 1.0}}}) {
        auto probe = [&, w = w](bool) { return generator_pass(model, sb, &tb, w, true).record.total; };
        out.push_back({name, gradient_check(probe, gen_params, opt.n_coords, opt.step, opt.seed)});
    }
    {
        const auto gp = generator_pass(model, sb, &tb, LossWeights{}, true);
        auto probe = [&](bool) { return static_cast<double>(discriminator_pass(model, gp.source_features, gp.target_features)); };
        out.push_back({"objective_discriminator",
                       gradient_check(probe, model.params(ParamGroup::discriminator), opt.n_coords, opt.step, opt.seed)});
    }
    return out;
}

}  // namespace crowdsca
