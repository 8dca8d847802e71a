#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "crowdsca/errors.hpp"
#include "crowdsca/training.hpp"
#include "crowdsca/verification.hpp"
#include "oracles.hpp"

using namespace crowdsca;

namespace {

TrainConfig small_config(bool adapt) {
    TrainConfig cfg;
    cfg.arch = gradcheck_arch();
    cfg.batch_size = 2;
    cfg.crop_h = cfg.crop_w = 128;
    cfg.lr_main = 1e-4;
    cfg.adapt = adapt;
    cfg.iters = 3;
    cfg.seed = 1;
    return cfg;
}

const Benchmark& tiny_benchmark() {
    static const Benchmark b = [] {
        BenchmarkConfig bc;
        bc.n_source = 3;
        bc.n_target = 3;
        bc.n_test = 1;
        bc.height = 144;
        bc.width = 136;
        bc.seed = 4;
        return generate_benchmark(bc);
    }();
    return b;
}

std::vector<Tensor<float>> snapshot(Model<float>& m, ParamGroup g) {
    std::vector<Tensor<float>> out;
    for (auto* p : m.params(g)) {
        if (p->trainable) out.push_back(p->value);
    }
    return out;
}

bool same(const std::vector<Tensor<float>>& a, const std::vector<Tensor<float>>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!bit_identical(a[i], b[i])) return false;
    }
    return true;
}

std::vector<Tensor<float>> grads(Model<float>& m, ParamGroup g) {
    std::vector<Tensor<float>> out;
    for (auto* p : m.params(g)) out.push_back(p->grad);
    return out;
}

bool all_zero(Model<float>& m, ParamGroup g) {
    for (auto* p : m.params(g)) {
        for (float v : p->grad.storage()) {
            if (v != 0.0F) return false;
        }
    }
    return true;
}

constexpr ParamGroup kGroups[] = {ParamGroup::extractor, ParamGroup::density, ParamGroup::semantic,
                                  ParamGroup::discriminator};

}  // namespace

TEST_CASE("Adam matches the update rule") {
    Param<double> p{"x", Tensor<double>(1, 1, 1, 2), Tensor<double>(1, 1, 1, 2), true};
    p.value[0] = 1.0;
    p.value[1] = -2.0;
    Adam<double> opt(0.1, 0.9, 0.999, 1e-8);
    double x[2] = {1.0, -2.0};
    double m[2] = {0, 0};
    double v[2] = {0, 0};
    const double grads[3][2] = {{0.5, -1.0}, {0.2, 3.0}, {-0.4, 0.0}};
    for (int t = 1; t <= 3; ++t) {
        p.grad[0] = grads[t - 1][0];
        p.grad[1] = grads[t - 1][1];
        opt.step({&p});
        for (int i = 0; i < 2; ++i) {
            const double g = grads[t - 1][i];
            m[i] = 0.9 * m[i] + 0.1 * g;
            v[i] = 0.999 * v[i] + 0.001 * g * g;
            const double mh = m[i] / (1 - std::pow(0.9, t));
            const double vh = v[i] / (1 - std::pow(0.999, t));
            x[i] -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
            CHECK(p.value[i] == doctest::Approx(x[i]).epsilon(1e-12));
        }
    }
    CHECK(opt.steps() == 3);

    Param<double> frozen{"rm", Tensor<double>(1, 1, 1, 1, 5.0), Tensor<double>(1, 1, 1, 1, 1.0), false};
    opt.step({&p, &frozen});
    CHECK(frozen.value[0] == 5.0);
}

TEST_CASE("gradient checker") {
    Param<double> p{"w", Tensor<double>(1, 1, 1, 3), Tensor<double>(1, 1, 1, 3), true};
    p.value[0] = 0.5;
    p.value[1] = -1.5;
    p.value[2] = 2.0;
    GradProbe good = [&](bool with_grad) {
        double s = 0.0;
        for (int i = 0; i < 3; ++i) s += std::sin(p.value[i]) * p.value[i];
        if (with_grad) {
            for (int i = 0; i < 3; ++i) p.grad[i] = std::cos(p.value[i]) * p.value[i] + std::sin(p.value[i]);
        }
        return s;
    };
    CHECK(gradient_check(good, {&p}, 3, 1e-5).max_rel_error < 1e-8);

    GradProbe bad = [&](bool with_grad) {
        const double v = good(with_grad);
        if (with_grad) p.grad[1] *= 1.01;
        return v;
    };
    const auto r = gradient_check(bad, {&p}, 3, 1e-5);
    CHECK(r.max_rel_error > 5e-3);
    CHECK(r.worst.find("w[1]") != std::string::npos);

    CHECK_THROWS_AS(gradient_check(good, {&p}, 3, 0.0), ConfigError);
    GradProbe nan = [](bool) { return std::nan(""); };
    CHECK_THROWS_AS(gradient_check(nan, {&p}, 3, 1e-5), NumericError);
}

TEST_CASE("gradient suite on a reduced sample") {
    GradSuiteOptions opt;
    opt.n_coords = 6;
    opt.seed = 3;
    for (const auto& e : run_gradient_suite(opt)) {
        CHECK_MESSAGE(e.result.max_rel_error < 1e-4, e.name << " worst " << e.result.worst);
    }
}

TEST_CASE("generator and discriminator phases touch disjoint groups") {
    const auto cfg = small_config(true);
    BatchSampler sampler(tiny_benchmark().source, tiny_benchmark().target, cfg);
    const auto sb = sampler.source_batch(0);
    const auto tb = sampler.target_batch(0);
    auto model = init_params<float>(cfg.arch, 2);

    std::vector<std::vector<Tensor<float>>> before;
    for (auto g : kGroups) before.push_back(snapshot(model, g));
    const auto pass = generator_pass(model, sb, &tb, cfg.weights, true);
    for (std::size_t i = 0; i < 4; ++i) CHECK(same(before[i], snapshot(model, kGroups[i])));
    CHECK(all_zero(model, ParamGroup::discriminator));
    CHECK_FALSE(all_zero(model, ParamGroup::extractor));
    CHECK_FALSE(all_zero(model, ParamGroup::semantic));
    CHECK(pass.record.seg_t.has_value());
    CHECK(pass.record.adv.has_value());

    std::vector<std::vector<Tensor<float>>> gen_grads;
    for (std::size_t i = 0; i < 3; ++i) gen_grads.push_back(grads(model, kGroups[i]));
    const float d = discriminator_pass(model, pass.source_features, pass.target_features);
    CHECK(std::isfinite(d));
    CHECK_FALSE(all_zero(model, ParamGroup::discriminator));
    // the features are detached: generator gradients are untouched
    for (std::size_t i = 0; i < 3; ++i) CHECK(same(gen_grads[i], grads(model, kGroups[i])));
}

TEST_CASE("baseline steps leave semantic and discriminator weights alone") {
    auto cfg = small_config(false);
    cfg.crop_h = cfg.crop_w = 64;
    auto st = make_train_state<float>(cfg);
    const auto s0 = snapshot(st.model, ParamGroup::semantic);
    const auto d0 = snapshot(st.model, ParamGroup::discriminator);
    const auto e0 = snapshot(st.model, ParamGroup::extractor);
    BatchSampler sampler(tiny_benchmark().source, tiny_benchmark().target, cfg);
    for (int it = 0; it < 3; ++it) {
        const auto rec = train_step(sampler.source_batch(it), TargetBatch<float>{}, st, cfg);
        CHECK_FALSE(rec.seg_s.has_value());
        CHECK_FALSE(rec.disc.has_value());
        CHECK(rec.total == rec.den);
    }
    CHECK(st.iteration == 3);
    CHECK(same(s0, snapshot(st.model, ParamGroup::semantic)));
    CHECK(same(d0, snapshot(st.model, ParamGroup::discriminator)));
    CHECK_FALSE(same(e0, snapshot(st.model, ParamGroup::extractor)));
}

TEST_CASE("zero adaptation weights reproduce the baseline trajectory") {
    auto base = small_config(false);
    auto zero = small_config(true);
    zero.weights = {0.0, 0.0, 0.0};
    base.iters = zero.iters = 3;
    const auto& b = tiny_benchmark();
    auto a = train(base, b.source, b.target);
    auto z = train(zero, b.source, b.target);
    for (auto g : {ParamGroup::extractor, ParamGroup::density}) {
        const auto pa = snapshot(a.model, g);
        const auto pz = snapshot(z.model, g);
        REQUIRE(pa.size() == pz.size());
        for (std::size_t i = 0; i < pa.size(); ++i) {
            for (std::size_t k = 0; k < pa[i].size(); ++k) REQUIRE(pa[i][k] == doctest::Approx(pz[i][k]).epsilon(1e-6));
        }
    }
}

TEST_CASE("target head annotations never influence training") {
    const auto cfg = small_config(true);
    auto b = tiny_benchmark();
    auto with_heads = b.target;
    for (auto& s : with_heads.samples) s.heads = HeadPoints{{1.0, 1.0}, {5.0, 7.0}};
    auto a = train(cfg, b.source, b.target);
    auto c = train(cfg, b.source, with_heads);
    for (auto g : kGroups) CHECK(same(snapshot(a.model, g), snapshot(c.model, g)));
}

TEST_CASE("sampler schedule") {
    auto cfg = small_config(true);
    cfg.batch_size = 2;
    BatchSampler s1(tiny_benchmark().source, tiny_benchmark().target, cfg);
    BatchSampler s2(tiny_benchmark().source, tiny_benchmark().target, cfg);
    // order of queries does not matter
    const auto late = s1.source_indices(7);
    (void)s2.source_indices(0);
    CHECK(s2.source_indices(7) == late);
    // consecutive slots cover every scene once per epoch of 3
    std::vector<std::size_t> slots;
    for (int it = 0; it < 3; ++it) {
        for (auto i : s1.source_indices(it)) slots.push_back(i);
    }
    for (int e = 0; e < 2; ++e) {
        std::set<std::size_t> epoch(slots.begin() + 3 * e, slots.begin() + 3 * e + 3);
        CHECK(epoch.size() == 3);
    }
    const auto sb = s1.source_batch(2);
    CHECK(sb.images.shape() == Shape{2, 3, 128, 128});
    CHECK(sb.density.shape() == Shape{2, 1, 128, 128});
    const auto tb = s1.target_batch(2);
    CHECK(tb.masks.shape() == Shape{2, 1, 128, 128});
    CHECK(bit_identical(s2.source_batch(2).images, sb.images));
}

TEST_CASE("crop density comes from the full-scene map") {
    auto cfg = small_config(false);
    cfg.batch_size = 1;
    cfg.crop_h = cfg.crop_w = 64;
    const auto& src = tiny_benchmark().source;
    BatchSampler sampler(src, tiny_benchmark().target, cfg);
    double total = 0.0;
    for (int it = 0; it < 3; ++it) {
        const auto sb = sampler.source_batch(it);
        for (float v : sb.density.storage()) {
            REQUIRE(v >= 0.0F);
            total += v;
        }
    }
    CHECK(total > 0.0);
}

TEST_CASE("checkpoint round trip and exact resume") {
    const auto dir = oracle::temp_dir("ckpt");
    auto cfg = small_config(true);
    cfg.iters = 4;
    cfg.checkpoint_every = 2;
    const auto& b = tiny_benchmark();
    std::vector<LossRecord> records;
    auto straight = train(cfg, b.source, b.target, {dir / "a"}, std::nullopt,
                          [&](std::int64_t, const LossRecord& r) { records.push_back(r); });
    CHECK(records.size() == 4);
    CHECK(std::filesystem::exists(dir / "a" / "ckpt_2.bin"));
    CHECK(std::filesystem::exists(dir / "a" / "ckpt_4.bin"));
    CHECK(std::filesystem::exists(dir / "a" / "final.bin"));

    auto loaded = load_checkpoint(dir / "a" / "ckpt_2.bin");
    CHECK(loaded.state.iteration == 2);
    CHECK(loaded.config_hash == cfg.hash());
    CHECK(loaded.config.hash() == cfg.hash());
    CHECK(loaded.state.opt_e.steps() == 2);
    CHECK(loaded.state.opt_d.steps() == 2);
    auto resumed = train(cfg, b.source, b.target, {dir / "b"}, std::move(loaded.state));
    CHECK(resumed.iteration == 4);
    for (auto g : kGroups) CHECK(same(snapshot(straight.model, g), snapshot(resumed.model, g)));

    auto fin = load_checkpoint(dir / "a" / "final.bin");
    for (auto g : kGroups) CHECK(same(snapshot(straight.model, g), snapshot(fin.state.model, g)));
    const auto& m1 = straight.opt_s.first_moments();
    const auto& m2 = fin.state.opt_s.first_moments();
    REQUIRE(m1.size() == m2.size());
    for (std::size_t i = 0; i < m1.size(); ++i) CHECK(bit_identical(m1[i], m2[i]));

    std::ifstream in(dir / "a" / "loss.csv");
    std::string line;
    std::getline(in, line);
    CHECK(line == loss_csv_header());
    int rows = 0;
    while (std::getline(in, line)) ++rows;
    CHECK(rows == 4);

    // truncated file
    const auto bytes = std::filesystem::file_size(dir / "a" / "final.bin");
    std::filesystem::copy_file(dir / "a" / "final.bin", dir / "cut.bin");
    std::filesystem::resize_file(dir / "cut.bin", bytes / 2);
    CHECK_THROWS_AS(load_checkpoint(dir / "cut.bin"), LoadError);
    CHECK_THROWS_AS(load_checkpoint(dir / "missing.bin"), LoadError);

    auto other = cfg;
    other.arch.pyramid_width = 3;
    auto again = load_checkpoint(dir / "a" / "final.bin");
    CHECK_THROWS_AS(train(other, b.source, b.target, {}, std::move(again.state)), ConfigError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("csv rows leave absent terms empty") {
    LossRecord r;
    r.den = 1.5;
    r.total = 1.5;
    const auto row = loss_csv_row(3, r);
    CHECK(row.rfind("3,1.5,", 0) == 0);
    CHECK(std::count(row.begin(), row.end(), ',') == 6);
    CHECK(row.find(",,,") != std::string::npos);
}

TEST_CASE("non-finite losses abort before any update") {
    auto cfg = small_config(false);
    cfg.crop_h = cfg.crop_w = 64;
    auto st = make_train_state<float>(cfg);
    BatchSampler sampler(tiny_benchmark().source, tiny_benchmark().target, cfg);
    auto sb = sampler.source_batch(0);
    sb.images[5] = std::nanf("");
    const auto e0 = snapshot(st.model, ParamGroup::extractor);
    CHECK_THROWS_AS(train_step(sb, TargetBatch<float>{}, st, cfg), NumericError);
    CHECK(same(e0, snapshot(st.model, ParamGroup::extractor)));
    CHECK(st.iteration == 0);
}

TEST_CASE("scene filter that removes everything is an error") {
    auto cfg = small_config(true);
    cfg.scene_filter = "none";
    CHECK_THROWS_AS(train(cfg, tiny_benchmark().source, tiny_benchmark().target), ConfigError);
}
