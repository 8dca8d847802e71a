// crowdsca: data generation, training, evaluation, prediction, gradient checks.

#include <CLI11.hpp>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "crowdsca/config.hpp"
#include "crowdsca/datamodel.hpp"
#include "crowdsca/density.hpp"
#include "crowdsca/errors.hpp"
#include "crowdsca/evaluation.hpp"
#include "crowdsca/training.hpp"
#include "crowdsca/verification.hpp"

namespace fs = std::filesystem;
using namespace crowdsca;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;
constexpr double kGradTolerance = 1e-4;

struct GenDataFlags {
    fs::path out;
    BenchmarkConfig bench;
};

struct TrainFlags {
    fs::path config;
    fs::path out;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
    std::optional<int> iters;
    bool no_adapt = false;
    std::string source;
    std::string target;
    fs::path resume;
};

struct EvalFlags {
    fs::path checkpoint;
    fs::path data;
    fs::path out;
    bool pngs = false;
    int tile_cap = 1024;
};

struct PredictFlags {
    fs::path checkpoint;
    fs::path image;
    fs::path out;
    fs::path density;
    int tile_cap = 1024;
};

struct GradFlags {
    fs::path config;
    std::vector<std::string> overrides;
    std::uint64_t seed = 0;
    int coords = 40;
};

int gen_data(const GenDataFlags& f) {
    const Benchmark b = generate_benchmark(f.bench);
    if (b.source.empty()) std::cerr << "warning: source set is empty\n";
    if (b.target.empty()) std::cerr << "warning: target set is empty\n";
    std::error_code ec;
    fs::create_directories(f.out, ec);
    if (ec) throw LoadError("cannot create " + f.out.string() + ": " + ec.message());
    save_dataset(f.out / "source", b.source);
    save_dataset(f.out / "target", b.target);
    save_dataset(f.out / "test", b.test);

    const nlohmann::json meta = {{"seed", f.bench.seed},
                                 {"height", f.bench.height},
                                 {"width", f.bench.width},
                                 {"n_source", b.source.size()},
                                 {"n_target", b.target.size()},
                                 {"n_test", b.test.size()},
                                 {"brightness", {f.bench.brightness_lo, f.bench.brightness_hi}},
                                 {"datasets", {"source", "target", "test"}}};
    std::ofstream(f.out / "meta.json") << meta.dump(2) << "\n";

    RunConfig rc;
    rc.source_dir = (f.out / "source").string();
    rc.target_dir = (f.out / "target").string();
    rc.train.seed = f.bench.seed;
    std::ofstream ini(f.out / "train.ini");
    if (!ini) throw LoadError("cannot write " + (f.out / "train.ini").string());
    ini << to_ini(rc);
    std::cout << "wrote " << b.source.size() << " source, " << b.target.size() << " target, " << b.test.size()
              << " test scenes to " << f.out.string() << "\n";
    return kExitOk;
}

int train_cmd(const TrainFlags& f) {
    RunConfig rc = f.config.empty() ? RunConfig{} : load_run_config(f.config);
    apply_overrides(rc, f.overrides);
    if (f.seed) rc.train.seed = *f.seed;
    if (f.iters) rc.train.iters = *f.iters;
    if (f.no_adapt) rc.train.adapt = false;
    if (!f.source.empty()) rc.source_dir = f.source;
    if (!f.target.empty()) rc.target_dir = f.target;
    rc.train.validate();
    if (rc.source_dir.empty()) throw ConfigError("no source dataset (data.source or --source)");
    if (rc.train.adapt && rc.target_dir.empty()) throw ConfigError("no target dataset (data.target or --target)");

    const SourceDataset source = load_source_dataset(rc.source_dir);
    const TargetDataset target = rc.target_dir.empty() ? TargetDataset{} : load_target_dataset(rc.target_dir);

    std::optional<TrainState<float>> resume;
    if (!f.resume.empty()) {
        LoadedCheckpoint ck = load_checkpoint(f.resume);
        if (!(ck.config.arch == rc.train.arch)) {
            throw ConfigError("refusing to resume: checkpoint architecture (" + ck.config.arch.describe() +
                              ") differs from config (" + rc.train.arch.describe() + ")");
        }
        resume = std::move(ck.state);
        std::cout << "resuming from iteration " << resume->iteration << "\n";
    }

    fs::create_directories(f.out);
    {
        std::ofstream ini(f.out / "config.ini");
        ini << to_ini(rc);
    }
    auto st = train(rc.train, source, target, TrainOutputs{f.out}, std::move(resume),
                    [&](std::int64_t it, const LossRecord& r) {
                        if (it == rc.train.iters || it % 100 == 0) {
                            std::cout << "iter " << it << " den " << r.den << " total " << r.total << "\n";
                        }
                    });
    save_checkpoint(f.out / ("ckpt_" + std::to_string(st.iteration) + ".bin"), st, rc.train);
    std::cout << "checkpoint " << (f.out / "final.bin").string() << " at iteration " << st.iteration << "\n";
    return kExitOk;
}

std::vector<EvalSample> eval_samples(const fs::path& root, SourceDataset& src, TargetDataset& tgt) {
    if (dataset_kind(root) == DomainKind::source) {
        src = load_source_dataset(root);
        return eval_view(src);
    }
    tgt = load_target_dataset(root);
    return eval_view(tgt);
}

int eval_cmd(const EvalFlags& f) {
    LoadedCheckpoint ck = load_checkpoint(f.checkpoint);
    SourceDataset src;
    TargetDataset tgt;
    const auto samples = eval_samples(f.data, src, tgt);
    EvalOptions opt;
    opt.kernel.sigma = ck.config.sigma;
    opt.predict.tile_cap = f.tile_cap;
    fs::create_directories(f.out);
    MapCallback on_map;
    if (f.pngs) {
        fs::create_directories(f.out / "maps");
        on_map = [&](const std::string& id, const DensityMap& pred, const DensityMap& gt) {
            save_density_pair_png(f.out / "maps" / (id + ".png"), pred, gt);
        };
    }
    const MetricsReport rep = evaluate(ck.state.model, samples, opt, on_map);
    write_report_json(f.out / "metrics.json", rep);
    write_report_csv(f.out / "metrics.csv", rep);
    std::printf("images %d  MAE %.4f  MSE %.4f  PSNR %.3f%s  SSIM %.4f\n", rep.n_images, rep.mae, rep.mse, rep.psnr,
                rep.psnr_capped ? " (capped)" : "", rep.ssim);
    for (double v : {rep.mae, rep.mse, rep.psnr, rep.ssim}) {
        if (!std::isfinite(v)) throw NumericError("non-finite metric");
    }
    return kExitOk;
}

int predict_cmd(const PredictFlags& f) {
    LoadedCheckpoint ck = load_checkpoint(f.checkpoint);
    const CrowdImage img = load_image(f.image);
    const DensityMap d = predict_density(ck.state.model, img, PredictOptions{f.tile_cap});
    const double count = count_from_density(d);
    if (!std::isfinite(count)) throw NumericError("non-finite predicted count");
    if (!f.out.parent_path().empty()) fs::create_directories(f.out.parent_path());
    save_density_png(f.out, d);
    if (!f.density.empty()) save_density_bin(f.density, d);
    std::printf("%.6f\n", count);
    return kExitOk;
}

int gradcheck_cmd(const GradFlags& f) {
    RunConfig rc;
    rc.train.arch = gradcheck_arch();
    if (!f.config.empty()) rc = load_run_config(f.config);
    apply_overrides(rc, f.overrides);
    GradSuiteOptions opt;
    opt.arch = rc.train.arch;
    opt.seed = f.seed;
    opt.n_coords = f.coords;
    opt.arch.validate();
    bool ok = true;
    for (const auto& e : run_gradient_suite(opt)) {
        const bool pass = e.result.max_rel_error < kGradTolerance;
        ok = ok && pass;
        std::printf("%-24s max_rel_error %.3e  (%zu coords, worst %s)  %s\n", e.name.c_str(), e.result.max_rel_error,
                    e.result.coords, e.result.worst.c_str(), pass ? "ok" : "FAIL");
    }
    return ok ? kExitOk : kExitNumeric;
}

template <typename Fn>
int guarded(Fn&& fn) {
    try {
        return fn();
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitFailure;
    }
}

}  // namespace

int main(int argc, char** argv) {
#ifdef __GLIBC__
    // keep large tensor buffers on the heap instead of fresh mmaps per allocation
    mallopt(M_MMAP_THRESHOLD, 256 * 1024 * 1024);
    mallopt(M_TRIM_THRESHOLD, 512 * 1024 * 1024);
#endif
    CLI::App app{"Crowd counting with semantic-consistency domain adaptation"};
    app.require_subcommand(1);

    GenDataFlags gd;
    auto* c_gen = app.add_subcommand("gen-data", "Generate the synthetic two-domain benchmark");
    c_gen->add_option("--out", gd.out, "Output directory")->required();
    c_gen->add_option("--seed", gd.bench.seed, "Generator seed");
    c_gen->add_option("--n-source", gd.bench.n_source, "Source scenes")->check(CLI::NonNegativeNumber);
    c_gen->add_option("--n-target", gd.bench.n_target, "Unlabeled target scenes")->check(CLI::NonNegativeNumber);
    c_gen->add_option("--n-test", gd.bench.n_test, "Held-out target scenes")->check(CLI::NonNegativeNumber);
    c_gen->add_option("--height", gd.bench.height, "Scene height (multiple of 8)");
    c_gen->add_option("--width", gd.bench.width, "Scene width (multiple of 8)");
    c_gen->add_option("--brightness-min", gd.bench.brightness_lo);
    c_gen->add_option("--brightness-max", gd.bench.brightness_hi);

    TrainFlags tf;
    std::uint64_t train_seed = 0;
    int train_iters = 0;
    auto* c_train = app.add_subcommand("train", "Train a model");
    c_train->add_option("--config", tf.config, "INI config file");
    c_train->add_option("--out", tf.out, "Run directory")->required();
    c_train->add_option("--set", tf.overrides, "Override, section.key=value (repeatable)");
    auto* o_seed = c_train->add_option("--seed", train_seed, "Seed");
    auto* o_iters = c_train->add_option("--iters", train_iters, "Total iterations");
    c_train->add_flag("--no-adapt", tf.no_adapt, "Source-only baseline");
    c_train->add_option("--source", tf.source, "Source dataset directory");
    c_train->add_option("--target", tf.target, "Target dataset directory");
    c_train->add_option("--resume", tf.resume, "Continue from a checkpoint");

    EvalFlags ef;
    auto* c_eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset with head annotations");
    c_eval->add_option("--checkpoint", ef.checkpoint)->required();
    c_eval->add_option("--data", ef.data, "Dataset directory")->required();
    c_eval->add_option("--out", ef.out, "Report directory")->required();
    c_eval->add_flag("--maps", ef.pngs, "Write prediction | ground-truth PNG pairs");
    c_eval->add_option("--tile-cap", ef.tile_cap, "Largest tile side for full-image inference");

    PredictFlags pf;
    auto* c_pred = app.add_subcommand("predict", "Predict a density map for one image");
    c_pred->add_option("--checkpoint", pf.checkpoint)->required();
    c_pred->add_option("--image", pf.image, "RGB PNG")->required();
    c_pred->add_option("--out", pf.out, "Density PNG to write")->required();
    c_pred->add_option("--density", pf.density, "Also write the raw density grid");
    c_pred->add_option("--tile-cap", pf.tile_cap);

    GradFlags gf;
    auto* c_grad = app.add_subcommand("gradcheck", "Finite-difference check of every loss");
    c_grad->add_option("--config", gf.config, "INI config supplying [arch]");
    c_grad->add_option("--set", gf.overrides, "Override, section.key=value");
    c_grad->add_option("--seed", gf.seed);
    c_grad->add_option("--coords", gf.coords, "Coordinates sampled per check")->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    if (c_gen->parsed()) return guarded([&] { return gen_data(gd); });
    if (c_train->parsed()) {
        if (o_seed->count() > 0) tf.seed = train_seed;
        if (o_iters->count() > 0) tf.iters = train_iters;
        return guarded([&] { return train_cmd(tf); });
    }
    if (c_eval->parsed()) return guarded([&] { return eval_cmd(ef); });
    if (c_pred->parsed()) return guarded([&] { return predict_cmd(pf); });
    if (c_grad->parsed()) return guarded([&] { return gradcheck_cmd(gf); });
    return kExitConfig;
}
