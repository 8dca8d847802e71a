#include "crowdsca/training.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "crowdsca/errors.hpp"
#include "crowdsca/rng.hpp"
#include "crowdsca/tensor_file.hpp"

namespace crowdsca {

namespace {

constexpr ParamGroup kGroups[] = {ParamGroup::extractor, ParamGroup::density, ParamGroup::semantic,
                                  ParamGroup::discriminator};

// stream tags for derive_seed
constexpr std::uint64_t kSourceOrder = 0x534f52444552ULL;
constexpr std::uint64_t kTargetOrder = 0x544f52444552ULL;
constexpr std::uint64_t kSourceCrop = 0x5343524f50ULL;
constexpr std::uint64_t kTargetCrop = 0x5443524f50ULL;

template <typename T>
void scale(Tensor<T>& t, double s) {
    const T f = static_cast<T>(s);
    for (auto& v : t.values()) v *= f;
}

template <typename T>
void check_finite_grads(Model<T>& model, ParamGroup g) {
    model.for_each_param(g, [](Param<T>& p) {
        if (!p.trainable) return;
        for (T v : p.grad.values()) {
            if (!std::isfinite(static_cast<double>(v))) {
                throw NumericError("non-finite gradient in " + p.name);
            }
        }
    });
}

}  // namespace

// ---------------------------------------------------------------------------
// Adam

template <typename T>
void Adam<T>::ensure(const std::vector<Param<T>*>& params) {
    if (m_.size() == params.size()) return;
    m_.clear();
    v_.clear();
    for (const auto* p : params) {
        m_.emplace_back(p->value.shape());
        v_.emplace_back(p->value.shape());
    }
}

template <typename T>
void Adam<T>::step(const std::vector<Param<T>*>& params) {
    ensure(params);
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    const T b1 = static_cast<T>(beta1_);
    const T b2 = static_cast<T>(beta2_);
    const T a = static_cast<T>(lr_ / c1);
    const T inv_c2 = static_cast<T>(1.0 / c2);
    const T eps = static_cast<T>(eps_);
    for (std::size_t i = 0; i < params.size(); ++i) {
        Param<T>& p = *params[i];
        if (!p.trainable) continue;
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t k = 0; k < p.value.size(); ++k) {
            const T g = p.grad[k];
            m[k] = b1 * m[k] + (T(1) - b1) * g;
            v[k] = b2 * v[k] + (T(1) - b2) * g * g;
            p.value[k] -= a * m[k] / (std::sqrt(v[k] * inv_c2) + eps);
        }
    }
}

template <typename T>
Adam<T>& TrainState<T>::optimizer(ParamGroup g) {
    switch (g) {
        case ParamGroup::extractor: return opt_e;
        case ParamGroup::density: return opt_c;
        case ParamGroup::semantic: return opt_s;
        case ParamGroup::discriminator: return opt_d;
    }
    return opt_e;
}

namespace {

template <typename T>
void configure_optimizers(TrainState<T>& st, const TrainConfig& cfg) {
    for (auto g : kGroups) {
        const double lr = g == ParamGroup::discriminator ? cfg.lr_disc : cfg.lr_main;
        st.optimizer(g).configure(lr, cfg.beta1, cfg.beta2, cfg.adam_eps);
        st.optimizer(g).ensure(st.model.params(g));
    }
}

}  // namespace

template <typename T>
TrainState<T> make_train_state(const TrainConfig& cfg) {
    cfg.validate();
    TrainState<T> st;
    st.model = init_params<T>(cfg.arch, cfg.seed);
    st.seed = cfg.seed;
    configure_optimizers(st, cfg);
    return st;
}

// ---------------------------------------------------------------------------
// batches

std::vector<UnlabeledTarget> unlabeled_view(const TargetDataset& ds) {
    std::vector<UnlabeledTarget> out;
    out.reserve(ds.size());
    for (const auto& s : ds.samples) out.push_back({&s.image, &s.mask});
    return out;
}

template <typename T>
Tensor<T> image_tensor(const CrowdImage& img) {
    Tensor<T> t(Shape{1, 3, img.height, img.width});
    for (std::size_t i = 0; i < img.pixels.size(); ++i) t[i] = static_cast<T>(img.pixels[i]);
    return t;
}

template <typename T>
Tensor<T> mask_tensor(const CrowdMask& mask) {
    Tensor<T> t(Shape{1, 1, mask.height, mask.width});
    for (std::size_t i = 0; i < mask.values.size(); ++i) t[i] = mask.values[i] ? T(1) : T(0);
    return t;
}

template <typename T>
Tensor<T> density_tensor(const DensityMap& d) {
    Tensor<T> t(Shape{1, 1, d.height, d.width});
    for (std::size_t i = 0; i < d.values.size(); ++i) t[i] = static_cast<T>(d.values[i]);
    return t;
}

template <typename T>
Tensor<T> stack(const std::vector<Tensor<T>>& items) {
    if (items.empty()) throw ShapeError("stack: no tensors");
    const Shape one = items.front().shape();
    Tensor<T> out(Shape{static_cast<int>(items.size()), one.c, one.h, one.w});
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (items[i].shape() != one) throw ShapeError("stack: mismatched shapes");
        std::copy(items[i].data(), items[i].data() + items[i].size(), out.data() + i * items[i].size());
    }
    return out;
}

BatchSampler::BatchSampler(const SourceDataset& source, const TargetDataset& target, const TrainConfig& cfg)
    : source_(source), target_(unlabeled_view(target)), cfg_(cfg) {
    if (source.empty()) throw ConfigError("source dataset is empty");
    if (cfg.adapt && target.empty()) throw ConfigError("target dataset is empty");
    const KernelConfig kernel{cfg.sigma, KernelConfig{}.truncate};
    source_density_.reserve(source.size());
    for (const auto& s : source.samples) {
        source_density_.push_back(gaussian_density_map(s.heads, s.image.height, s.image.width, kernel));
    }
}

std::size_t BatchSampler::index_of(std::uint64_t stream, std::size_t n, std::int64_t slot,
                                   std::vector<std::size_t>& perm, std::int64_t& perm_epoch) const {
    const std::int64_t epoch = slot / static_cast<std::int64_t>(n);
    if (epoch != perm_epoch) {
        perm.resize(n);
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        Rng rng(derive_seed(cfg_.seed, {stream, static_cast<std::uint64_t>(epoch)}));
        shuffle(perm, rng);
        perm_epoch = epoch;
    }
    return perm[static_cast<std::size_t>(slot % static_cast<std::int64_t>(n))];
}

std::vector<std::size_t> BatchSampler::source_indices(std::int64_t iteration) {
    std::vector<std::size_t> out;
    for (int k = 0; k < cfg_.batch_size; ++k) {
        out.push_back(index_of(kSourceOrder, source_.size(), iteration * cfg_.batch_size + k, src_perm_, src_epoch_));
    }
    return out;
}

std::vector<std::size_t> BatchSampler::target_indices(std::int64_t iteration) {
    if (target_.empty()) throw ConfigError("target dataset is empty");
    std::vector<std::size_t> out;
    for (int k = 0; k < cfg_.batch_size; ++k) {
        out.push_back(index_of(kTargetOrder, target_.size(), iteration * cfg_.batch_size + k, tgt_perm_, tgt_epoch_));
    }
    return out;
}

SourceBatch<float> BatchSampler::source_batch(std::int64_t iteration) {
    const auto idx = source_indices(iteration);
    std::vector<Tensor<float>> images, dens, masks;
    for (std::size_t k = 0; k < idx.size(); ++k) {
        const auto& s = source_.samples[idx[k]];
        const auto slot = static_cast<std::uint64_t>(iteration * cfg_.batch_size + static_cast<std::int64_t>(k));
        const auto win =
            choose_crop(s.image.height, s.image.width, cfg_.crop_h, cfg_.crop_w, derive_seed(cfg_.seed, {kSourceCrop, slot}));
        images.push_back(image_tensor<float>(crop(s.image, win)));
        masks.push_back(mask_tensor<float>(crop(s.mask, win)));
        const DensityMap& full = source_density_[idx[k]];
        DensityMap d(win.height, win.width);
        for (int r = 0; r < win.height; ++r) {
            for (int c = 0; c < win.width; ++c) d.at(r, c) = full.at(win.row + r, win.col + c);
        }
        dens.push_back(density_tensor<float>(d));
    }
    return {stack(images), stack(dens), stack(masks)};
}

TargetBatch<float> BatchSampler::target_batch(std::int64_t iteration) {
    const auto idx = target_indices(iteration);
    std::vector<Tensor<float>> images, masks;
    for (std::size_t k = 0; k < idx.size(); ++k) {
        const UnlabeledTarget& t = target_[idx[k]];
        const auto slot = static_cast<std::uint64_t>(iteration * cfg_.batch_size + static_cast<std::int64_t>(k));
        const auto win = choose_crop(t.image->height, t.image->width, cfg_.crop_h, cfg_.crop_w,
                                     derive_seed(cfg_.seed, {kTargetCrop, slot}));
        images.push_back(image_tensor<float>(crop(*t.image, win)));
        masks.push_back(mask_tensor<float>(crop(*t.mask, win)));
    }
    return {stack(images), stack(masks)};
}

// ---------------------------------------------------------------------------
// one iteration

template <typename T>
GeneratorPass<T> generator_pass(Model<T>& model, const SourceBatch<T>& src, const TargetBatch<T>* tgt,
                                const LossWeights& w, bool adapt) {
    model.zero_grad();
    const double eps = model.arch.prob_eps;
    GeneratorPass<T> out;

    typename FeatureExtractor<T>::Trace e_src;
    out.source_features = model.extractor.forward(src.images, Mode::train, &e_src);
    typename DensityEstimator<T>::Trace c_trace;
    const Tensor<T> y_hat = model.density.forward(out.source_features, Mode::train, &c_trace);
    const auto den = density_loss(y_hat, src.density);
    Tensor<T> d_fs = model.density.backward(den.grad, c_trace);

    LossComponents parts;
    parts.den = static_cast<double>(den.value);
    if (!adapt) {
        model.extractor.backward(d_fs, e_src);
        if (!std::isfinite(parts.den)) throw NumericError("non-finite loss component 'den'");
        out.record.den = parts.den;
        out.record.total = parts.den;
        return out;
    }
    if (tgt == nullptr) throw ConfigError("adaptation needs a target batch");

    typename SemanticExtractor<T>::Trace s_src;
    const Tensor<T> z_s = model.semantic.forward(out.source_features, Mode::train, &s_src);
    auto seg_s = source_seg_loss(z_s, src.masks, eps);
    scale(seg_s.grad, w.lambda_s);
    d_fs += model.semantic.backward(seg_s.grad, s_src);
    parts.seg_s = static_cast<double>(seg_s.value);

    typename FeatureExtractor<T>::Trace e_tgt;
    out.target_features = model.extractor.forward(tgt->images, Mode::train, &e_tgt);
    typename SemanticExtractor<T>::Trace s_tgt;
    const Tensor<T> z_t = model.semantic.forward(out.target_features, Mode::train, &s_tgt);
    auto seg_t = target_seg_loss(z_t, tgt->masks, eps);
    scale(seg_t.grad, w.lambda_t);
    Tensor<T> d_ft = model.semantic.backward(seg_t.grad, s_tgt);
    parts.seg_t = static_cast<double>(seg_t.value);

    typename Discriminator<T>::Trace d_tgt;
    const Tensor<T> p_t = model.discriminator.forward(out.target_features, Mode::train, &d_tgt);
    auto adv = adversarial_loss(p_t, eps);
    scale(adv.grad, w.lambda_d);
    d_ft += model.discriminator.backward(adv.grad, d_tgt, true);
    parts.adv = static_cast<double>(adv.value);

    model.extractor.backward(d_fs, e_src);
    model.extractor.backward(d_ft, e_tgt);
    // D stays frozen in this phase; drop what the adversarial backward left behind.
    model.for_each_param(ParamGroup::discriminator, [](Param<T>& p) { p.grad.zero(); });

    out.record = total_loss(parts, w);
    return out;
}

template <typename T>
T discriminator_pass(Model<T>& model, const Tensor<T>& source_features, const Tensor<T>& target_features) {
    model.for_each_param(ParamGroup::discriminator, [](Param<T>& p) { p.grad.zero(); });
    typename Discriminator<T>::Trace ts, tt;
    const Tensor<T> p_s = model.discriminator.forward(source_features, Mode::train, &ts);
    const Tensor<T> p_t = model.discriminator.forward(target_features, Mode::train, &tt);
    const auto loss = discriminator_loss(p_s, p_t, model.arch.prob_eps);
    model.discriminator.backward(loss.grad_source, ts, false);
    model.discriminator.backward(loss.grad_target, tt, false);
    return loss.value;
}

template <typename T>
LossRecord train_step(const SourceBatch<T>& src, const TargetBatch<T>& tgt, TrainState<T>& st,
                      const TrainConfig& cfg, const PhaseObserver& on_phase) {
    auto& model = st.model;
    auto gen = generator_pass(model, src, cfg.adapt ? &tgt : nullptr, cfg.weights, cfg.adapt);
    check_finite_grads(model, ParamGroup::extractor);
    check_finite_grads(model, ParamGroup::density);
    if (cfg.adapt) check_finite_grads(model, ParamGroup::semantic);

    st.opt_e.step(model.params(ParamGroup::extractor));
    st.opt_c.step(model.params(ParamGroup::density));
    if (cfg.adapt) st.opt_s.step(model.params(ParamGroup::semantic));
    if (on_phase) on_phase(TrainPhase::generator);
    if (cfg.adapt) {
        const T disc = discriminator_pass(model, gen.source_features, gen.target_features);
        if (!std::isfinite(static_cast<double>(disc))) {
            throw NumericError("non-finite discriminator loss");
        }
        check_finite_grads(model, ParamGroup::discriminator);
        st.opt_d.step(model.params(ParamGroup::discriminator));
        gen.record.disc = static_cast<double>(disc);
        if (on_phase) on_phase(TrainPhase::discriminator);
    }
    ++st.iteration;
    return gen.record;
}

// ---------------------------------------------------------------------------
// checkpoints

void save_checkpoint(const std::filesystem::path& path, TrainState<float>& st, const TrainConfig& cfg) {
    TensorArchive ar;
    for (auto g : kGroups) {
        auto params = st.model.params(g);
        auto& opt = st.optimizer(g);
        opt.ensure(params);
        ar.put_int("opt/step/" + std::string(group_prefix(g)), opt.steps());
        for (std::size_t i = 0; i < params.size(); ++i) {
            ar.put(params[i]->name, params[i]->value);
            if (params[i]->trainable) {
                ar.put("opt/m/" + params[i]->name, opt.first_moments()[i]);
                ar.put("opt/v/" + params[i]->name, opt.second_moments()[i]);
            }
        }
    }
    std::ostringstream adam;
    adam.precision(17);
    adam << "beta1=" << cfg.beta1 << ";beta2=" << cfg.beta2 << ";eps=" << cfg.adam_eps;
    ar.put_int("meta/iteration", st.iteration);
    ar.put_int("meta/seed", static_cast<std::int64_t>(st.seed));
    ar.put_int("meta/config_hash", static_cast<std::int64_t>(cfg.hash()));
    ar.put_string("meta/arch", cfg.arch.describe());
    ar.put_string("meta/config", cfg.canonical());
    ar.put_string("meta/adam", adam.str());
    if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
    ar.save(path);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
    const TensorArchive ar = TensorArchive::load(path);
    LoadedCheckpoint out;
    try {
        out.config = parse_run_config(ar.get_string("meta/config"), path.string()).train;
    } catch (const ConfigError& e) {
        throw LoadError(std::string("checkpoint config unreadable: ") + e.what());
    }
    if (ar.get_string("meta/arch") != out.config.arch.describe()) {
        throw LoadError("checkpoint arch metadata disagrees with its config");
    }
    out.config_hash = static_cast<std::uint64_t>(ar.get_int("meta/config_hash"));
    auto& st = out.state;
    try {
        st.model = Model<float>(out.config.arch);
    } catch (const ConfigError& e) {
        throw LoadError(std::string("checkpoint arch invalid: ") + e.what());
    }
    st.iteration = ar.get_int("meta/iteration");
    st.seed = static_cast<std::uint64_t>(ar.get_int("meta/seed"));
    if (st.iteration < 0) throw LoadError("checkpoint iteration is negative");
    configure_optimizers(st, out.config);

    auto fetch = [&](const std::string& name, const Shape& shape) {
        Tensor<float> t = ar.get<float>(name);
        if (t.shape() != shape) {
            throw LoadError("checkpoint tensor " + name + " has shape " + t.shape().str() + ", expected " +
                            shape.str());
        }
        return t;
    };
    for (auto g : kGroups) {
        auto params = st.model.params(g);
        auto& opt = st.optimizer(g);
        opt.set_steps(ar.get_int("opt/step/" + std::string(group_prefix(g))));
        for (std::size_t i = 0; i < params.size(); ++i) {
            Param<float>& p = *params[i];
            p.value = fetch(p.name, p.value.shape());
            if (p.trainable) {
                opt.first_moments()[i] = fetch("opt/m/" + p.name, p.value.shape());
                opt.second_moments()[i] = fetch("opt/v/" + p.name, p.value.shape());
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// loss log

std::string loss_csv_header() { return "iter,den,seg_s,seg_t,adv,total,disc"; }

std::string loss_csv_row(std::int64_t iteration, const LossRecord& r) {
    std::ostringstream os;
    os.precision(9);
    auto opt = [&](const std::optional<double>& v) {
        os << ',';
        if (v) os << *v;
    };
    os << iteration << ',' << r.den;
    opt(r.seg_s);
    opt(r.seg_t);
    opt(r.adv);
    os << ',' << r.total;
    opt(r.disc);
    return os.str();
}

LossLog::LossLog(const std::filesystem::path& path, bool append) : path_(path) {
    if (append && std::filesystem::exists(path)) return;
    if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << loss_csv_header() << '\n';
}

void LossLog::write(std::int64_t iteration, const LossRecord& r) {
    std::ofstream out(path_, std::ios::app);
    if (!out) throw ConfigError("cannot write " + path_.string());
    out << loss_csv_row(iteration, r) << '\n';
}

// ---------------------------------------------------------------------------
// training loop

TrainState<float> train(const TrainConfig& cfg, const SourceDataset& source, const TargetDataset& target,
                        const TrainOutputs& out, std::optional<TrainState<float>> resume,
                        const RecordCallback& on_record) {
    cfg.validate();
    SourceDataset filtered;
    const SourceDataset* src = &source;
    if (!cfg.scene_filter.empty()) {
        filtered = scene_regularization_filter(source, parse_scene_predicate(cfg.scene_filter));
        if (filtered.empty()) throw ConfigError("scene filter '" + cfg.scene_filter + "' removed every source scene");
        src = &filtered;
    }
    BatchSampler sampler(*src, target, cfg);

    TrainState<float> st;
    if (resume) {
        st = std::move(*resume);
        if (!(st.model.arch == cfg.arch)) throw ConfigError("resume state architecture differs from config");
        st.seed = cfg.seed;
        configure_optimizers(st, cfg);
    } else {
        st = make_train_state<float>(cfg);
    }

    std::optional<LossLog> log;
    if (!out.out_dir.empty()) {
        std::filesystem::create_directories(out.out_dir);
        log.emplace(out.out_dir / "loss.csv", resume.has_value());
    }
    while (st.iteration < cfg.iters) {
        const std::int64_t it = st.iteration;
        const auto sb = sampler.source_batch(it);
        const auto tb = cfg.adapt ? sampler.target_batch(it) : TargetBatch<float>{};
        const LossRecord rec = train_step(sb, tb, st, cfg);
        if (log) log->write(st.iteration, rec);
        if (on_record) on_record(st.iteration, rec);
        if (!out.out_dir.empty() && cfg.checkpoint_every > 0 && st.iteration % cfg.checkpoint_every == 0) {
            save_checkpoint(out.out_dir / ("ckpt_" + std::to_string(st.iteration) + ".bin"), st, cfg);
        }
    }
    if (!out.out_dir.empty()) save_checkpoint(out.out_dir / "final.bin", st, cfg);
    return st;
}

// ---------------------------------------------------------------------------
// gradient check

GradCheckResult gradient_check(const GradProbe& probe, const std::vector<Param<double>*>& params, int n_coords,
                               double step, std::uint64_t seed) {
    if (!(step > 0.0) || !std::isfinite(step)) throw ConfigError("gradient_check: step must be > 0");
    if (n_coords < 1) throw ConfigError("gradient_check: n_coords must be >= 1");
    std::vector<std::pair<Param<double>*, std::size_t>> pool;
    std::size_t total = 0;
    for (auto* p : params) {
        if (p->trainable) total += p->value.size();
    }
    if (total == 0) throw ConfigError("gradient_check: no trainable coordinates");

    std::uint64_t base_kinks = 0;
    double base = 0.0;
    {
        KinkRecorder rec;
        base = probe(true);
        base_kinks = rec.signature();
    }
    if (!std::isfinite(base)) throw NumericError("gradient_check: non-finite probe value");
    // snapshot the analytic gradient before the probe is re-evaluated
    std::vector<Tensor<double>> analytic;
    for (auto* p : params) analytic.push_back(p->grad);

    auto eval = [&](std::uint64_t& kinks) {
        KinkRecorder rec;
        const double v = probe(false);
        kinks = rec.signature();
        return v;
    };

    Rng rng(derive_seed(seed, {0x4743ULL}));
    GradCheckResult res;
    const std::size_t max_draws = 50 * static_cast<std::size_t>(n_coords);
    for (std::size_t draw = 0; res.coords < static_cast<std::size_t>(n_coords); ++draw) {
        if (draw == max_draws) {
            throw NumericError("gradient_check: " + std::to_string(res.skipped) +
                               " sampled coordinates sit within one step of a kink");
        }
        std::size_t flat = static_cast<std::size_t>(rng.next() % total);
        std::size_t pi = 0;
        for (; pi < params.size(); ++pi) {
            if (!params[pi]->trainable) continue;
            if (flat < params[pi]->value.size()) break;
            flat -= params[pi]->value.size();
        }
        Param<double>& p = *params[pi];
        const double orig = p.value[flat];
        std::uint64_t kinks_up = 0;
        std::uint64_t kinks_down = 0;
        p.value[flat] = orig + step;
        const double up = eval(kinks_up);
        p.value[flat] = orig - step;
        const double down = eval(kinks_down);
        p.value[flat] = orig;
        if (!std::isfinite(up) || !std::isfinite(down)) throw NumericError("gradient_check: non-finite probe value");
        // a branch flip inside [x - h, x + h] makes the central difference meaningless there
        if (kinks_up != base_kinks || kinks_down != base_kinks) {
            ++res.skipped;
            continue;
        }
        const double numeric = (up - down) / (2.0 * step);
        const double a = analytic[pi][flat];
        const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
        if (res.coords == 0 || rel > res.max_rel_error) {
            res.max_rel_error = rel;
            res.worst = p.name + "[" + std::to_string(flat) + "]";
        }
        ++res.coords;
    }
    return res;
}

#define CROWDSCA_INSTANTIATE(T)                                                                                    \
    template class Adam<T>;                                                                                        \
    template struct TrainState<T>;                                                                                 \
    template TrainState<T> make_train_state<T>(const TrainConfig&);                                                \
    template Tensor<T> image_tensor<T>(const CrowdImage&);                                                         \
    template Tensor<T> mask_tensor<T>(const CrowdMask&);                                                           \
    template Tensor<T> density_tensor<T>(const DensityMap&);                                                       \
    template Tensor<T> stack<T>(const std::vector<Tensor<T>>&);                                                    \
    template GeneratorPass<T> generator_pass<T>(Model<T>&, const SourceBatch<T>&, const TargetBatch<T>*,           \
                                                const LossWeights&, bool);                                         \
    template T discriminator_pass<T>(Model<T>&, const Tensor<T>&, const Tensor<T>&);                               \
    template LossRecord train_step<T>(const SourceBatch<T>&, const TargetBatch<T>&, TrainState<T>&, const TrainConfig&, \
                                      const PhaseObserver&);

CROWDSCA_INSTANTIATE(float)
CROWDSCA_INSTANTIATE(double)
#undef CROWDSCA_INSTANTIATE

}  // namespace crowdsca
