#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "crowdsca/config.hpp"
#include "crowdsca/datamodel.hpp"
#include "crowdsca/density.hpp"
#include "crowdsca/losses.hpp"
#include "crowdsca/networks.hpp"

namespace crowdsca {

/// Adam over one parameter group. Non-trainable params (running stats) are skipped.
template <typename T>
class Adam {
public:
    Adam() = default;
    Adam(double lr, double beta1, double beta2, double eps) : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    /// Replaces the hyperparameters, keeping moments and step count.
    void configure(double lr, double beta1, double beta2, double eps) {
        lr_ = lr;
        beta1_ = beta1;
        beta2_ = beta2;
        eps_ = eps;
    }

    void step(const std::vector<Param<T>*>& params);

    [[nodiscard]] std::int64_t steps() const { return t_; }
    std::vector<Tensor<T>>& first_moments() { return m_; }
    std::vector<Tensor<T>>& second_moments() { return v_; }
    void set_steps(std::int64_t t) { t_ = t; }
    /// Allocates zero moments matching params (idempotent).
    void ensure(const std::vector<Param<T>*>& params);

private:
    double lr_ = 1e-5;
    double beta1_ = 0.9;
    double beta2_ = 0.999;
    double eps_ = 1e-8;
    std::int64_t t_ = 0;
    std::vector<Tensor<T>> m_;
    std::vector<Tensor<T>> v_;
};

/// Parameters, per-group optimizer moments, and the iteration counter. Data
/// order and crops derive from (seed, iteration), so this is the full RNG state.
template <typename T>
struct TrainState {
    Model<T> model;
    Adam<T> opt_e;
    Adam<T> opt_c;
    Adam<T> opt_s;
    Adam<T> opt_d;
    std::int64_t iteration = 0;
    std::uint64_t seed = 0;

    Adam<T>& optimizer(ParamGroup g);
};

template <typename T>
TrainState<T> make_train_state(const TrainConfig& cfg);

/// Source batch: images, ground-truth densities, exact masks.
template <typename T>
struct SourceBatch {
    Tensor<T> images;   // (N,3,H,W)
    Tensor<T> density;  // (N,1,H,W)
    Tensor<T> masks;    // (N,1,H,W) in {0,1}
};

/// Target batch: images and coarse masks only. There is no field for head
/// annotations, so the training path cannot read target supervision.
template <typename T>
struct TargetBatch {
    Tensor<T> images;
    Tensor<T> masks;
};

/// The slice of a target sample that training may see.
struct UnlabeledTarget {
    const CrowdImage* image;
    const CrowdMask* mask;
};
std::vector<UnlabeledTarget> unlabeled_view(const TargetDataset& ds);

/// Single-sample (1,C,H,W) tensors.
template <typename T>
Tensor<T> image_tensor(const CrowdImage& img);
template <typename T>
Tensor<T> mask_tensor(const CrowdMask& mask);
template <typename T>
Tensor<T> density_tensor(const DensityMap& d);
/// Concatenates (1,C,H,W) tensors along the batch axis.
template <typename T>
Tensor<T> stack(const std::vector<Tensor<T>>& items);

/// Output of the generator-side pass: losses plus detached features for the discriminator phase.
template <typename T>
struct GeneratorPass {
    LossRecord record;
    Tensor<T> source_features;
    Tensor<T> target_features;
};

/// Forward + backward of the weighted objective through E, C, S and (frozen) D.
/// Zeroes all gradients first; leaves gradients for theta_e/c/s populated.
/// Discriminator gradients are cleared before returning. No parameter changes
/// other than normalization running statistics.
template <typename T>
GeneratorPass<T> generator_pass(Model<T>& model, const SourceBatch<T>& src, const TargetBatch<T>* tgt,
                                const LossWeights& w, bool adapt);

/// Discriminator loss on detached features; zeroes, then fills, theta_d gradients only.
template <typename T>
T discriminator_pass(Model<T>& model, const Tensor<T>& source_features, const Tensor<T>& target_features);

/// One alternating iteration: generator update of theta_e/c/s (Adam, lr_main),
/// then discriminator update of theta_d (Adam, lr_disc). Baseline mode touches
/// only theta_e/c. Throws NumericError (before any update) on a non-finite loss.
enum class TrainPhase { generator, discriminator };
/// Called after each phase's parameter update within a step.
using PhaseObserver = std::function<void(TrainPhase)>;

template <typename T>
LossRecord train_step(const SourceBatch<T>& src, const TargetBatch<T>& tgt, TrainState<T>& st, const TrainConfig& cfg,
                      const PhaseObserver& on_phase = {});

/// Deterministic batch schedule: shuffled epochs per domain (independent cycles) and
/// per-slot crop windows, all derived from (seed, iteration).
class BatchSampler {
public:
    BatchSampler(const SourceDataset& source, const TargetDataset& target, const TrainConfig& cfg);

    SourceBatch<float> source_batch(std::int64_t iteration);
    TargetBatch<float> target_batch(std::int64_t iteration);
    /// Indices drawn for a given iteration (for tests).
    std::vector<std::size_t> source_indices(std::int64_t iteration);
    std::vector<std::size_t> target_indices(std::int64_t iteration);

private:
    std::size_t index_of(std::uint64_t stream, std::size_t n, std::int64_t slot, std::vector<std::size_t>& perm,
                         std::int64_t& perm_epoch) const;

    const SourceDataset& source_;
    std::vector<DensityMap> source_density_;  // full-image maps, cropped per batch
    std::vector<UnlabeledTarget> target_;
    TrainConfig cfg_;
    std::vector<std::size_t> src_perm_, tgt_perm_;
    std::int64_t src_epoch_ = -1, tgt_epoch_ = -1;
};

// ---------------------------------------------------------------------------
// checkpoints and logs

/// Keys: theta_e/*, theta_c/*, theta_s/*, theta_d/* (parameter names), opt/step/<group>,
/// opt/m/<param>, opt/v/<param>, meta/{iteration, seed, config_hash, arch, config, adam}.
void save_checkpoint(const std::filesystem::path& path, TrainState<float>& st, const TrainConfig& cfg);

struct LoadedCheckpoint {
    TrainState<float> state;
    TrainConfig config;  // settings the checkpoint was trained with
    std::uint64_t config_hash = 0;
};
/// Throws LoadError on a corrupt file or missing/mis-shaped tensors.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

/// CSV writer for "iter,den,seg_s,seg_t,adv,total,disc"; absent values are empty fields.
class LossLog {
public:
    explicit LossLog(const std::filesystem::path& path, bool append = false);
    void write(std::int64_t iteration, const LossRecord& r);

private:
    std::filesystem::path path_;
};
std::string loss_csv_header();
std::string loss_csv_row(std::int64_t iteration, const LossRecord& r);

struct TrainOutputs {
    std::filesystem::path out_dir;  // empty: keep everything in memory
};

using RecordCallback = std::function<void(std::int64_t iteration, const LossRecord&)>;

/// Runs cfg.iters iterations (continuing from `resume` when given). Writes
/// out_dir/ckpt_<iter>.bin every checkpoint_every iterations, out_dir/final.bin,
/// and out_dir/loss.csv when out_dir is set.
TrainState<float> train(const TrainConfig& cfg, const SourceDataset& source, const TargetDataset& target,
                        const TrainOutputs& out = {}, std::optional<TrainState<float>> resume = std::nullopt,
                        const RecordCallback& on_record = {});

// ---------------------------------------------------------------------------
// gradient verification

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t coords = 0;
    std::size_t skipped = 0;  // draws rejected because a step crossed a kink
    std::string worst;        // "<param>[index]"
};

/// Scalar probe of the parameters. When with_grad is true it must also leave
/// d(probe)/d(param) in each Param::grad (after zeroing).
using GradProbe = std::function<double(bool with_grad)>;

/// Compares analytic gradients against central differences at n_coords sampled
/// coordinates of the given params. rel = |a - n| / max(|a|, |n|, 1e-8).
/// Coordinates whose +/- step changes any ReLU, max-pool or clamp branch
/// (see KinkRecorder) are redrawn; after 50 * n_coords draws NumericError is thrown.
/// Throws ConfigError for step <= 0 and NumericError for a non-finite probe.
GradCheckResult gradient_check(const GradProbe& probe, const std::vector<Param<double>*>& params, int n_coords,
                               double step, std::uint64_t seed = 0);

}  // namespace crowdsca
