#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "crowdsca/datamodel.hpp"
#include "crowdsca/density.hpp"
#include "crowdsca/networks.hpp"

namespace crowdsca {

inline constexpr double kPsnrCap = 99.0;

/// (MAE, MSE) over per-image counts, where MSE is the root of the mean squared error.
/// Throws ValidationError on empty or unequal lists.
std::pair<double, double> mae_mse(const std::vector<double>& preds, const std::vector<double>& gts);

struct PsnrResult {
    double db = 0.0;
    bool capped = false;  // true when the error was zero (or PSNR exceeded the cap)
};

/// Both maps divided by max(gt) (floored at 1e-8); peak value 1.
PsnrResult psnr(const DensityMap& pred, const DensityMap& gt);

/// Mean SSIM over all valid 11x11 Gaussian (sigma 1.5) windows, K1 = 0.01, K2 = 0.03,
/// same normalization as psnr. Throws ValidationError for maps smaller than the window.
double ssim(const DensityMap& pred, const DensityMap& gt);

/// Divides a copy of `map` by max(gt) (floor 1e-8).
DensityMap normalize_by_gt(const DensityMap& map, const DensityMap& gt);

struct PredictOptions {
    int tile_cap = 1024;  // images larger than this in either dim are split into tiles
};

/// Eval-mode forward pass of E and C on one image. Dimensions that are not multiples of
/// 8 are reflect-padded on the bottom/right and the prediction cropped back.
DensityMap predict_density(Model<float>& model, const CrowdImage& image, const PredictOptions& opt = {});

/// What evaluation needs per sample. Prediction only ever receives `image`.
struct EvalSample {
    std::string id;
    const CrowdImage* image = nullptr;
    const HeadPoints* heads = nullptr;
};

/// Throws ValidationError when a target sample has no held-out heads.
std::vector<EvalSample> eval_view(const TargetDataset& ds);
std::vector<EvalSample> eval_view(const SourceDataset& ds);

struct ImageMetrics {
    std::string id;
    double gt_count = 0.0;
    double pred_count = 0.0;
    double psnr = 0.0;
    bool psnr_capped = false;
    double ssim = 0.0;
};

struct MetricsReport {
    double mae = 0.0;
    double mse = 0.0;
    double psnr = 0.0;  // mean over images, capped values included as 99
    bool psnr_capped = false;  // any image hit the cap
    double ssim = 0.0;  // mean over images
    int n_images = 0;
    std::vector<ImageMetrics> rows;  // sorted by id
};

struct EvalOptions {
    KernelConfig kernel;
    PredictOptions predict;
};

/// Called with each prediction and its ground truth, e.g. to export visualizations.
using MapCallback = std::function<void(const std::string& id, const DensityMap& pred, const DensityMap& gt)>;

/// Predictor seam: any function from image to density map.
using Predictor = std::function<DensityMap(const CrowdImage&)>;

MetricsReport evaluate(const Predictor& predict, const std::vector<EvalSample>& samples, const EvalOptions& opt = {},
                       const MapCallback& on_map = {});
MetricsReport evaluate(Model<float>& model, const std::vector<EvalSample>& samples, const EvalOptions& opt = {},
                       const MapCallback& on_map = {});

void write_report_json(const std::filesystem::path& path, const MetricsReport& r);
void write_report_csv(const std::filesystem::path& path, const MetricsReport& r);

}  // namespace crowdsca
