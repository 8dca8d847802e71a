#include "crowdsca/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>

#include "crowdsca/errors.hpp"

namespace crowdsca {

namespace {

constexpr int kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;
constexpr double kNormFloor = 1e-8;

void check_same(const DensityMap& a, const DensityMap& b, const char* what) {
    if (a.height != b.height || a.width != b.width) {
        throw ValidationError(std::string(what) + ": map shapes differ");
    }
}

std::vector<double> gaussian_window_1d() {
    std::vector<double> w(kSsimWindow);
    double sum = 0.0;
    for (int i = 0; i < kSsimWindow; ++i) {
        const double d = i - kSsimWindow / 2;
        w[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
        sum += w[i];
    }
    for (auto& v : w) v /= sum;
    return w;
}

// Valid-mode separable filtering with the SSIM window.
std::vector<double> filter_valid(const std::vector<double>& x, int h, int w, const std::vector<double>& k) {
    const int oh = h - kSsimWindow + 1;
    const int ow = w - kSsimWindow + 1;
    std::vector<double> rows(static_cast<std::size_t>(h) * ow);
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < ow; ++c) {
            double s = 0.0;
            for (int j = 0; j < kSsimWindow; ++j) s += k[j] * x[static_cast<std::size_t>(r) * w + c + j];
            rows[static_cast<std::size_t>(r) * ow + c] = s;
        }
    }
    std::vector<double> out(static_cast<std::size_t>(oh) * ow);
    for (int r = 0; r < oh; ++r) {
        for (int c = 0; c < ow; ++c) {
            double s = 0.0;
            for (int i = 0; i < kSsimWindow; ++i) s += k[i] * rows[static_cast<std::size_t>(r + i) * ow + c];
            out[static_cast<std::size_t>(r) * ow + c] = s;
        }
    }
    return out;
}

int reflect(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * (n - 1);
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - i;
}

}  // namespace

std::pair<double, double> mae_mse(const std::vector<double>& preds, const std::vector<double>& gts) {
    if (preds.empty() || preds.size() != gts.size()) {
        throw ValidationError("mae_mse: need equal, non-empty count lists");
    }
    double abs_sum = 0.0;
    double sq_sum = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const double e = gts[i] - preds[i];
        abs_sum += std::abs(e);
        sq_sum += e * e;
    }
    const double n = static_cast<double>(preds.size());
    return {abs_sum / n, std::sqrt(sq_sum / n)};
}

DensityMap normalize_by_gt(const DensityMap& map, const DensityMap& gt) {
    double peak = kNormFloor;
    for (double v : gt.values) peak = std::max(peak, v);
    DensityMap out = map;
    for (auto& v : out.values) v /= peak;
    return out;
}

PsnrResult psnr(const DensityMap& pred, const DensityMap& gt) {
    check_same(pred, gt, "psnr");
    if (gt.values.empty()) throw ValidationError("psnr: empty maps");
    const DensityMap p = normalize_by_gt(pred, gt);
    const DensityMap g = normalize_by_gt(gt, gt);
    double sq = 0.0;
    for (std::size_t i = 0; i < p.values.size(); ++i) {
        const double e = p.values[i] - g.values[i];
        sq += e * e;
    }
    const double mse = sq / static_cast<double>(p.values.size());
    if (mse == 0.0) return {kPsnrCap, true};
    const double db = 10.0 * std::log10(1.0 / mse);
    if (db > kPsnrCap) return {kPsnrCap, true};
    return {db, false};
}

double ssim(const DensityMap& pred, const DensityMap& gt) {
    check_same(pred, gt, "ssim");
    if (gt.height < kSsimWindow || gt.width < kSsimWindow) {
        throw ValidationError("ssim: maps must be at least 11x11");
    }
    const DensityMap p = normalize_by_gt(pred, gt);
    const DensityMap g = normalize_by_gt(gt, gt);
    const int h = gt.height;
    const int w = gt.width;
    const auto k = gaussian_window_1d();
    std::vector<double> xx(p.values.size()), yy(p.values.size()), xy(p.values.size());
    for (std::size_t i = 0; i < p.values.size(); ++i) {
        xx[i] = p.values[i] * p.values[i];
        yy[i] = g.values[i] * g.values[i];
        xy[i] = p.values[i] * g.values[i];
    }
    const auto mx = filter_valid(p.values, h, w, k);
    const auto my = filter_valid(g.values, h, w, k);
    const auto sxx = filter_valid(xx, h, w, k);
    const auto syy = filter_valid(yy, h, w, k);
    const auto sxy = filter_valid(xy, h, w, k);
    const double c1 = 0.01 * 0.01;
    const double c2 = 0.03 * 0.03;
    double acc = 0.0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
        const double vx = sxx[i] - mx[i] * mx[i];
        const double vy = syy[i] - my[i] * my[i];
        const double cov = sxy[i] - mx[i] * my[i];
        acc += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2)) /
               ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
    }
    return acc / static_cast<double>(mx.size());
}

namespace {

DensityMap predict_tile(Model<float>& model, const Tensor<float>& x) {
    const Tensor<float> f = model.extractor.forward(x, Mode::eval, nullptr);
    const Tensor<float> y = model.density.forward(f, Mode::eval, nullptr);
    DensityMap d(y.h(), y.w());
    for (std::size_t i = 0; i < d.values.size(); ++i) d.values[i] = static_cast<double>(y[i]);
    return d;
}

}  // namespace

DensityMap predict_density(Model<float>& model, const CrowdImage& image, const PredictOptions& opt) {
    if (image.height < 1 || image.width < 1) throw ValidationError("predict_density: empty image");
    const int cap = opt.tile_cap / kFeatureStride * kFeatureStride;
    if (cap < kFeatureStride) throw ConfigError("tile cap must be at least 8");
    const int hp = (image.height + kFeatureStride - 1) / kFeatureStride * kFeatureStride;
    const int wp = (image.width + kFeatureStride - 1) / kFeatureStride * kFeatureStride;

    DensityMap full(hp, wp);
    for (int r0 = 0; r0 < hp; r0 += cap) {
        for (int c0 = 0; c0 < wp; c0 += cap) {
            const int th = std::min(cap, hp - r0);
            const int tw = std::min(cap, wp - c0);
            Tensor<float> x(Shape{1, 3, th, tw});
            for (int ch = 0; ch < 3; ++ch) {
                for (int r = 0; r < th; ++r) {
                    const int sr = reflect(r0 + r, image.height);
                    for (int c = 0; c < tw; ++c) {
                        x(0, ch, r, c) = image.at(ch, sr, reflect(c0 + c, image.width));
                    }
                }
            }
            const DensityMap tile = predict_tile(model, x);
            for (int r = 0; r < th; ++r) {
                for (int c = 0; c < tw; ++c) full.at(r0 + r, c0 + c) = tile.at(r, c);
            }
        }
    }
    if (hp == image.height && wp == image.width) return full;
    DensityMap out(image.height, image.width);
    for (int r = 0; r < image.height; ++r) {
        for (int c = 0; c < image.width; ++c) out.at(r, c) = full.at(r, c);
    }
    return out;
}

std::vector<EvalSample> eval_view(const TargetDataset& ds) {
    std::vector<EvalSample> out;
    for (const auto& s : ds.samples) {
        if (!s.heads) throw ValidationError("target sample " + s.id + " has no evaluation heads");
        out.push_back({s.id, &s.image, &*s.heads});
    }
    return out;
}

std::vector<EvalSample> eval_view(const SourceDataset& ds) {
    std::vector<EvalSample> out;
    for (const auto& s : ds.samples) out.push_back({s.id, &s.image, &s.heads});
    return out;
}

MetricsReport evaluate(const Predictor& predict, const std::vector<EvalSample>& samples, const EvalOptions& opt,
                       const MapCallback& on_map) {
    if (samples.empty()) throw ValidationError("evaluate: no samples");
    std::vector<const EvalSample*> order;
    for (const auto& s : samples) order.push_back(&s);
    std::stable_sort(order.begin(), order.end(), [](const auto* a, const auto* b) { return a->id < b->id; });

    MetricsReport rep;
    std::vector<double> preds, gts;
    double psnr_sum = 0.0;
    double ssim_sum = 0.0;
    for (const auto* s : order) {
        const DensityMap pred = predict(*s->image);
        const DensityMap gt = gaussian_density_map(*s->heads, s->image->height, s->image->width, opt.kernel);
        ImageMetrics row;
        row.id = s->id;
        row.gt_count = count_from_density(gt);
        row.pred_count = count_from_density(pred);
        const PsnrResult p = psnr(pred, gt);
        row.psnr = p.db;
        row.psnr_capped = p.capped;
        row.ssim = ssim(pred, gt);
        preds.push_back(row.pred_count);
        gts.push_back(row.gt_count);
        psnr_sum += row.psnr;
        ssim_sum += row.ssim;
        rep.psnr_capped = rep.psnr_capped || p.capped;
        if (on_map) on_map(s->id, pred, gt);
        rep.rows.push_back(std::move(row));
    }
    std::tie(rep.mae, rep.mse) = mae_mse(preds, gts);
    rep.n_images = static_cast<int>(rep.rows.size());
    rep.psnr = psnr_sum / rep.n_images;
    rep.ssim = ssim_sum / rep.n_images;
    return rep;
}

MetricsReport evaluate(Model<float>& model, const std::vector<EvalSample>& samples, const EvalOptions& opt,
                       const MapCallback& on_map) {
    return evaluate([&](const CrowdImage& img) { return predict_density(model, img, opt.predict); }, samples, opt,
                    on_map);
}

void write_report_json(const std::filesystem::path& path, const MetricsReport& r) {
    nlohmann::json j;
    j["mae"] = r.mae;
    j["mse"] = r.mse;
    j["psnr"] = r.psnr;
    j["psnr_capped"] = r.psnr_capped;
    j["ssim"] = r.ssim;
    j["n_images"] = r.n_images;
    auto& rows = j["images"] = nlohmann::json::array();
    for (const auto& row : r.rows) {
        rows.push_back({{"id", row.id},
                        {"gt_count", row.gt_count},
                        {"pred_count", row.pred_count},
                        {"psnr", row.psnr},
                        {"psnr_capped", row.psnr_capped},
                        {"ssim", row.ssim}});
    }
    if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

void write_report_csv(const std::filesystem::path& path, const MetricsReport& r) {
    if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write " + path.string());
    out.precision(10);
    out << "id,gt_count,pred_count,abs_error,psnr,psnr_capped,ssim\n";
    for (const auto& row : r.rows) {
        out << row.id << ',' << row.gt_count << ',' << row.pred_count << ',' << std::abs(row.gt_count - row.pred_count)
            << ',' << row.psnr << ',' << (row.psnr_capped ? 1 : 0) << ',' << row.ssim << '\n';
    }
}

}  // namespace crowdsca
