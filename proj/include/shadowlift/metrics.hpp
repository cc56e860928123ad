#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "json.hpp"
#include "shadowlift/data_io.hpp"
#include "shadowlift/image.hpp"

namespace shadowlift {

// PSNR of identical images; serialized as "inf".
constexpr double kPsnrInf = std::numeric_limits<double>::infinity();

// Both metrics quantize [-1, 1] values to 8-bit and use data range 255.
double psnr(const Image& a, const Image& b);
// Gaussian window 11, sigma 1.5, K1 = 0.01, K2 = 0.03; mean over valid
// window positions, then over channels.
double ssim(const Image& a, const Image& b);

struct EvalProtocol {
    int eval_size = 256;
    ResizeMethod resize_method = ResizeMethod::bicubic_antialias;
};

// Resizes both images to the protocol size and scores them.
std::pair<double, double> score_pair(const Image& prediction, const Image& target, const EvalProtocol& protocol);

struct MetricsRow {
    std::string image_id;
    double psnr_db = 0.0;
    double ssim = 0.0;
    bool failed = false;
    std::string error;
};

struct MetricsRecord {
    std::string label;
    std::vector<MetricsRow> rows;
    // Means over rows that did not fail.
    double mean_psnr = 0.0;
    double mean_ssim = 0.0;
    int count = 0;
    EvalProtocol protocol;
};

// (input image, seed) -> prediction.
using ModelFn = std::function<Image(const Image&, std::uint64_t)>;

// Scores model(x, seed) against y for every pair; model exceptions become
// failed rows. Throws empty_dataset when there is nothing to score.
MetricsRecord evaluate(const ModelFn& model, const PairDataset& dataset, std::uint64_t seed,
                       const EvalProtocol& protocol = {});

struct ImageVariance {
    std::string image_id;
    double psnr_variance = 0.0;
    double mean_psnr = 0.0;
};

// Population (divide-by-N) variance of per-seed PSNR, averaged over images.
struct VarianceReport {
    std::vector<std::uint64_t> seeds;
    std::vector<ImageVariance> per_image;
    double mean_variance = 0.0;
    double mean_psnr = 0.0;
};

std::vector<std::uint64_t> default_seeds();  // 1..5
double population_variance(const std::vector<double>& values);

VarianceReport seed_variance(const ModelFn& model, const PairDataset& dataset, const std::vector<std::uint64_t>& seeds,
                             const EvalProtocol& protocol = {});

// "A→B"; an empty train tag becomes "unknown" with a warning on stderr.
std::string cross_label(const std::string& train_tag, const std::string& test_tag);
MetricsRecord cross_dataset_eval(const ModelFn& model, const std::string& train_tag, const PairDataset& dataset,
                                 const std::string& test_tag, std::uint64_t seed, const EvalProtocol& protocol = {});

// Numbers with the inf sentinel as a string.
nlohmann::json metric_value(double v);
std::string format_metric(double v);

nlohmann::json metrics_json(const MetricsRecord& record);
nlohmann::json variance_json(const VarianceReport& report);
void write_metrics_csv(const std::filesystem::path& path, const MetricsRecord& record);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace shadowlift
