#include "shadowlift/metrics.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

#include "shadowlift/error.hpp"

namespace shadowlift {

namespace {

void require_same_dims(const Image& a, const Image& b, const char* what) {
    if (!a.same_dims(b))
        throw Error(Errc::shape_mismatch, std::string(what) + ": " + std::to_string(a.width) + "x" +
                                              std::to_string(a.height) + "x" + std::to_string(a.channels) + " vs " +
                                              std::to_string(b.width) + "x" + std::to_string(b.height) + "x" +
                                              std::to_string(b.channels));
}

std::vector<double> gaussian_window(int size, double sigma) {
    std::vector<double> w(static_cast<std::size_t>(size));
    const double c = (size - 1) / 2.0;
    double total = 0.0;
    for (int i = 0; i < size; ++i) total += w[i] = std::exp(-(i - c) * (i - c) / (2.0 * sigma * sigma));
    for (double& v : w) v /= total;
    return w;
}

// Valid-mode separable filtering of a single H x W plane.
std::vector<double> filter_valid(const std::vector<double>& plane, int h, int w, const std::vector<double>& k) {
    const int n = static_cast<int>(k.size()), ow = w - n + 1, oh = h - n + 1;
    std::vector<double> tmp(static_cast<std::size_t>(h) * ow), out(static_cast<std::size_t>(oh) * ow);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int i = 0; i < n; ++i) s += k[i] * plane[static_cast<std::size_t>(y) * w + x + i];
            tmp[static_cast<std::size_t>(y) * ow + x] = s;
        }
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int i = 0; i < n; ++i) s += k[i] * tmp[static_cast<std::size_t>(y + i) * ow + x];
            out[static_cast<std::size_t>(y) * ow + x] = s;
        }
    return out;
}

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace

double psnr(const Image& a, const Image& b) {
    require_same_dims(a, b, "psnr");
    double se = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = static_cast<double>(quantize_8bit(a.data[i])) - quantize_8bit(b.data[i]);
        se += d * d;
    }
    if (se == 0.0) return kPsnrInf;
    const double mse = se / static_cast<double>(a.data.size());
    return 10.0 * std::log10(255.0 * 255.0 / mse);
}

double ssim(const Image& a, const Image& b) {
    require_same_dims(a, b, "ssim");
    constexpr int kWin = 11;
    if (a.height < kWin || a.width < kWin)
        throw Error(Errc::invalid_range, "ssim needs images of at least 11x11");
    static const std::vector<double> window = gaussian_window(kWin, 1.5);
    const double c1 = (0.01 * 255.0) * (0.01 * 255.0), c2 = (0.03 * 255.0) * (0.03 * 255.0);
    const int h = a.height, w = a.width;
    const std::size_t n = static_cast<std::size_t>(h) * w;

    double total = 0.0;
    for (int c = 0; c < a.channels; ++c) {
        std::vector<double> pa(n), pb(n), aa(n), bb(n), ab(n);
        for (std::size_t i = 0; i < n; ++i) {
            pa[i] = quantize_8bit(a.data[i * a.channels + c]);
            pb[i] = quantize_8bit(b.data[i * b.channels + c]);
            aa[i] = pa[i] * pa[i];
            bb[i] = pb[i] * pb[i];
            ab[i] = pa[i] * pb[i];
        }
        const auto mu_a = filter_valid(pa, h, w, window), mu_b = filter_valid(pb, h, w, window);
        const auto e_aa = filter_valid(aa, h, w, window), e_bb = filter_valid(bb, h, w, window);
        const auto e_ab = filter_valid(ab, h, w, window);
        std::vector<double> map(mu_a.size());
        for (std::size_t i = 0; i < map.size(); ++i) {
            const double ma = mu_a[i], mb = mu_b[i];
            const double va = e_aa[i] - ma * ma, vb = e_bb[i] - mb * mb, cov = e_ab[i] - ma * mb;
            map[i] = ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
        total += mean_of(map);
    }
    return total / a.channels;
}

std::pair<double, double> score_pair(const Image& prediction, const Image& target, const EvalProtocol& protocol) {
    const Image p = quantized(resize(prediction, protocol.eval_size, protocol.eval_size, protocol.resize_method));
    const Image t = quantized(resize(target, protocol.eval_size, protocol.eval_size, protocol.resize_method));
    return {psnr(p, t), ssim(p, t)};
}

MetricsRecord evaluate(const ModelFn& model, const PairDataset& dataset, std::uint64_t seed,
                       const EvalProtocol& protocol) {
    if (dataset.empty()) throw Error(Errc::empty_dataset, "empty dataset");
    MetricsRecord rec;
    rec.protocol = protocol;
    double sum_psnr = 0.0, sum_ssim = 0.0;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const ImagePair pair = dataset.get(i);
        MetricsRow row;
        row.image_id = pair.id;
        try {
            const auto [p, s] = score_pair(model(pair.input, seed), pair.target, protocol);
            row.psnr_db = p;
            row.ssim = s;
            sum_psnr += p;
            sum_ssim += s;
            ++rec.count;
        } catch (const std::exception& e) {
            row.failed = true;
            row.psnr_db = row.ssim = std::numeric_limits<double>::quiet_NaN();
            row.error = e.what();
        }
        rec.rows.push_back(std::move(row));
    }
    if (rec.count == 0) throw Error(Errc::empty_dataset, "every image failed to evaluate");
    rec.mean_psnr = sum_psnr / rec.count;
    rec.mean_ssim = sum_ssim / rec.count;
    return rec;
}

std::vector<std::uint64_t> default_seeds() { return {1, 2, 3, 4, 5}; }

double population_variance(const std::vector<double>& values) {
    if (values.empty()) return 0.0;
    bool all_equal = true;
    for (double v : values) all_equal = all_equal && v == values.front();
    if (all_equal) return 0.0;
    const double m = mean_of(values);
    double s = 0.0;
    for (double v : values) s += (v - m) * (v - m);
    return s / static_cast<double>(values.size());
}

VarianceReport seed_variance(const ModelFn& model, const PairDataset& dataset, const std::vector<std::uint64_t>& seeds,
                             const EvalProtocol& protocol) {
    if (seeds.size() < 2) throw Error(Errc::invalid_range, "seed_variance needs at least 2 seeds");
    if (dataset.empty()) throw Error(Errc::empty_dataset, "empty dataset");
    VarianceReport rep;
    rep.seeds = seeds;
    double sum_var = 0.0, sum_psnr = 0.0;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const ImagePair pair = dataset.get(i);
        std::vector<double> values;
        for (std::uint64_t s : seeds) values.push_back(score_pair(model(pair.input, s), pair.target, protocol).first);
        ImageVariance iv{pair.id, population_variance(values), mean_of(values)};
        sum_var += iv.psnr_variance;
        sum_psnr += iv.mean_psnr;
        rep.per_image.push_back(std::move(iv));
    }
    rep.mean_variance = sum_var / static_cast<double>(dataset.size());
    rep.mean_psnr = sum_psnr / static_cast<double>(dataset.size());
    return rep;
}

std::string cross_label(const std::string& train_tag, const std::string& test_tag) {
    std::string a = train_tag;
    if (a.empty()) {
        std::cerr << "warning: checkpoint has no dataset tag\n";
        a = "unknown";
    }
    return a + "→" + test_tag;
}

MetricsRecord cross_dataset_eval(const ModelFn& model, const std::string& train_tag, const PairDataset& dataset,
                                 const std::string& test_tag, std::uint64_t seed, const EvalProtocol& protocol) {
    MetricsRecord rec = evaluate(model, dataset, seed, protocol);
    rec.label = cross_label(train_tag, test_tag);
    return rec;
}

nlohmann::json metric_value(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    if (std::isnan(v)) return nullptr;
    return v;
}

std::string format_metric(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    if (std::isnan(v)) return "nan";
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

nlohmann::json metrics_json(const MetricsRecord& record) {
    nlohmann::json rows = nlohmann::json::array();
    for (const MetricsRow& r : record.rows) {
        nlohmann::json row{{"image_id", r.image_id}, {"psnr_db", metric_value(r.psnr_db)}, {"ssim", metric_value(r.ssim)}};
        if (r.failed) row["error"] = r.error;
        rows.push_back(std::move(row));
    }
    return {{"label", record.label},
            {"mean_psnr", metric_value(record.mean_psnr)},
            {"mean_ssim", metric_value(record.mean_ssim)},
            {"count", record.count},
            {"protocol",
             {{"eval_size", record.protocol.eval_size},
              {"resize_method", resize_method_name(record.protocol.resize_method)}}},
            {"rows", rows}};
}

nlohmann::json variance_json(const VarianceReport& report) {
    nlohmann::json per = nlohmann::json::array();
    for (const ImageVariance& v : report.per_image)
        per.push_back({{"image_id", v.image_id},
                       {"psnr_variance", metric_value(v.psnr_variance)},
                       {"mean_psnr", metric_value(v.mean_psnr)}});
    return {{"seeds", report.seeds},
            {"variance", "population"},
            {"mean_psnr", metric_value(report.mean_psnr)},
            {"mean_variance", metric_value(report.mean_variance)},
            {"per_image", per}};
}

void write_metrics_csv(const std::filesystem::path& path, const MetricsRecord& record) {
    std::ofstream out(path);
    if (!out) throw Error(Errc::io_error, "cannot write " + path.string());
    out << "image_id,psnr_db,ssim\n";
    for (const MetricsRow& r : record.rows)
        out << r.image_id << ',' << format_metric(r.psnr_db) << ',' << format_metric(r.ssim) << '\n';
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
    std::ofstream out(path);
    if (!out) throw Error(Errc::io_error, "cannot write " + path.string());
    out << j.dump(2) << '\n';
}

}  // namespace shadowlift
