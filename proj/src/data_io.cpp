#include "shadowlift/data_io.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "shadowlift/error.hpp"

namespace fs = std::filesystem;

namespace shadowlift {

// ---- PNG ---------------------------------------------------------------------

std::uint8_t quantize_8bit(double v) {
    const double q = std::round((v + 1.0) * 127.5);
    return static_cast<std::uint8_t>(std::clamp(q, 0.0, 255.0));
}

double dequantize_8bit(std::uint8_t v) { return static_cast<double>(v) / 127.5 - 1.0; }

Image quantized(const Image& image) {
    Image out = image;
    for (double& v : out.data) v = dequantize_8bit(quantize_8bit(v));
    return out;
}

Image read_png(const fs::path& path) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.string().c_str()))
        throw Error(Errc::io_error, "cannot read PNG " + path.string() + ": " + img.message);
    img.format = PNG_FORMAT_RGB;
    std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
        png_image_free(&img);
        throw Error(Errc::io_error, "cannot decode PNG " + path.string() + ": " + img.message);
    }
    Image out(static_cast<int>(img.height), static_cast<int>(img.width), 3);
    for (std::size_t i = 0; i < buf.size(); ++i) out.data[i] = dequantize_8bit(buf[i]);
    return out;
}

namespace {

void write_png_bytes(const fs::path& path, const Image& image, const std::vector<std::uint8_t>& bytes) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(image.width);
    img.height = static_cast<png_uint_32>(image.height);
    if (image.channels == 3)
        img.format = PNG_FORMAT_RGB;
    else if (image.channels == 1)
        img.format = PNG_FORMAT_GRAY;
    else
        throw Error(Errc::channel_mismatch, "PNG output needs 1 or 3 channels, got " + std::to_string(image.channels));
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    if (!png_image_write_to_file(&img, path.string().c_str(), 0, bytes.data(), 0, nullptr))
        throw Error(Errc::io_error, "cannot write PNG " + path.string() + ": " + img.message);
}

}  // namespace

void write_png(const fs::path& path, const Image& image) {
    std::vector<std::uint8_t> bytes(image.data.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = quantize_8bit(image.data[i]);
    write_png_bytes(path, image, bytes);
}

void write_png_unit(const fs::path& path, const Image& image) {
    std::vector<std::uint8_t> bytes(image.data.size());
    for (std::size_t i = 0; i < bytes.size(); ++i)
        bytes[i] = static_cast<std::uint8_t>(std::clamp(std::round(image.data[i] * 255.0), 0.0, 255.0));
    write_png_bytes(path, image, bytes);
}

// ---- datasets ----------------------------------------------------------------

const char* split_name(Split split) { return split == Split::train ? "train" : "test"; }

PairDataset PairDataset::from_directory(const fs::path& root, Split split) {
    const fs::path in_dir = root / split_name(split) / "input";
    const fs::path tg_dir = root / split_name(split) / "target";
    for (const fs::path& d : {in_dir, tg_dir})
        if (!fs::is_directory(d)) throw Error(Errc::dataset_error, "missing directory " + d.string());

    auto list = [](const fs::path& dir) {
        std::vector<std::string> names;
        for (const auto& e : fs::directory_iterator(dir))
            if (e.is_regular_file() && e.path().extension() == ".png") names.push_back(e.path().filename().string());
        std::sort(names.begin(), names.end());
        return names;
    };
    const auto inputs = list(in_dir);
    const auto targets = list(tg_dir);
    PairDataset ds;
    for (const std::string& name : inputs) {
        if (!std::binary_search(targets.begin(), targets.end(), name))
            throw Error(Errc::dataset_error, "unmatched filename " + (in_dir / name).string());
        ds.ids_.push_back(fs::path(name).stem().string());
        ds.inputs_.push_back(in_dir / name);
        ds.targets_.push_back(tg_dir / name);
    }
    for (const std::string& name : targets)
        if (!std::binary_search(inputs.begin(), inputs.end(), name))
            throw Error(Errc::dataset_error, "unmatched filename " + (tg_dir / name).string());
    return ds;
}

PairDataset PairDataset::from_pairs(std::vector<ImagePair> pairs) {
    PairDataset ds;
    for (const ImagePair& p : pairs) {
        if (!p.input.same_dims(p.target))
            throw Error(Errc::shape_mismatch, "pair " + p.id + " has mismatched input/target dimensions");
        ds.ids_.push_back(p.id);
    }
    ds.memory_ = std::move(pairs);
    return ds;
}

ImagePair PairDataset::get(std::size_t i) const {
    if (i >= ids_.size()) throw Error(Errc::out_of_range, "dataset index out of range");
    if (!memory_.empty()) return memory_[i];
    ImagePair p{read_png(inputs_[i]), read_png(targets_[i]), ids_[i]};
    if (!p.input.same_dims(p.target))
        throw Error(Errc::shape_mismatch, "dimension mismatch in pair " + inputs_[i].filename().string() + ": " +
                                              std::to_string(p.input.width) + "x" + std::to_string(p.input.height) +
                                              " vs " + std::to_string(p.target.width) + "x" +
                                              std::to_string(p.target.height));
    return p;
}

PairDataset load_pair_dataset(const fs::path& root, Split split) { return PairDataset::from_directory(root, split); }

void write_pair_dataset(const fs::path& root, Split split, const std::vector<ImagePair>& pairs) {
    const fs::path base = root / split_name(split);
    fs::create_directories(base / "input");
    fs::create_directories(base / "target");
    for (const ImagePair& p : pairs) {
        write_png(base / "input" / (p.id + ".png"), p.input);
        write_png(base / "target" / (p.id + ".png"), p.target);
    }
}

// ---- geometry ----------------------------------------------------------------

Image crop(const Image& image, int top, int left, int h, int w) {
    if (top < 0 || left < 0 || top + h > image.height || left + w > image.width)
        throw Error(Errc::out_of_range, "crop window outside image");
    Image out(h, w, image.channels);
    for (int y = 0; y < h; ++y)
        std::copy_n(&image.data[(static_cast<std::size_t>(top + y) * image.width + left) * image.channels],
                    static_cast<std::size_t>(w) * image.channels,
                    &out.data[static_cast<std::size_t>(y) * w * image.channels]);
    return out;
}

ImagePair random_crop_pair(const ImagePair& pair, int size, Rng& rng) {
    const int H = pair.input.height, W = pair.input.width;
    if (size < 1 || size > std::min(H, W))
        throw Error(Errc::invalid_range, "crop size " + std::to_string(size) + " exceeds image " +
                                             std::to_string(W) + "x" + std::to_string(H));
    std::uniform_int_distribution<int> oy(0, H - size), ox(0, W - size);
    const int top = oy(rng);
    const int left = ox(rng);
    return {crop(pair.input, top, left, size, size), crop(pair.target, top, left, size, size), pair.id};
}

const char* resize_method_name(ResizeMethod method) {
    switch (method) {
    case ResizeMethod::nearest: return "nearest";
    case ResizeMethod::bilinear: return "bilinear";
    case ResizeMethod::bicubic_antialias: return "bicubic_antialias";
    }
    return "unknown";
}

namespace {

struct Contribution {
    std::vector<int> index;
    std::vector<double> weight;
};

double cubic(double x) {
    const double a = std::abs(x), a2 = a * a, a3 = a2 * a;
    if (a <= 1.0) return 1.5 * a3 - 2.5 * a2 + 1.0;
    if (a < 2.0) return -0.5 * a3 + 2.5 * a2 - 4.0 * a + 2.0;
    return 0.0;
}

int mirror(int j, int n) {
    const int period = 2 * n;
    j %= period;
    if (j < 0) j += period;
    return j < n ? j : period - 1 - j;
}

std::vector<Contribution> contributions(int in, int out, ResizeMethod method) {
    std::vector<Contribution> cs(out);
    const double scale = static_cast<double>(out) / in;
    for (int i = 0; i < out; ++i) {
        Contribution& c = cs[i];
        if (method == ResizeMethod::nearest) {
            c.index = {static_cast<int>(static_cast<long>(i) * in / out)};
            c.weight = {1.0};
        } else if (method == ResizeMethod::bilinear) {
            const double src = std::max(0.0, (i + 0.5) / scale - 0.5);
            const int i0 = std::min(static_cast<int>(std::floor(src)), in - 1);
            const int i1 = std::min(i0 + 1, in - 1);
            const double lam = src - i0;
            c.index = {i0, i1};
            c.weight = {1.0 - lam, lam};
        } else {
            const bool shrink = scale < 1.0;
            const double width = shrink ? 4.0 / scale : 4.0;
            const double u = (i + 0.5) / scale - 0.5;
            const int left = static_cast<int>(std::floor(u - width / 2.0));
            const int taps = static_cast<int>(std::ceil(width)) + 2;
            double total = 0.0;
            for (int p = 0; p < taps; ++p) {
                const int j = left + p;
                const double w = shrink ? scale * cubic(scale * (u - j)) : cubic(u - j);
                if (w == 0.0) continue;
                c.index.push_back(mirror(j, in));
                c.weight.push_back(w);
                total += w;
            }
            for (double& w : c.weight) w /= total;
        }
    }
    return cs;
}

}  // namespace

Image resize(const Image& image, int width, int height, ResizeMethod method) {
    if (width < 1 || height < 1) throw Error(Errc::invalid_range, "resize target must be at least 1x1");
    if (width == image.width && height == image.height) return image;
    const int C = image.channels;
    Image tmp(image.height, width, C);
    const auto cx = contributions(image.width, width, method);
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < width; ++x)
            for (int c = 0; c < C; ++c) {
                double s = 0.0;
                for (std::size_t k = 0; k < cx[x].index.size(); ++k) s += cx[x].weight[k] * image.at(y, cx[x].index[k], c);
                tmp.at(y, x, c) = s;
            }
    Image out(height, width, C);
    const auto cy = contributions(image.height, height, method);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            for (int c = 0; c < C; ++c) {
                double s = 0.0;
                for (std::size_t k = 0; k < cy[y].index.size(); ++k) s += cy[y].weight[k] * tmp.at(cy[y].index[k], x, c);
                out.at(y, x, c) = s;
            }
    return out;
}

// ---- synthetic pairs ---------------------------------------------------------

namespace {

using Rgb = std::array<double, 3>;

double smoothstep(double e) {
    e = std::clamp(e, 0.0, 1.0);
    return e * e * (3.0 - 2.0 * e);
}

struct Region {
    bool ellipse = true;
    double cx = 0, cy = 0, rx = 1, ry = 1, angle = 0;
    std::vector<std::array<double, 2>> poly;  // convex, vertices by increasing angle

    // Approximate signed distance in pixels; negative inside.
    double distance(double x, double y) const {
        if (ellipse) {
            const double ca = std::cos(angle), sa = std::sin(angle);
            const double u = (x - cx) * ca + (y - cy) * sa, v = -(x - cx) * sa + (y - cy) * ca;
            const double r = std::sqrt((u / rx) * (u / rx) + (v / ry) * (v / ry));
            return (r - 1.0) * std::min(rx, ry);
        }
        double d = -1e9;
        for (std::size_t i = 0; i < poly.size(); ++i) {
            const auto& a = poly[i];
            const auto& b = poly[(i + 1) % poly.size()];
            const double ex = b[0] - a[0], ey = b[1] - a[1];
            const double len = std::hypot(ex, ey);
            // Outward normal for positively oriented vertex order.
            const double nx = ey / len, ny = -ex / len;
            d = std::max(d, (x - a[0]) * nx + (y - a[1]) * ny);
        }
        return d;
    }
};

Region random_region(Rng& rng, int size) {
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    Region r;
    r.ellipse = u01(rng) < 0.5;
    r.cx = size * (0.15 + 0.7 * u01(rng));
    r.cy = size * (0.15 + 0.7 * u01(rng));
    const double lo = size / 8.0, hi = size / 3.0;
    r.rx = lo + (hi - lo) * u01(rng);
    r.ry = lo + (hi - lo) * u01(rng);
    r.angle = std::numbers::pi * u01(rng);
    if (!r.ellipse) {
        const int verts = 3 + static_cast<int>(u01(rng) * 4.0);
        std::vector<double> angles(verts);
        for (double& a : angles) a = 2.0 * std::numbers::pi * u01(rng);
        std::sort(angles.begin(), angles.end());
        for (double a : angles) {
            const double rad = 0.6 + 0.4 * u01(rng);
            r.poly.push_back({r.cx + r.rx * rad * std::cos(a), r.cy + r.ry * rad * std::sin(a)});
        }
    }
    return r;
}

Rgb random_color(Rng& rng, SynthStyle style) {
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const double v = 0.45 + 0.45 * u01(rng);
    const double tint = 0.15 + 0.35 * u01(rng);
    const double mix = u01(rng);
    if (style == SynthStyle::a)  // warm: red/orange/yellow dominant
        return {v, v * (1.0 - tint * mix), v * (1.0 - tint)};
    return {v * (1.0 - tint), v * (1.0 - tint * mix), v};  // cool
}

}  // namespace

ImagePair synth_shadow_pair(std::uint64_t seed, int size, const SynthOptions& options) {
    if (size < 16 || size % 16 != 0) throw Error(Errc::indivisible_dimension, "synthetic size must be a multiple of 16");
    Rng rng(seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    const double two_pi = 2.0 * std::numbers::pi;

    // Background: two-colour gradient with a low-frequency ripple.
    const Rgb c0 = random_color(rng, options.style), c1 = random_color(rng, options.style);
    const double gdir = two_pi * u01(rng);
    const double ripple_f = (1.0 + u01(rng)) / size, ripple_dir = two_pi * u01(rng), ripple_phase = two_pi * u01(rng);

    struct Shape2 {
        Region region;
        Rgb color;
    };
    std::vector<Shape2> shapes;
    const int n_shapes = 2 + static_cast<int>(u01(rng) * 3.0);
    for (int i = 0; i < n_shapes; ++i) shapes.push_back({random_region(rng, size), random_color(rng, options.style)});

    // Fine texture: oriented stripes (style a) or a checkerboard (style b).
    const double tex_period = 4.0 + 4.0 * u01(rng);
    const double tex_amp = 0.04 + 0.04 * u01(rng);
    const double tex_dir = two_pi * u01(rng);

    Image target(size, size, 3);
    std::vector<double> intensity(static_cast<std::size_t>(size) * size * 3);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const double px = x + 0.5, py = y + 0.5;
            const double proj = ((px - size / 2.0) * std::cos(gdir) + (py - size / 2.0) * std::sin(gdir)) / size;
            const double t = std::clamp(0.5 + proj, 0.0, 1.0);
            const double ripple =
                1.0 + 0.08 * std::sin(two_pi * ripple_f * (px * std::cos(ripple_dir) + py * std::sin(ripple_dir)) +
                                      ripple_phase);
            Rgb col{};
            for (int c = 0; c < 3; ++c) col[c] = ((1.0 - t) * c0[c] + t * c1[c]) * ripple;
            for (const Shape2& s : shapes) {
                const double cover = std::clamp(0.5 - s.region.distance(px, py), 0.0, 1.0);
                for (int c = 0; c < 3; ++c) col[c] = (1.0 - cover) * col[c] + cover * s.color[c];
            }
            double tex;
            if (options.style == SynthStyle::a) {
                tex = std::sin(two_pi * (px * std::cos(tex_dir) + py * std::sin(tex_dir)) / tex_period);
            } else {
                const int cx = static_cast<int>(std::floor(px / tex_period)), cy = static_cast<int>(std::floor(py / tex_period));
                tex = ((cx + cy) % 2 == 0) ? 1.0 : -1.0;
            }
            for (int c = 0; c < 3; ++c) {
                const double v = col[c] * (1.0 + tex_amp * tex) + 0.01 * normal(rng);
                intensity[(static_cast<std::size_t>(y) * size + x) * 3 + c] = std::clamp(v, 0.02, 0.98);
            }
        }

    // Shadow regions with feathered penumbra.
    const int n_regions = 1 + static_cast<int>(u01(rng) * 3.0);
    struct Shadow {
        Region region;
        double attenuation;
        double feather;
    };
    std::vector<Shadow> shadows;
    for (int i = 0; i < n_regions; ++i) {
        Shadow s{random_region(rng, size), 0.2 + 0.5 * u01(rng), 2.0 + 4.0 * u01(rng)};
        if (options.attenuation_override > 0.0) s.attenuation = options.attenuation_override;
        shadows.push_back(s);
    }

    Image input(size, size, 3);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            double factor = 1.0;
            for (const Shadow& s : shadows) {
                const double m = smoothstep(0.5 - s.region.distance(x + 0.5, y + 0.5) / s.feather);
                factor *= 1.0 - m * (1.0 - s.attenuation);
            }
            for (int c = 0; c < 3; ++c) {
                const std::size_t i = (static_cast<std::size_t>(y) * size + x) * 3 + c;
                const double yq = dequantize_8bit(quantize_8bit(2.0 * intensity[i] - 1.0));
                target.data[i] = yq;
                const double shaded = (yq + 1.0) * 0.5 * factor;
                input.data[i] = dequantize_8bit(quantize_8bit(2.0 * shaded - 1.0));
            }
        }
    return {std::move(input), std::move(target), "synth_" + std::to_string(seed)};
}

std::vector<ImagePair> synth_dataset(std::uint64_t seed, int count, int size, const SynthOptions& options) {
    std::vector<ImagePair> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) out.push_back(synth_shadow_pair(mix_seed(seed, static_cast<std::uint64_t>(i)), size, options));
    return out;
}

}  // namespace shadowlift
