#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "shadowlift/image.hpp"

namespace shadowlift {

struct ImagePair {
    Image input;   // shadow image x
    Image target;  // shadow-free image y
    std::string id;
};

// ---- PNG ---------------------------------------------------------------------

// 8-bit RGB; pixel v maps to v / 127.5 - 1. Gray and RGBA files are converted.
Image read_png(const std::filesystem::path& path);
// Quantizes [-1, 1] values to 8-bit with rounding and clamping.
void write_png(const std::filesystem::path& path, const Image& image);
// Same, for images whose nominal range is [0, 1].
void write_png_unit(const std::filesystem::path& path, const Image& image);

std::uint8_t quantize_8bit(double v);
double dequantize_8bit(std::uint8_t v);
// Round-trips every value through the 8-bit grid.
Image quantized(const Image& image);

// ---- datasets ----------------------------------------------------------------

enum class Split { train, test };
const char* split_name(Split split);

// Ordered paired collection. Directory datasets load lazily from
// root/{train,test}/{input,target}/name.png in lexicographic filename order.
class PairDataset {
public:
    static PairDataset from_directory(const std::filesystem::path& root, Split split);
    static PairDataset from_pairs(std::vector<ImagePair> pairs);

    std::size_t size() const { return ids_.size(); }
    bool empty() const { return ids_.empty(); }
    const std::string& id(std::size_t i) const { return ids_.at(i); }
    ImagePair get(std::size_t i) const;

private:
    std::vector<std::string> ids_;
    std::vector<std::filesystem::path> inputs_, targets_;
    std::vector<ImagePair> memory_;
};

PairDataset load_pair_dataset(const std::filesystem::path& root, Split split);

// Writes pairs under root/<split>/{input,target}/<id>.png.
void write_pair_dataset(const std::filesystem::path& root, Split split, const std::vector<ImagePair>& pairs);

// ---- geometry ----------------------------------------------------------------

ImagePair random_crop_pair(const ImagePair& pair, int size, Rng& rng);
Image crop(const Image& image, int top, int left, int h, int w);

enum class ResizeMethod { nearest, bilinear, bicubic_antialias };
const char* resize_method_name(ResizeMethod method);

// Separable resampling. bilinear follows the half-pixel-centre convention
// without antialiasing; bicubic_antialias uses the Keys kernel (a = -0.5)
// widened by 1/scale when shrinking, with symmetric border handling.
Image resize(const Image& image, int width, int height, ResizeMethod method);

// ---- synthetic pairs ---------------------------------------------------------

enum class SynthStyle { a, b };

struct SynthOptions {
    SynthStyle style = SynthStyle::a;
    // Overrides the random per-region attenuation when > 0; 1.0 gives x == y.
    double attenuation_override = 0.0;
};

// Textured shadow-free target plus a copy darkened multiplicatively inside
// one to three feathered ellipse/polygon regions (attenuation in [0.2, 0.7]).
// Output is on the 8-bit grid. Requires size % 16 == 0.
ImagePair synth_shadow_pair(std::uint64_t seed, int size, const SynthOptions& options = {});

// Pair i is synth_shadow_pair(mix_seed(seed, i)); ids are "synth_<seed>".
std::vector<ImagePair> synth_dataset(std::uint64_t seed, int count, int size, const SynthOptions& options = {});

}  // namespace shadowlift
