#pragma once

#include <memory>
#include <vector>

#include "shadowlift/autograd.hpp"
#include "shadowlift/image.hpp"
#include "shadowlift/nn.hpp"

namespace shadowlift {

// Encoder stage j (1-based, j = 1..n) works at resolution H / 2^(j-1) and
// produces tap e_j. Decoder stage i (0-based, i = 0..n-1) works at latent
// resolution * 2^i and produces tap d_i. Hence s = 2^(n-1) and e_{n-i}
// mirrors d_i spatially; both have width stage_width(n - i).
struct CodecConfig {
    int spatial_downscale = 8;
    int latent_channels = 4;
    int base_width = 16;
    int n_stages = 4;
    int io_channels = 3;
    // Multiplies encoder output so latents have roughly unit variance.
    double latent_scale = 1.0;

    void validate() const;
    // Channel width of encoder stage j in [1, n].
    int stage_width(int j) const;
    // Channel width of decoder tap d_i, i in [0, n).
    int decoder_width(int i) const { return stage_width(n_stages - i); }
};

enum class TapSource { encoder, decoder };

// taps[j] holds e_{j+1} for the encoder and d_j for the decoder, each NCHW.
struct FeatureTapSet {
    TapSource source = TapSource::encoder;
    std::vector<Tensor> taps;
};

// Frozen latent codec <E, D> with stage-wise decoder access for detail
// injection. Implementations must keep the stage/tap contract above.
class LatentCodec {
public:
    virtual ~LatentCodec() = default;

    virtual const CodecConfig& config() const = 0;

    struct EncodeVars {
        ag::Var latent;
        std::vector<ag::Var> taps;
    };
    virtual EncodeVars encode_vars(const ag::Var& images) const = 0;

    // D_i: d_0 = D_0(latent), d_i = D_i(d_{i-1}).
    virtual ag::Var decode_stage(int i, const ag::Var& input) const = 0;
    // Output head applied to d_{n-1}: SiLU followed by output_layer().
    virtual ag::Var decode_output(const ag::Var& last) const = 0;
    virtual const nn::Conv2d& output_layer() const = 0;

    virtual nn::ParameterList encoder_parameters() const = 0;
    virtual nn::ParameterList decoder_parameters() const = 0;
};

struct EncodeResult {
    Tensor latent;
    FeatureTapSet taps;
};

struct DecodeResult {
    Tensor images;  // NCHW
    FeatureTapSet taps;
};

// Inference entry points (no graph recorded). Inputs are NCHW batches.
EncodeResult encode(const Tensor& images, const LatentCodec& codec);
DecodeResult decode(const Tensor& latent, const LatentCodec& codec);

// Single-image convenience wrappers.
EncodeResult encode(const Image& image, const LatentCodec& codec);
Image decode_image(const Tensor& latent, const LatentCodec& codec);

// Small convolutional autoencoder: per stage one residual block, stride-2
// convolutions between stages, nearest upsampling + conv in the decoder.
class ConvCodec final : public LatentCodec {
public:
    ConvCodec(CodecConfig config, Rng& rng);

    const CodecConfig& config() const override { return config_; }
    EncodeVars encode_vars(const ag::Var& images) const override;
    ag::Var decode_stage(int i, const ag::Var& input) const override;
    ag::Var decode_output(const ag::Var& last) const override;
    const nn::Conv2d& output_layer() const override { return dec_out_; }
    nn::ParameterList encoder_parameters() const override;
    nn::ParameterList decoder_parameters() const override;

    nn::ParameterList parameters() const;
    const nn::Conv2d& input_layer() const { return enc_in_; }
    void set_latent_scale(double s) { config_.latent_scale = s; }

    // Deep copy with independent weights.
    ConvCodec clone() const;

    // Codec for k x k partitioned images: io channels 3 -> 3k^2. The input
    // layer holds k^2 copies of the original weights scaled by 1/k^2, so a
    // partitioned image whose k x k blocks are constant yields the original
    // response on the k-downsampled image. The output layer repeats the
    // original rows k^2 times, so merging its output gives the original
    // prediction upsampled by pixel replication.
    ConvCodec expand_io_channels(int k) const;

private:
    struct ResBlock {
        nn::Conv2d a, b;
        ag::Var operator()(const ag::Var& x) const;
    };

    ConvCodec() = default;
    static ResBlock clone_block(const ResBlock& r);

    CodecConfig config_;
    nn::Conv2d enc_in_;
    std::vector<nn::Conv2d> enc_down_;  // enc_down_[j-2] feeds stage j >= 2
    std::vector<ResBlock> enc_blocks_;  // per stage
    nn::Conv2d enc_out_;
    nn::Conv2d dec_in_;
    std::vector<nn::Conv2d> dec_up_;  // dec_up_[i-1] feeds stage i >= 1
    std::vector<ResBlock> dec_blocks_;
    nn::Conv2d dec_out_;
};

// Flattens each k x k region into channels: H x W x C -> H/k x W/k x C*k^2,
// channel (dy*k + dx)*C + c holding pixel (dy, dx) of channel c.
Image partition(const Image& image, int k);
// Exact inverse of partition.
Image merge(const Image& packed, int k);

}  // namespace shadowlift
