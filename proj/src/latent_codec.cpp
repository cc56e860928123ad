#include "shadowlift/latent_codec.hpp"

#include "shadowlift/error.hpp"

namespace shadowlift {

void CodecConfig::validate() const {
    if (n_stages < 1 || spatial_downscale != (1 << (n_stages - 1)))
        throw Error(Errc::invalid_range, "codec needs spatial_downscale == 2^(n_stages-1)");
    if (latent_channels < 1 || base_width < 1 || io_channels < 1)
        throw Error(Errc::invalid_range, "codec widths must be positive");
    if (!(latent_scale > 0.0)) throw Error(Errc::invalid_range, "latent_scale must be positive");
}

int CodecConfig::stage_width(int j) const {
    if (j < 1 || j > n_stages) throw Error(Errc::out_of_range, "codec stage index out of range");
    return j == 1 ? base_width : 2 * base_width;
}

ag::Var ConvCodec::ResBlock::operator()(const ag::Var& x) const {
    ag::Var h = a(ag::silu(x));
    h = b(ag::silu(h));
    return x + h;
}

ConvCodec::ConvCodec(CodecConfig config, Rng& rng) : config_(config) {
    config_.validate();
    const int n = config_.n_stages;
    enc_in_ = nn::Conv2d(config_.io_channels, config_.stage_width(1), 3, 1, rng);
    for (int j = 1; j <= n; ++j) {
        const int w = config_.stage_width(j);
        if (j > 1) enc_down_.emplace_back(config_.stage_width(j - 1), w, 3, 2, rng);
        enc_blocks_.push_back({nn::Conv2d(w, w, 3, 1, rng), nn::Conv2d(w, w, 3, 1, rng)});
    }
    enc_out_ = nn::Conv2d(config_.stage_width(n), config_.latent_channels, 3, 1, rng);

    dec_in_ = nn::Conv2d(config_.latent_channels, config_.decoder_width(0), 3, 1, rng);
    for (int i = 0; i < n; ++i) {
        const int w = config_.decoder_width(i);
        if (i > 0) dec_up_.emplace_back(config_.decoder_width(i - 1), w, 3, 1, rng);
        dec_blocks_.push_back({nn::Conv2d(w, w, 3, 1, rng), nn::Conv2d(w, w, 3, 1, rng)});
    }
    dec_out_ = nn::Conv2d(config_.decoder_width(n - 1), config_.io_channels, 3, 1, rng);
}

LatentCodec::EncodeVars ConvCodec::encode_vars(const ag::Var& images) const {
    if (images.value().rank() != 4) throw Error(Errc::shape_mismatch, "encode expects an NCHW batch");
    const int s = config_.spatial_downscale;
    if (images.dim(2) % s != 0 || images.dim(3) % s != 0)
        throw Error(Errc::indivisible_dimension, "image " + std::to_string(images.dim(3)) + "x" +
                                                     std::to_string(images.dim(2)) + " not divisible by " +
                                                     std::to_string(s));
    if (images.dim(1) != config_.io_channels)
        throw Error(Errc::channel_mismatch, "codec expects " + std::to_string(config_.io_channels) + " channels, got " +
                                                std::to_string(images.dim(1)));
    EncodeVars out;
    ag::Var h = enc_in_(images);
    for (int j = 1; j <= config_.n_stages; ++j) {
        if (j > 1) h = enc_down_[j - 2](h);
        h = enc_blocks_[j - 1](h);
        out.taps.push_back(h);
    }
    out.latent = ag::scale(enc_out_(ag::silu(h)), config_.latent_scale);
    return out;
}

ag::Var ConvCodec::decode_stage(int i, const ag::Var& input) const {
    if (i < 0 || i >= config_.n_stages) throw Error(Errc::out_of_range, "decoder stage out of range");
    ag::Var h;
    if (i == 0) {
        if (input.value().rank() != 4 || input.dim(1) != config_.latent_channels)
            throw Error(Errc::channel_mismatch, "decoder expects " + std::to_string(config_.latent_channels) +
                                                    " latent channels, got " + shape_str(input.shape()));
        h = dec_in_(ag::scale(input, 1.0 / config_.latent_scale));
    } else {
        h = ag::resize_nearest(input, input.dim(2) * 2, input.dim(3) * 2);
        h = dec_up_[i - 1](h);
    }
    return dec_blocks_[i](h);
}

ag::Var ConvCodec::decode_output(const ag::Var& last) const { return dec_out_(ag::silu(last)); }

nn::ParameterList ConvCodec::encoder_parameters() const {
    nn::ParameterList p;
    p.add("enc_in", enc_in_);
    for (std::size_t j = 0; j < enc_down_.size(); ++j) p.add("enc_down" + std::to_string(j + 2), enc_down_[j]);
    for (std::size_t j = 0; j < enc_blocks_.size(); ++j) {
        p.add("enc_block" + std::to_string(j + 1) + ".a", enc_blocks_[j].a);
        p.add("enc_block" + std::to_string(j + 1) + ".b", enc_blocks_[j].b);
    }
    p.add("enc_out", enc_out_);
    return p;
}

nn::ParameterList ConvCodec::decoder_parameters() const {
    nn::ParameterList p;
    p.add("dec_in", dec_in_);
    for (std::size_t i = 0; i < dec_up_.size(); ++i) p.add("dec_up" + std::to_string(i + 1), dec_up_[i]);
    for (std::size_t i = 0; i < dec_blocks_.size(); ++i) {
        p.add("dec_block" + std::to_string(i) + ".a", dec_blocks_[i].a);
        p.add("dec_block" + std::to_string(i) + ".b", dec_blocks_[i].b);
    }
    p.add("dec_out", dec_out_);
    return p;
}

nn::ParameterList ConvCodec::parameters() const {
    nn::ParameterList p;
    p.append("encoder", encoder_parameters());
    p.append("decoder", decoder_parameters());
    return p;
}

ConvCodec::ResBlock ConvCodec::clone_block(const ResBlock& r) { return {r.a.clone(), r.b.clone()}; }

ConvCodec ConvCodec::clone() const {
    ConvCodec c;
    c.config_ = config_;
    c.enc_in_ = enc_in_.clone();
    for (const auto& d : enc_down_) c.enc_down_.push_back(d.clone());
    for (const auto& b : enc_blocks_) c.enc_blocks_.push_back(clone_block(b));
    c.enc_out_ = enc_out_.clone();
    c.dec_in_ = dec_in_.clone();
    for (const auto& u : dec_up_) c.dec_up_.push_back(u.clone());
    for (const auto& b : dec_blocks_) c.dec_blocks_.push_back(clone_block(b));
    c.dec_out_ = dec_out_.clone();
    return c;
}

ConvCodec ConvCodec::expand_io_channels(int k) const {
    if (k < 1) throw Error(Errc::invalid_range, "partition factor must be >= 1");
    if (config_.io_channels != 3)
        throw Error(Errc::already_expanded, "codec io channels already expanded to " +
                                                std::to_string(config_.io_channels));
    ConvCodec c = clone();
    if (k == 1) return c;
    const int g = k * k, C = 3;

    const Tensor& wi = enc_in_.weight.value();
    const int co = wi.dim(0), kk = wi.dim(2);
    Tensor nwi({co, C * g, kk, kk});
    for (int o = 0; o < co; ++o)
        for (int grp = 0; grp < g; ++grp)
            for (int ch = 0; ch < C; ++ch)
                for (int y = 0; y < kk; ++y)
                    for (int x = 0; x < kk; ++x)
                        nwi.at(o, grp * C + ch, y, x) = wi.at(o, ch, y, x) / static_cast<double>(g);
    c.enc_in_.weight = ag::Var(std::move(nwi), enc_in_.weight.requires_grad());

    const Tensor& wo = dec_out_.weight.value();
    const int ci = wo.dim(1), ko = wo.dim(2);
    Tensor nwo({C * g, ci, ko, ko});
    Tensor nbo({C * g});
    for (int grp = 0; grp < g; ++grp)
        for (int ch = 0; ch < C; ++ch) {
            nbo[grp * C + ch] = dec_out_.bias.value()[ch];
            for (int i = 0; i < ci; ++i)
                for (int y = 0; y < ko; ++y)
                    for (int x = 0; x < ko; ++x) nwo.at(grp * C + ch, i, y, x) = wo.at(ch, i, y, x);
        }
    c.dec_out_.weight = ag::Var(std::move(nwo), dec_out_.weight.requires_grad());
    c.dec_out_.bias = ag::Var(std::move(nbo), dec_out_.bias.requires_grad());
    c.config_.io_channels = C * g;
    return c;
}

// ---- inference wrappers --------------------------------------------------------

EncodeResult encode(const Tensor& images, const LatentCodec& codec) {
    ag::NoGradGuard guard;
    auto vars = codec.encode_vars(ag::Var(images));
    EncodeResult r;
    r.latent = vars.latent.value();
    r.taps.source = TapSource::encoder;
    for (const ag::Var& t : vars.taps) r.taps.taps.push_back(t.value());
    return r;
}

DecodeResult decode(const Tensor& latent, const LatentCodec& codec) {
    ag::NoGradGuard guard;
    DecodeResult r;
    r.taps.source = TapSource::decoder;
    ag::Var h(latent);
    for (int i = 0; i < codec.config().n_stages; ++i) {
        h = codec.decode_stage(i, h);
        r.taps.taps.push_back(h.value());
    }
    r.images = codec.decode_output(h).value();
    return r;
}

EncodeResult encode(const Image& image, const LatentCodec& codec) { return encode(to_tensor(image), codec); }

Image decode_image(const Tensor& latent, const LatentCodec& codec) { return to_image(decode(latent, codec).images); }

// ---- partition / merge -----------------------------------------------------------

Image partition(const Image& image, int k) {
    if (k < 1) throw Error(Errc::invalid_range, "partition factor must be >= 1");
    if (image.height % k != 0 || image.width % k != 0)
        throw Error(Errc::indivisible_dimension, "image " + std::to_string(image.width) + "x" +
                                                     std::to_string(image.height) + " not divisible by k=" +
                                                     std::to_string(k));
    const int C = image.channels;
    Image out(image.height / k, image.width / k, C * k * k);
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x)
            for (int dy = 0; dy < k; ++dy)
                for (int dx = 0; dx < k; ++dx)
                    for (int c = 0; c < C; ++c)
                        out.at(y, x, (dy * k + dx) * C + c) = image.at(y * k + dy, x * k + dx, c);
    return out;
}

Image merge(const Image& packed, int k) {
    if (k < 1) throw Error(Errc::invalid_range, "merge factor must be >= 1");
    if (packed.channels % (k * k) != 0)
        throw Error(Errc::channel_mismatch, std::to_string(packed.channels) + " channels not divisible by k^2=" +
                                                std::to_string(k * k));
    const int C = packed.channels / (k * k);
    Image out(packed.height * k, packed.width * k, C);
    for (int y = 0; y < packed.height; ++y)
        for (int x = 0; x < packed.width; ++x)
            for (int dy = 0; dy < k; ++dy)
                for (int dx = 0; dx < k; ++dx)
                    for (int c = 0; c < C; ++c)
                        out.at(y * k + dy, x * k + dx, c) = packed.at(y, x, (dy * k + dx) * C + c);
    return out;
}

}  // namespace shadowlift
