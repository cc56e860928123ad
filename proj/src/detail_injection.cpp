#include "shadowlift/detail_injection.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "shadowlift/data_io.hpp"
#include "shadowlift/error.hpp"

namespace shadowlift {

void DIConfig::validate() const {
    if (n_branches < 1) throw Error(Errc::invalid_range, "n_branches must be >= 1");
    if (rrdb_dense_blocks < 1 || dense_layers < 2 || growth_channels < 1)
        throw Error(Errc::invalid_range, "invalid RRDB shape");
    if (fuse_kernel < 1 || fuse_kernel % 2 == 0) throw Error(Errc::invalid_range, "fuse_kernel must be odd");
    if (semantic_channels < 1 || semantic_token_dim < 1) throw Error(Errc::invalid_range, "invalid semantic widths");
    for (int i : semantic_layers)
        if (i < 1 || i > n_branches)
            throw Error(Errc::out_of_range, "semantic layer " + std::to_string(i) + " is not a branch");
}

bool DIConfig::semantic_branch(int i) const {
    return use_semantic_features && std::find(semantic_layers.begin(), semantic_layers.end(), i) != semantic_layers.end();
}

// ---- RRDB ----------------------------------------------------------------------

DenseBlock::DenseBlock(int channels, int growth, int layers, double beta, Rng& rng) : beta_(beta) {
    for (int l = 0; l < layers; ++l) {
        const int out = l + 1 == layers ? channels : growth;
        convs_.emplace_back(channels + l * growth, out, 3, 1, rng);
    }
}

ag::Var DenseBlock::operator()(const ag::Var& x) const {
    std::vector<ag::Var> feats{x};
    for (std::size_t l = 0; l + 1 < convs_.size(); ++l)
        feats.push_back(ag::silu(convs_[l](ag::concat_channels(feats))));
    return x + ag::scale(convs_.back()(ag::concat_channels(feats)), beta_);
}

void DenseBlock::add_to(nn::ParameterList& p, const std::string& prefix) const {
    for (std::size_t l = 0; l < convs_.size(); ++l) p.add(prefix + ".conv" + std::to_string(l + 1), convs_[l]);
}

DenseBlock DenseBlock::clone() const {
    DenseBlock d;
    d.beta_ = beta_;
    for (const auto& c : convs_) d.convs_.push_back(c.clone());
    return d;
}

RRDB::RRDB(int channels, const DIConfig& config, Rng& rng) : channels_(channels), beta_(config.residual_scale) {
    for (int b = 0; b < config.rrdb_dense_blocks; ++b)
        blocks_.emplace_back(channels, config.growth_channels, config.dense_layers, config.residual_scale, rng);
}

ag::Var RRDB::operator()(const ag::Var& x) const {
    if (x.value().rank() != 4 || x.dim(1) != channels_)
        throw Error(Errc::channel_mismatch, "RRDB expects " + std::to_string(channels_) + " channels, got " +
                                                shape_str(x.shape()));
    ag::Var h = x;
    for (const DenseBlock& b : blocks_) h = b(h);
    return x + ag::scale(h - x, beta_);
}

void RRDB::zero_init_outputs() {
    for (DenseBlock& b : blocks_) b.zero_init_output();
}

void RRDB::add_to(nn::ParameterList& p, const std::string& prefix) const {
    for (std::size_t b = 0; b < blocks_.size(); ++b) blocks_[b].add_to(p, prefix + ".db" + std::to_string(b + 1));
}

RRDB RRDB::clone() const {
    RRDB r;
    r.channels_ = channels_;
    r.beta_ = beta_;
    for (const auto& b : blocks_) r.blocks_.push_back(b.clone());
    return r;
}

ag::Var rrdb_forward(const RRDB& rrdb, const ag::Var& features) { return rrdb(features); }

// ---- semantic features -------------------------------------------------------------

RandomPatchEmbed::RandomPatchEmbed(std::uint64_t seed, int dim) {
    Rng rng(seed);
    conv_ = nn::Conv2d(3, dim, 14, 14, rng);
    conv_.pad = 0;
    conv_.weight.set_requires_grad(false);
    conv_.bias.set_requires_grad(false);
}

Tensor RandomPatchEmbed::tokens(const Tensor& images) const {
    if (images.rank() != 4 || images.dim(1) != 3 || images.dim(2) % 14 != 0 || images.dim(3) % 14 != 0)
        throw Error(Errc::indivisible_dimension, "patch embed expects {N,3,14h,14w}, got " + shape_str(images.shape()));
    ag::NoGradGuard guard;
    return conv_(ag::Var(images)).value();
}

std::unique_ptr<SemanticExtractor> make_semantic_extractor(const DIConfig& config) {
    return std::make_unique<RandomPatchEmbed>(config.semantic_seed, config.semantic_token_dim);
}

Tensor semantic_tokens(const Tensor& images, const SemanticExtractor& extractor) {
    if (images.rank() != 4) throw Error(Errc::shape_mismatch, "semantic_tokens expects an NCHW batch");
    const int h = images.dim(2), w = images.dim(3);
    if (h % 16 != 0 || w % 16 != 0)
        throw Error(Errc::indivisible_dimension, "image " + std::to_string(w) + "x" + std::to_string(h) +
                                                     " not divisible by 16");
    std::vector<Image> resized;
    for (int n = 0; n < images.dim(0); ++n)
        resized.push_back(resize(to_image(images, n), 14 * w / 16, 14 * h / 16, ResizeMethod::bilinear));
    return extractor.tokens(to_batch(resized));
}

// ---- detail injection ------------------------------------------------------------------

DetailInjection::DetailInjection(DIConfig config, const LatentCodec& codec, Rng& rng) : config_(std::move(config)) {
    config_.validate();
    const CodecConfig& cc = codec.config();
    if (config_.n_branches > cc.n_stages - 1)
        throw Error(Errc::invalid_range, "codec has only " + std::to_string(cc.n_stages - 1) + " injection points");
    for (int i = 1; i <= config_.n_branches; ++i) {
        const int wd = cc.decoder_width(i);
        const int we = cc.stage_width(cc.n_stages - i);
        const int ws = config_.semantic_branch(i) ? config_.semantic_channels : 0;
        Branch b{nn::Conv2d(wd + we + ws, wd, config_.fuse_kernel, 1, rng), RRDB(wd, config_, rng),
                 nn::Conv2d(wd, wd, 3, 1, rng)};
        b.rrdb.zero_init_outputs();
        b.out.zero_init();
        branches_.push_back(std::move(b));
    }
    projection_ = nn::Conv2d(config_.semantic_token_dim, config_.semantic_channels, 1, 1, rng);
    out_ = codec.output_layer().clone();
    out_.weight.set_requires_grad(true);
    out_.bias.set_requires_grad(true);
}

ag::Var DetailInjection::project(const ag::Var& tokens) const { return projection_(tokens); }

SemanticFeatureMap DetailInjection::semantic_features(const Tensor& images, const SemanticExtractor& extractor,
                                                      const std::string& source_id) const {
    ag::NoGradGuard guard;
    return {project(ag::Var(semantic_tokens(images, extractor))).value(), source_id};
}

ag::Var DetailInjection::inject(int branch, const ag::Var& d, const ag::Var& e, const ag::Var& sem,
                                Tensor* rrdb_out) const {
    if (branch < 1 || branch > config_.n_branches)
        throw Error(Errc::out_of_range, "branch " + std::to_string(branch) + " out of range");
    const Branch& b = branches_[branch - 1];
    if (d.value().rank() != 4 || e.value().rank() != 4 || d.dim(0) != e.dim(0) || d.dim(2) != e.dim(2) ||
        d.dim(3) != e.dim(3))
        throw Error(Errc::shape_mismatch, "decoder tap " + shape_str(d.shape()) + " vs encoder tap " +
                                              shape_str(e.shape()) + " at branch " + std::to_string(branch));
    std::vector<ag::Var> parts{d, e};
    if (config_.semantic_branch(branch)) {
        if (!sem.defined())
            throw Error(Errc::invalid_range, "branch " + std::to_string(branch) + " requires semantic features");
        if (sem.dim(1) != config_.semantic_channels)
            throw Error(Errc::channel_mismatch, "semantic map must have " + std::to_string(config_.semantic_channels) +
                                                    " channels");
        parts.push_back(ag::resize_nearest(sem, d.dim(2), d.dim(3)));
    } else if (sem.defined()) {
        throw Error(Errc::invalid_range, "semantic features supplied to non-semantic branch " + std::to_string(branch));
    }
    const ag::Var fused = b.fuse(ag::concat_channels(parts));
    const ag::Var r = b.rrdb(fused);
    if (rrdb_out) *rrdb_out = r.value();
    return d + b.out(r);
}

ag::Var DetailInjection::decode_with_injection(const ag::Var& z0, const std::vector<ag::Var>& enc_taps,
                                               const ag::Var& sem, const LatentCodec& codec,
                                               std::vector<Tensor>* rrdb_features) const {
    const int n = codec.config().n_stages;
    if (static_cast<int>(enc_taps.size()) != n)
        throw Error(Errc::shape_mismatch, "expected " + std::to_string(n) + " encoder taps, got " +
                                              std::to_string(enc_taps.size()));
    if (rrdb_features) rrdb_features->clear();
    ag::Var h = codec.decode_stage(0, z0);
    for (int i = 1; i < n; ++i) {
        h = codec.decode_stage(i, h);
        if (i <= config_.n_branches) {
            Tensor r;
            h = inject(i, h, enc_taps[n - i - 1], config_.semantic_branch(i) ? sem : ag::Var(),
                       rrdb_features ? &r : nullptr);
            if (rrdb_features) rrdb_features->push_back(std::move(r));
        }
    }
    return out_(ag::silu(h));
}

nn::ParameterList DetailInjection::parameters() const {
    nn::ParameterList p;
    for (std::size_t i = 0; i < branches_.size(); ++i) {
        const std::string name = "branch" + std::to_string(i + 1);
        p.add(name + ".fuse", branches_[i].fuse);
        branches_[i].rrdb.add_to(p, name + ".rrdb");
        p.add(name + ".out", branches_[i].out);
    }
    p.add("projection", projection_);
    p.add("output", out_);
    return p;
}

void DetailInjection::expand_output(int k) {
    if (k < 1) throw Error(Errc::invalid_range, "partition factor must be >= 1");
    if (out_.out_channels() != 3)
        throw Error(Errc::already_expanded, "output conv already has " + std::to_string(out_.out_channels()) +
                                                " channels");
    if (k == 1) return;
    const int g = k * k, C = 3;
    const Tensor& w = out_.weight.value();
    const int ci = w.dim(1), kk = w.dim(2);
    Tensor nw({C * g, ci, kk, kk});
    Tensor nb({C * g});
    for (int grp = 0; grp < g; ++grp)
        for (int ch = 0; ch < C; ++ch) {
            nb[grp * C + ch] = out_.bias.value()[ch];
            for (int i = 0; i < ci; ++i)
                for (int y = 0; y < kk; ++y)
                    for (int x = 0; x < kk; ++x) nw.at(grp * C + ch, i, y, x) = w.at(ch, i, y, x);
        }
    out_.weight = ag::Var(std::move(nw), out_.weight.requires_grad());
    out_.bias = ag::Var(std::move(nb), out_.bias.requires_grad());
}

DetailInjection DetailInjection::clone() const {
    DetailInjection d;
    d.config_ = config_;
    for (const Branch& b : branches_) d.branches_.push_back({b.fuse.clone(), b.rrdb.clone(), b.out.clone()});
    d.projection_ = projection_.clone();
    d.out_ = out_.clone();
    return d;
}

Tensor decode_with_injection(const Tensor& z0, const FeatureTapSet& enc_taps, const SemanticFeatureMap* sem,
                             const LatentCodec& codec, const DetailInjection& di, std::vector<Tensor>* rrdb_features) {
    if (enc_taps.source != TapSource::encoder) throw Error(Errc::invalid_range, "detail injection needs encoder taps");
    ag::NoGradGuard guard;
    std::vector<ag::Var> taps;
    for (const Tensor& t : enc_taps.taps) taps.emplace_back(t);
    ag::Var s = sem ? ag::Var(sem->features) : ag::Var();
    return di.decode_with_injection(ag::Var(z0), taps, s, codec, rrdb_features).value();
}

// ---- PCA ----------------------------------------------------------------------------------

Image pca_visualize(const Tensor& features) {
    Tensor f = features;
    if (f.rank() == 4) {
        if (f.dim(0) != 1) throw Error(Errc::shape_mismatch, "pca_visualize takes a single feature map");
        f = f.reshaped({f.dim(1), f.dim(2), f.dim(3)});
    }
    if (f.rank() != 3) throw Error(Errc::shape_mismatch, "pca_visualize expects {C,H,W}");
    const int C = f.dim(0), H = f.dim(1), W = f.dim(2), P = H * W;

    Eigen::MatrixXd X(P, C);
    for (int c = 0; c < C; ++c)
        for (int p = 0; p < P; ++p) X(p, c) = f[static_cast<std::size_t>(c) * P + p];
    X.rowwise() -= X.colwise().mean();
    const Eigen::MatrixXd cov = (X.transpose() * X) / static_cast<double>(P);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    const Eigen::VectorXd& evals = solver.eigenvalues();  // ascending
    const double top = C > 0 ? evals(C - 1) : 0.0;

    Image out(H, W, 3);
    for (int k = 0; k < 3 && k < C; ++k) {
        const int idx = C - 1 - k;
        if (!(top > 0.0) || evals(idx) <= 1e-9 * top) break;
        const Eigen::VectorXd proj = X * solver.eigenvectors().col(idx);
        const double lo = proj.minCoeff(), hi = proj.maxCoeff();
        if (!(hi - lo > 0.0)) continue;
        for (int p = 0; p < P; ++p) out.data[static_cast<std::size_t>(p) * 3 + k] = (proj(p) - lo) / (hi - lo);
    }
    return out;
}

}  // namespace shadowlift
