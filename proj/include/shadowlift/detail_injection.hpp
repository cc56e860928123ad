#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "shadowlift/image.hpp"
#include "shadowlift/latent_codec.hpp"
#include "shadowlift/nn.hpp"

namespace shadowlift {

struct DIConfig {
    int n_branches = 3;  // branches after decoder stages 1..n_branches
    int rrdb_dense_blocks = 3;
    int dense_layers = 5;
    int growth_channels = 8;
    double residual_scale = 0.2;
    int fuse_kernel = 3;
    bool use_semantic_features = true;
    std::vector<int> semantic_layers{1, 2};
    int semantic_channels = 256;
    int semantic_token_dim = 32;
    std::uint64_t semantic_seed = 7;

    void validate() const;
    bool semantic_branch(int i) const;
};

// ---- RRDB --------------------------------------------------------------------

// Dense block: each conv sees the concatenation of the input and all previous
// growth outputs; the last conv maps back to the input width and is added
// with weight beta.
class DenseBlock {
public:
    DenseBlock(int channels, int growth, int layers, double beta, Rng& rng);
    ag::Var operator()(const ag::Var& x) const;
    void zero_init_output() { convs_.back().zero_init(); }
    void add_to(nn::ParameterList& p, const std::string& prefix) const;
    DenseBlock clone() const;

private:
    DenseBlock() = default;
    std::vector<nn::Conv2d> convs_;
    double beta_ = 0.2;
};

// x + beta * (DB_m(...DB_1(x)) - x). Zeroing every dense block's output conv
// makes the block an exact identity.
class RRDB {
public:
    RRDB(int channels, const DIConfig& config, Rng& rng);
    ag::Var operator()(const ag::Var& x) const;
    int channels() const { return channels_; }
    void zero_init_outputs();
    void add_to(nn::ParameterList& p, const std::string& prefix) const;
    RRDB clone() const;

private:
    RRDB() = default;
    int channels_ = 0;
    double beta_ = 0.2;
    std::vector<DenseBlock> blocks_;
};

ag::Var rrdb_forward(const RRDB& rrdb, const ag::Var& features);

// ---- semantic features ---------------------------------------------------------

// Patch extractor with stride 14 mapping {N,3,14h,14w} to {N,D,h,w}.
class SemanticExtractor {
public:
    virtual ~SemanticExtractor() = default;
    virtual int token_dim() const = 0;
    virtual Tensor tokens(const Tensor& images) const = 0;
};

// Frozen randomly initialized 14x14 stride-14 patch embedding.
class RandomPatchEmbed final : public SemanticExtractor {
public:
    RandomPatchEmbed(std::uint64_t seed, int dim);
    int token_dim() const override { return conv_.out_channels(); }
    Tensor tokens(const Tensor& images) const override;

private:
    nn::Conv2d conv_;
};

// The extractor described by config (semantic_seed, semantic_token_dim).
std::unique_ptr<SemanticExtractor> make_semantic_extractor(const DIConfig& config);

struct SemanticFeatureMap {
    Tensor features;  // {N, 256, H/16, W/16}
    std::string source_id;
};

// Bilinear resize to 14W/16 x 14H/16 followed by the extractor; returns
// {N, D, H/16, W/16} tokens prior to projection.
Tensor semantic_tokens(const Tensor& images, const SemanticExtractor& extractor);

// ---- detail injection ------------------------------------------------------------

class DetailInjection {
public:
    // Widths follow the codec's decoder/encoder taps; branch output convs and
    // RRDB dense outputs start at zero and the output conv is a copy of the
    // codec's output layer, so the initial model reproduces plain decoding.
    DetailInjection(DIConfig config, const LatentCodec& codec, Rng& rng);

    const DIConfig& config() const { return config_; }
    const nn::Conv2d& output_layer() const { return out_; }
    const RRDB& rrdb(int branch) const { return branches_.at(branch - 1).rrdb; }

    // 1x1 projection of extractor tokens to semantic_channels.
    ag::Var project(const ag::Var& tokens) const;
    SemanticFeatureMap semantic_features(const Tensor& images, const SemanticExtractor& extractor,
                                         const std::string& source_id = {}) const;

    // d~_i = d_i + Conv(RRDB(Conv([d_i, e, sem]))). sem is undefined when unused.
    // When rrdb_out is non-null it receives the RRDB output.
    ag::Var inject(int branch, const ag::Var& d, const ag::Var& e, const ag::Var& sem,
                   Tensor* rrdb_out = nullptr) const;

    // D_0, then D_i followed by inject for i = 1..n_branches, then the output
    // conv on SiLU(d~_last). enc_taps hold e_1..e_n of the shadow image.
    ag::Var decode_with_injection(const ag::Var& z0, const std::vector<ag::Var>& enc_taps, const ag::Var& sem,
                                  const LatentCodec& codec, std::vector<Tensor>* rrdb_features = nullptr) const;

    nn::ParameterList parameters() const;

    // Repeats the output conv rows k^2 times for partitioned images.
    void expand_output(int k);
    DetailInjection clone() const;

private:
    struct Branch {
        nn::Conv2d fuse;
        RRDB rrdb;
        nn::Conv2d out;
    };
    DetailInjection() = default;

    DIConfig config_;
    std::vector<Branch> branches_;
    nn::Conv2d projection_;
    nn::Conv2d out_;
};

// Inference form: no graph, tensor inputs.
Tensor decode_with_injection(const Tensor& z0, const FeatureTapSet& enc_taps, const SemanticFeatureMap* sem,
                             const LatentCodec& codec, const DetailInjection& di,
                             std::vector<Tensor>* rrdb_features = nullptr);

// Projects per-pixel feature vectors of one map ({C,H,W} or {1,C,H,W}) onto
// the top three principal components, min-max scaled to [0,1] per component.
// Components with zero variance are left at zero.
Image pca_visualize(const Tensor& features);

}  // namespace shadowlift
