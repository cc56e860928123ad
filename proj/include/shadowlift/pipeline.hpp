#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "shadowlift/data_io.hpp"
#include "shadowlift/denoiser.hpp"
#include "shadowlift/detail_injection.hpp"
#include "shadowlift/latent_codec.hpp"
#include "shadowlift/losses.hpp"

namespace shadowlift {

// ---- configuration -------------------------------------------------------------

enum class Stage { one, two };

struct TrainConfig {
    Stage stage = Stage::one;
    double learning_rate = 3e-4;
    int batch_size = 16;
    int epochs = 200;
    int crop_size = 512;
    std::string optimizer = "adam";
    std::uint64_t seed = 0;
    std::filesystem::path dataset_root;
    int hi_res_k = 1;
    bool freeze_decoder = true;
    bool use_semantic_features = true;
    int ddim_steps = 20;
    double eta = 0.0;
    Parameterization parameterization = Parameterization::z0_pred;
    std::string dataset_tag;
    double lambda_p = 1.0;

    // Throws config_error. The crop must be divisible by the codec
    // downscale, and by 16 when semantic features are on.
    void validate(int codec_downscale = 8) const;
};

// Named defaults: toy, istd, srd, ins, wsrd.
TrainConfig preset(const std::string& name, Stage stage);
std::vector<std::string> preset_names();

// Flat key=value lines; '#' starts a comment. Unknown keys are errors.
TrainConfig parse_config(const std::string& text, TrainConfig base = {});
TrainConfig load_config(const std::filesystem::path& path, TrainConfig base = {});
void apply_override(TrainConfig& cfg, const std::string& key_value);
std::string config_to_text(const TrainConfig& cfg);

// ---- training --------------------------------------------------------------------

struct TrainLog {
    std::vector<double> epoch_loss;
    void write_csv(const std::filesystem::path& path) const;
};

using EpochCallback = std::function<void(int epoch, double loss)>;

// Reconstruction-L1 training on the inputs and targets of `data`; the codec
// is returned frozen with latent_scale calibrated to unit latent std.
ConvCodec train_codec(const TrainConfig& cfg, const std::vector<ImagePair>& data, const CodecConfig& codec_config,
                      TrainLog* log = nullptr, const EpochCallback& on_epoch = {});

// Latent regression with a frozen codec. z0_pred minimizes ||z_y - z_hat||^2,
// eps_pred minimizes ||eps - eps_hat||^2.
std::unique_ptr<UNetDenoiser> train_stage_one(const TrainConfig& cfg, const LatentCodec& codec,
                                              const std::vector<ImagePair>& data, const DenoiserConfig& den_config,
                                              TrainLog* log = nullptr, const EpochCallback& on_epoch = {});

// Detail-injection training on stage-one outputs. Stage one runs with
// eta = cfg.eta and a per-sample seed mix_seed(cfg.seed, hash(id)). When
// cfg.freeze_decoder is false the codec decoder is updated in place.
DetailInjection train_stage_two(const TrainConfig& cfg, ConvCodec& codec, const Denoiser& denoiser,
                                const std::vector<ImagePair>& data, const DIConfig& di_config,
                                const SemanticExtractor* extractor, const FeatureExtractor& perceptual,
                                TrainLog* log = nullptr, const EpochCallback& on_epoch = {});

std::uint64_t sample_seed(std::uint64_t seed, const std::string& id);

// ---- inference -------------------------------------------------------------------

struct ModelBundle {
    std::shared_ptr<ConvCodec> codec;
    std::shared_ptr<Denoiser> denoiser;
    std::shared_ptr<DetailInjection> di;  // null: stage one only
    std::shared_ptr<SemanticExtractor> extractor;
    int di_hi_res_k = 1;  // partition factor the DI output conv was built for
    std::string dataset_tag;
};

struct InferenceOptions {
    std::uint64_t seed = 1;
    int ddim_steps = 20;
    double eta = 0.0;
    int hi_res_k = 1;
    bool stage_two = true;
};

struct InferenceResult {
    Image output;
    Image stage_one;  // plain decode of z0 at the stage-one resolution
    Tensor z0;
    std::vector<Tensor> rrdb_features;  // one map per DI branch
    int stage_one_width = 0, stage_one_height = 0;
};

// Standard path: encode x, DDIM-sample z0, decode with injection. With
// hi_res_k = k > 1 stage one runs on x downscaled by k and stage two runs
// the channel-expanded codec on partition(x, k), merged back to full size.
InferenceResult remove_shadow_detailed(const Image& x, const ModelBundle& models, const InferenceOptions& options);
Image remove_shadow(const Image& x, const ModelBundle& models, const InferenceOptions& options);

// ---- checkpoints -------------------------------------------------------------------

void save_codec(const std::filesystem::path& path, const ConvCodec& codec, int epochs, const std::string& tag);
ConvCodec load_codec(const std::filesystem::path& path, std::string* tag = nullptr);

void save_denoiser(const std::filesystem::path& path, const UNetDenoiser& den, int epochs, const std::string& tag);
std::unique_ptr<UNetDenoiser> load_denoiser(const std::filesystem::path& path, std::string* tag = nullptr);

// Stores decoder weights too when the decoder was trained.
void save_detail_injection(const std::filesystem::path& path, const DetailInjection& di, const ConvCodec& codec,
                           bool decoder_trained, int hi_res_k, int epochs, const std::string& tag);
// Rebuilds the module for `codec`, overwriting its decoder when stored.
DetailInjection load_detail_injection(const std::filesystem::path& path, ConvCodec& codec, int* hi_res_k = nullptr,
                                      std::string* tag = nullptr);

nlohmann::json codec_config_json(const CodecConfig& c);
CodecConfig codec_config_from_json(const nlohmann::json& j);
nlohmann::json denoiser_config_json(const DenoiserConfig& c, const NoiseSchedule& sched);
nlohmann::json di_config_json(const DIConfig& c);
DIConfig di_config_from_json(const nlohmann::json& j);

ModelBundle load_models(const std::filesystem::path& codec_path, const std::filesystem::path& denoiser_path,
                        const std::filesystem::path& di_path);

}  // namespace shadowlift
