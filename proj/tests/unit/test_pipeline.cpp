#include <filesystem>

#include "doctest.h"
#include "shadowlift/checkpoint.hpp"
#include "shadowlift/error.hpp"
#include "shadowlift/metrics.hpp"
#include "shadowlift/pipeline.hpp"
#include "test_support.hpp"

using namespace shadowlift;
namespace fs = std::filesystem;

namespace {

CodecConfig tiny_codec_config() {
    CodecConfig c;
    c.base_width = 4;
    return c;
}

DenoiserConfig tiny_denoiser_config() {
    DenoiserConfig c;
    c.widths = {8, 12, 16};
    c.time_dim = 16;
    return c;
}

DIConfig tiny_di_config() {
    DIConfig c;
    c.rrdb_dense_blocks = 1;
    c.dense_layers = 2;
    c.growth_channels = 4;
    c.semantic_token_dim = 8;
    return c;
}

TrainConfig tiny_config(Stage stage, int epochs) {
    TrainConfig c = preset("toy", stage);
    c.epochs = epochs;
    c.batch_size = 2;
    c.crop_size = 32;
    c.ddim_steps = 2;
    c.seed = 5;
    return c;
}

struct Trained {
    std::vector<ImagePair> data = synth_dataset(11, 4, 32);
    TrainLog codec_log, one_log;
    ConvCodec codec;
    std::unique_ptr<UNetDenoiser> den;

    Trained()
        : codec(train_codec(tiny_config(Stage::one, 2), data, tiny_codec_config(), &codec_log)),
          den(train_stage_one(tiny_config(Stage::one, 8), codec, data, tiny_denoiser_config(), &one_log)) {}
};

const Trained& trained() {
    static Trained t;
    return t;
}

std::vector<Tensor> values(const nn::ParameterList& p) {
    std::vector<Tensor> out;
    for (const auto& [name, v] : p.items()) out.push_back(v.value());
    return out;
}

bool bitwise_equal(const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (!a[i].same_shape(b[i]) || max_abs_diff(a[i], b[i]) != 0.0) return false;
    return true;
}

fs::path scratch_dir(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("shadowlift_pipeline_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST_CASE("config parsing") {
    TrainConfig c = parse_config("# comment\nlearning_rate = 0.002\n\nbatch_size=4  # trailing\nstage=two\n"
                                 "freeze_decoder=false\nparameterization=eps_pred\ndataset_tag=ISTD+\n");
    CHECK(c.learning_rate == 0.002);
    CHECK(c.batch_size == 4);
    CHECK(c.stage == Stage::two);
    CHECK_FALSE(c.freeze_decoder);
    CHECK(c.parameterization == Parameterization::eps_pred);
    CHECK(c.dataset_tag == "ISTD+");

    try {
        parse_config("epochs=3\nwarmup=10\n");
        FAIL("expected config error");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::config_error);
        CHECK(std::string(e.what()).find("warmup") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_config("epochs=ten"), Error);
    CHECK_THROWS_AS(parse_config("freeze_decoder=maybe"), Error);
    CHECK_THROWS_AS(parse_config("no equals sign"), Error);

    apply_override(c, "epochs=7");
    CHECK(c.epochs == 7);
    TrainConfig round = parse_config(config_to_text(c));
    CHECK(config_to_text(round) == config_to_text(c));
    CHECK(round.learning_rate == c.learning_rate);
}

TEST_CASE("presets") {
    TrainConfig d;
    CHECK(d.learning_rate == 3e-4);
    CHECK(d.batch_size == 16);
    CHECK(preset("istd", Stage::one).learning_rate == 3e-4);
    CHECK(preset("istd", Stage::two).learning_rate == 5e-4);
    CHECK(preset("istd", Stage::two).batch_size == 16);
    CHECK(preset("istd", Stage::one).crop_size == 480);
    CHECK(preset("istd", Stage::one).epochs == 200);
    CHECK(preset("istd", Stage::two).epochs == 300);
    CHECK(preset("srd", Stage::one).epochs == 300);
    CHECK(preset("srd", Stage::two).epochs == 200);
    CHECK(preset("ins", Stage::one).epochs == 40);
    CHECK(preset("ins", Stage::two).epochs == 50);
    CHECK(preset("wsrd", Stage::one).epochs == 400);
    CHECK(preset("wsrd", Stage::two).epochs == 100);
    CHECK(preset("wsrd", Stage::two).hi_res_k == 3);
    CHECK(preset("toy", Stage::one).epochs == 200);
    CHECK(preset("toy", Stage::two).epochs == 200);
    CHECK(preset("toy", Stage::one).crop_size == 64);
    CHECK(preset("istd", Stage::one).dataset_tag == "ISTD+");
    for (const auto& name : preset_names()) CHECK_NOTHROW(preset(name, Stage::one).validate());
    CHECK_THROWS_AS(preset("nope", Stage::one), Error);
}

TEST_CASE("config validation") {
    TrainConfig c = preset("toy", Stage::one);
    c.learning_rate = 0.0;
    CHECK_THROWS_AS(c.validate(), Error);
    c = preset("toy", Stage::one);
    c.crop_size = 36;
    CHECK_THROWS_AS(c.validate(), Error);
    c.crop_size = 40;
    CHECK_THROWS_AS(c.validate(), Error);
    c.use_semantic_features = false;
    CHECK_NOTHROW(c.validate());
    c.optimizer = "sgd";
    CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("training is reproducible") {
    const Trained& t = trained();
    TrainLog again;
    ConvCodec c2 = train_codec(tiny_config(Stage::one, 2), t.data, tiny_codec_config(), &again);
    REQUIRE(again.epoch_loss.size() == 2);
    for (std::size_t i = 0; i < 2; ++i)
        CHECK(again.epoch_loss[i] == doctest::Approx(t.codec_log.epoch_loss[i]).epsilon(1e-5));
    CHECK(bitwise_equal(values(c2.parameters()), values(t.codec.parameters())));
    CHECK(t.codec.config().latent_scale > 0.0);
    const auto frozen = t.codec.parameters();
    for (const auto& [n, v] : frozen.items()) CHECK_FALSE(v.requires_grad());

    REQUIRE(t.one_log.epoch_loss.size() == 8);
    CHECK(t.one_log.epoch_loss.back() < t.one_log.epoch_loss.front());
    CHECK_THROWS_AS(train_codec(tiny_config(Stage::one, 1), {}, tiny_codec_config()), Error);
}

TEST_CASE("stage two keeps frozen weights bitwise") {
    const Trained& t = trained();
    ConvCodec codec = t.codec.clone();
    const auto decoder_before = values(codec.decoder_parameters());
    const auto encoder_before = values(codec.encoder_parameters());
    const auto den_before = values(t.den->parameters());
    DIConfig dc = tiny_di_config();
    auto extractor = make_semantic_extractor(dc);
    RandomConvPyramid perceptual(kDefaultPerceptualSeed);
    TrainLog log;
    DetailInjection di = train_stage_two(tiny_config(Stage::two, 2), codec, *t.den, t.data, dc, extractor.get(),
                                         perceptual, &log);
    CHECK(log.epoch_loss.size() == 2);
    CHECK(bitwise_equal(values(codec.decoder_parameters()), decoder_before));
    CHECK(bitwise_equal(values(codec.encoder_parameters()), encoder_before));
    CHECK(bitwise_equal(values(t.den->parameters()), den_before));

    TrainConfig open = tiny_config(Stage::two, 1);
    open.freeze_decoder = false;
    ConvCodec codec2 = t.codec.clone();
    train_stage_two(open, codec2, *t.den, t.data, dc, extractor.get(), perceptual);
    CHECK_FALSE(bitwise_equal(values(codec2.decoder_parameters()), decoder_before));
    CHECK(bitwise_equal(values(codec2.encoder_parameters()), encoder_before));

    CHECK_THROWS_AS(train_stage_two(tiny_config(Stage::two, 1), codec, *t.den, t.data, dc, nullptr, perceptual),
                    Error);
    TrainConfig plain = tiny_config(Stage::two, 1);
    plain.use_semantic_features = false;
    DetailInjection no_sem = train_stage_two(plain, codec, *t.den, t.data, dc, nullptr, perceptual);
    CHECK_FALSE(no_sem.config().use_semantic_features);
}

TEST_CASE("inference and checkpoints") {
    const Trained& t = trained();
    ConvCodec codec = t.codec.clone();
    DIConfig dc = tiny_di_config();
    auto extractor = make_semantic_extractor(dc);
    RandomConvPyramid perceptual(kDefaultPerceptualSeed);
    DetailInjection di = train_stage_two(tiny_config(Stage::two, 1), codec, *t.den, t.data, dc, extractor.get(),
                                         perceptual);

    fs::path dir = scratch_dir("ckpt");
    save_codec(dir / "codec.bin", codec, 2, "toy");
    save_denoiser(dir / "den.bin", *t.den, 8, "toy");
    save_detail_injection(dir / "di.bin", di, codec, false, 1, 1, "toy");
    ModelBundle loaded = load_models(dir / "codec.bin", dir / "den.bin", dir / "di.bin");
    CHECK(loaded.dataset_tag == "toy");
    CHECK(read_sidecar(dir / "codec.bin", "codec")["schema_version"] == kCheckpointSchemaVersion);
    CHECK_THROWS_AS(read_sidecar(dir / "codec.bin", "denoiser"), Error);
    CHECK_THROWS_AS(load_weights(dir / "codec.bin", t.den->parameters()), Error);
    CHECK_THROWS_AS(load_codec(dir / "missing.bin"), Error);

    ModelBundle live;
    live.codec = std::make_shared<ConvCodec>(codec.clone());
    live.denoiser = load_denoiser(dir / "den.bin");
    live.di = std::make_shared<DetailInjection>(di.clone());
    live.extractor = make_semantic_extractor(dc);

    const Image x = synth_shadow_pair(99, 32).input;
    InferenceOptions opt;
    opt.ddim_steps = 3;
    opt.seed = 4;
    Image a = remove_shadow(x, live, opt), b = remove_shadow(x, live, opt), c = remove_shadow(x, loaded, opt);
    CHECK(a == b);
    CHECK(a == c);
    CHECK(a.height == 32);
    CHECK(a.width == 32);
    opt.seed = 5;
    CHECK_FALSE(remove_shadow(x, live, opt) == a);

    opt.stage_two = false;
    auto one = remove_shadow_detailed(x, live, opt);
    CHECK(one.output == one.stage_one);
    CHECK(one.rrdb_features.empty());

    opt.stage_two = true;
    opt.hi_res_k = 3;
    const Image big = synth_shadow_pair(98, 96).input;
    auto hi = remove_shadow_detailed(big, live, opt);
    CHECK(hi.stage_one_width == 32);
    CHECK(hi.stage_one_height == 32);
    CHECK(hi.output.width == 96);
    CHECK(hi.output.height == 96);
    CHECK(hi.rrdb_features.size() == 3);
    CHECK_THROWS_AS(remove_shadow(synth_shadow_pair(97, 64).input, live, opt), Error);
}

TEST_CASE("stage one overfits a small toy set") {
    const auto data = synth_dataset(21, 8, 64);
    TrainConfig cc = preset("toy", Stage::one);
    cc.epochs = 10;
    CodecConfig codec_config;
    codec_config.base_width = 8;
    const ConvCodec codec = train_codec(cc, data, codec_config);

    TrainConfig c1 = preset("toy", Stage::one);
    TrainLog log;
    auto den = train_stage_one(c1, codec, data, DenoiserConfig{}, &log);
    REQUIRE(log.epoch_loss.size() == 200);
    CHECK(log.epoch_loss.back() < 0.1 * log.epoch_loss.front());

    ModelBundle models{std::make_shared<ConvCodec>(codec.clone()), std::move(den), nullptr, nullptr, 1, "toy"};
    double out = 0.0, in = 0.0;
    for (const ImagePair& p : data) {
        out += psnr(remove_shadow(p.input, models, {}), p.target);
        in += psnr(p.input, p.target);
    }
    CHECK(out > in);
    MESSAGE("loss ratio " << log.epoch_loss.back() / log.epoch_loss.front() << ", stage-one PSNR " << out / 8
                          << " dB, input " << in / 8 << " dB");

    const auto same = synth_dataset(22, 8, 64, {.attenuation_override = 1.0});
    for (const ImagePair& p : same) REQUIRE(p.input == p.target);
    TrainConfig c2 = preset("toy", Stage::one);
    c2.epochs = 40;
    TrainLog identity_log;
    train_stage_one(c2, codec, same, DenoiserConfig{}, &identity_log);
    CHECK(identity_log.epoch_loss.back() < 0.5 * identity_log.epoch_loss.front());
}

TEST_CASE("per-sample seeds") {
    CHECK(sample_seed(1, "a") == sample_seed(1, "a"));
    CHECK(sample_seed(1, "a") != sample_seed(1, "b"));
    CHECK(sample_seed(1, "a") != sample_seed(2, "a"));
}
