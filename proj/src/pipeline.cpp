#include "shadowlift/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "shadowlift/checkpoint.hpp"
#include "shadowlift/error.hpp"

namespace shadowlift {

// ---- configuration -------------------------------------------------------------

void TrainConfig::validate(int codec_downscale) const {
    if (!(learning_rate > 0.0)) throw Error(Errc::config_error, "learning_rate must be > 0");
    if (batch_size < 1) throw Error(Errc::config_error, "batch_size must be >= 1");
    if (epochs < 0) throw Error(Errc::config_error, "epochs must be >= 0");
    if (optimizer != "adam") throw Error(Errc::config_error, "unsupported optimizer '" + optimizer + "'");
    if (hi_res_k < 1) throw Error(Errc::config_error, "hi_res_k must be >= 1");
    if (ddim_steps < 1) throw Error(Errc::config_error, "ddim_steps must be >= 1");
    if (eta < 0.0) throw Error(Errc::config_error, "eta must be >= 0");
    if (lambda_p < 0.0) throw Error(Errc::config_error, "lambda_p must be >= 0");
    // crop_size 0 trains on whole images.
    if (crop_size < 0) throw Error(Errc::config_error, "crop_size must be >= 0");
    if (crop_size > 0) {
        if (crop_size % (codec_downscale * hi_res_k) != 0)
            throw Error(Errc::config_error, "crop_size " + std::to_string(crop_size) + " not divisible by " +
                                                std::to_string(codec_downscale * hi_res_k));
        if (use_semantic_features && crop_size % (16 * hi_res_k) != 0)
            throw Error(Errc::config_error, "crop_size " + std::to_string(crop_size) + " not divisible by " +
                                                std::to_string(16 * hi_res_k));
    }
}

std::vector<std::string> preset_names() { return {"toy", "istd", "srd", "ins", "wsrd"}; }

TrainConfig preset(const std::string& name, Stage stage) {
    TrainConfig c;
    c.stage = stage;
    const bool one = stage == Stage::one;
    c.learning_rate = one ? 3e-4 : 5e-4;
    c.batch_size = 16;
    c.crop_size = 480;
    c.dataset_tag = name;
    if (name == "toy") {
        c.learning_rate = one ? 1e-3 : 5e-4;
        c.batch_size = 8;
        c.crop_size = 64;
        c.epochs = 200;
        c.dataset_tag = "toy";
    } else if (name == "istd") {
        c.epochs = one ? 200 : 300;
        c.dataset_tag = "ISTD+";
    } else if (name == "srd") {
        c.epochs = one ? 300 : 200;
        c.dataset_tag = "SRD";
    } else if (name == "ins") {
        c.epochs = one ? 40 : 50;
        c.crop_size = 512;
        c.dataset_tag = "INS";
    } else if (name == "wsrd") {
        c.epochs = one ? 400 : 100;
        c.crop_size = 0;
        c.hi_res_k = 3;
        c.dataset_tag = "WSRD+";
    } else {
        throw Error(Errc::config_error, "unknown preset '" + name + "'");
    }
    return c;
}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw Error(Errc::config_error, key + ": expected true/false, got '" + v + "'");
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
    std::istringstream is(v);
    T out{};
    is >> out;
    if (!is || !is.eof()) throw Error(Errc::config_error, key + ": invalid number '" + v + "'");
    return out;
}

void set_key(TrainConfig& c, const std::string& key, const std::string& v) {
    if (key == "stage") {
        if (v == "one") c.stage = Stage::one;
        else if (v == "two") c.stage = Stage::two;
        else throw Error(Errc::config_error, "stage: expected one/two, got '" + v + "'");
    } else if (key == "learning_rate") c.learning_rate = parse_number<double>(key, v);
    else if (key == "batch_size") c.batch_size = parse_number<int>(key, v);
    else if (key == "epochs") c.epochs = parse_number<int>(key, v);
    else if (key == "crop_size") c.crop_size = parse_number<int>(key, v);
    else if (key == "optimizer") c.optimizer = v;
    else if (key == "seed") c.seed = parse_number<std::uint64_t>(key, v);
    else if (key == "dataset_root") c.dataset_root = v;
    else if (key == "hi_res_k") c.hi_res_k = parse_number<int>(key, v);
    else if (key == "freeze_decoder") c.freeze_decoder = parse_bool(key, v);
    else if (key == "use_semantic_features") c.use_semantic_features = parse_bool(key, v);
    else if (key == "ddim_steps") c.ddim_steps = parse_number<int>(key, v);
    else if (key == "eta") c.eta = parse_number<double>(key, v);
    else if (key == "parameterization") {
        try {
            c.parameterization = parse_parameterization(v);
        } catch (const Error&) {
            throw Error(Errc::config_error, "parameterization: expected z0_pred/eps_pred, got '" + v + "'");
        }
    } else if (key == "dataset_tag") c.dataset_tag = v;
    else if (key == "lambda_p") c.lambda_p = parse_number<double>(key, v);
    else throw Error(Errc::config_error, "unknown config key '" + key + "'");
}

}  // namespace

void apply_override(TrainConfig& cfg, const std::string& key_value) {
    const auto eq = key_value.find('=');
    if (eq == std::string::npos) throw Error(Errc::config_error, "expected key=value, got '" + key_value + "'");
    set_key(cfg, trim(key_value.substr(0, eq)), trim(key_value.substr(eq + 1)));
}

TrainConfig parse_config(const std::string& text, TrainConfig base) {
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        try {
            apply_override(base, line);
        } catch (const Error& e) {
            throw Error(Errc::config_error, "line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return base;
}

TrainConfig load_config(const std::filesystem::path& path, TrainConfig base) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::config_error, "cannot read config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), std::move(base));
}

std::string config_to_text(const TrainConfig& c) {
    std::ostringstream os;
    os.precision(17);
    os << "stage=" << (c.stage == Stage::one ? "one" : "two") << '\n'
       << "learning_rate=" << c.learning_rate << '\n'
       << "batch_size=" << c.batch_size << '\n'
       << "epochs=" << c.epochs << '\n'
       << "crop_size=" << c.crop_size << '\n'
       << "optimizer=" << c.optimizer << '\n'
       << "seed=" << c.seed << '\n'
       << "dataset_root=" << c.dataset_root.string() << '\n'
       << "hi_res_k=" << c.hi_res_k << '\n'
       << "freeze_decoder=" << (c.freeze_decoder ? "true" : "false") << '\n'
       << "use_semantic_features=" << (c.use_semantic_features ? "true" : "false") << '\n'
       << "ddim_steps=" << c.ddim_steps << '\n'
       << "eta=" << c.eta << '\n'
       << "parameterization=" << parameterization_name(c.parameterization) << '\n'
       << "dataset_tag=" << c.dataset_tag << '\n'
       << "lambda_p=" << c.lambda_p << '\n';
    return os.str();
}

// ---- training helpers ------------------------------------------------------------

void TrainLog::write_csv(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw Error(Errc::io_error, "cannot write " + path.string());
    out.precision(17);
    out << "epoch,loss\n";
    for (std::size_t e = 0; e < epoch_loss.size(); ++e) out << e + 1 << ',' << epoch_loss[e] << '\n';
}

std::uint64_t sample_seed(std::uint64_t seed, const std::string& id) { return mix_seed(seed, hash_string(id)); }

namespace {

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, int batch, Rng& rng) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t i = 0; i < n; i += static_cast<std::size_t>(batch))
        out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + batch)));
    return out;
}

// True when training uses whole images, so per-sample work can be cached.
bool whole_images(const TrainConfig& cfg, const std::vector<ImagePair>& data) {
    if (cfg.crop_size == 0) return true;
    return std::all_of(data.begin(), data.end(), [&](const ImagePair& p) {
        return p.input.height == cfg.crop_size && p.input.width == cfg.crop_size;
    });
}

ImagePair training_view(const ImagePair& pair, const TrainConfig& cfg, bool whole, Rng& rng) {
    return whole ? pair : random_crop_pair(pair, cfg.crop_size, rng);
}

Image downscale(const Image& x, int k) {
    if (k == 1) return x;
    return resize(x, x.width / k, x.height / k, ResizeMethod::bicubic_antialias);
}

void require_data(const std::vector<ImagePair>& data) {
    if (data.empty()) throw Error(Errc::empty_dataset, "empty dataset");
}

}  // namespace

// ---- codec ---------------------------------------------------------------------------

ConvCodec train_codec(const TrainConfig& cfg, const std::vector<ImagePair>& data, const CodecConfig& codec_config,
                      TrainLog* log, const EpochCallback& on_epoch) {
    require_data(data);
    cfg.validate(codec_config.spatial_downscale);
    Rng rng(cfg.seed);
    CodecConfig cc = codec_config;
    cc.latent_scale = 1.0;
    ConvCodec codec(cc, rng);
    nn::ParameterList params = codec.parameters();
    nn::Adam opt(params.vars(), {.learning_rate = cfg.learning_rate});

    std::vector<Image> images;
    for (const ImagePair& p : data) {
        images.push_back(p.input);
        images.push_back(p.target);
    }
    const bool whole = cfg.crop_size == 0 ||
                       std::all_of(images.begin(), images.end(), [&](const Image& im) {
                           return im.height == cfg.crop_size && im.width == cfg.crop_size;
                       });
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        double total = 0.0;
        int count = 0;
        for (const auto& batch : epoch_batches(images.size(), cfg.batch_size, rng)) {
            std::vector<Image> views;
            for (std::size_t i : batch) {
                if (whole) {
                    views.push_back(images[i]);
                } else {
                    const ImagePair pair{images[i], images[i], {}};
                    views.push_back(random_crop_pair(pair, cfg.crop_size, rng).input);
                }
            }
            const ag::Var x(to_batch(views));
            opt.zero_grad();
            const auto enc = codec.encode_vars(x);
            ag::Var h = enc.latent;
            for (int i = 0; i < cc.n_stages; ++i) h = codec.decode_stage(i, h);
            const ag::Var loss = ag::l1(codec.decode_output(h), x);
            ag::backward(loss);
            opt.step();
            total += loss.value()[0] * static_cast<double>(batch.size());
            count += static_cast<int>(batch.size());
        }
        const double mean = total / count;
        if (log) log->epoch_loss.push_back(mean);
        if (on_epoch) on_epoch(epoch, mean);
    }

    // Unit-variance latents keep the diffusion schedule meaningful.
    double sum = 0.0, sq = 0.0;
    std::size_t n = 0;
    for (const Image& im : images) {
        const Image view = cfg.crop_size > 0 && (im.height != cfg.crop_size || im.width != cfg.crop_size)
                               ? crop(im, 0, 0, cfg.crop_size, cfg.crop_size)
                               : im;
        const Tensor z = encode(view, codec).latent;
        for (double v : z.values()) {
            sum += v;
            sq += v * v;
            ++n;
        }
    }
    const double mean = sum / static_cast<double>(n);
    const double var = sq / static_cast<double>(n) - mean * mean;
    if (var > 0.0) codec.set_latent_scale(1.0 / std::sqrt(var));
    codec.parameters().set_requires_grad(false);
    return codec;
}

// ---- stage one ------------------------------------------------------------------------

std::unique_ptr<UNetDenoiser> train_stage_one(const TrainConfig& cfg, const LatentCodec& codec,
                                              const std::vector<ImagePair>& data, const DenoiserConfig& den_config,
                                              TrainLog* log, const EpochCallback& on_epoch) {
    require_data(data);
    cfg.validate(codec.config().spatial_downscale);
    Rng rng(cfg.seed);
    DenoiserConfig dc = den_config;
    dc.latent_channels = codec.config().latent_channels;
    dc.in_channels = 2 * dc.latent_channels;
    dc.parameterization = cfg.parameterization;
    auto den = std::make_unique<UNetDenoiser>(dc, make_noise_schedule(1000, 1e-4, 0.02), rng);
    const NoiseSchedule& sched = den->schedule();
    nn::Adam opt(den->parameters().vars(), {.learning_rate = cfg.learning_rate});

    const int k = cfg.hi_res_k;
    const bool whole = whole_images(cfg, data);
    std::vector<Tensor> cache_x, cache_y;
    if (whole)
        for (const ImagePair& p : data) {
            cache_x.push_back(encode(downscale(p.input, k), codec).latent);
            cache_y.push_back(encode(downscale(p.target, k), codec).latent);
        }

    std::uniform_int_distribution<int> pick_t(1, sched.T);
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        double total = 0.0;
        int count = 0;
        for (const auto& batch : epoch_batches(data.size(), cfg.batch_size, rng)) {
            std::vector<Tensor> zx, zy;
            for (std::size_t i : batch) {
                if (whole) {
                    zx.push_back(cache_x[i]);
                    zy.push_back(cache_y[i]);
                } else {
                    const ImagePair v = training_view(data[i], cfg, false, rng);
                    zx.push_back(encode(downscale(v.input, k), codec).latent);
                    zy.push_back(encode(downscale(v.target, k), codec).latent);
                }
            }
            const Tensor z_cond = stack_batch(zx), z_y = stack_batch(zy);
            const int per = static_cast<int>(z_y.size() / batch.size());
            std::vector<int> ts;
            Tensor eps = randn(z_y.shape(), rng);
            Tensor z_t(z_y.shape());
            for (std::size_t b = 0; b < batch.size(); ++b) {
                const int t = pick_t(rng);
                ts.push_back(t);
                const double a = std::sqrt(sched.alpha_bar(t)), s = std::sqrt(1.0 - sched.alpha_bar(t));
                for (int j = 0; j < per; ++j) {
                    const std::size_t idx = b * per + j;
                    z_t[idx] = a * z_y[idx] + s * eps[idx];
                }
            }
            opt.zero_grad();
            const ag::Var out = den->forward_raw(ag::Var(z_t), ag::Var(z_cond), ts);
            const ag::Var target(cfg.parameterization == Parameterization::z0_pred ? z_y : eps);
            const ag::Var loss = stage_one_loss(out, target);
            ag::backward(loss);
            opt.step();
            total += loss.value()[0] * static_cast<double>(batch.size());
            count += static_cast<int>(batch.size());
        }
        const double mean = total / count;
        if (log) log->epoch_loss.push_back(mean);
        if (on_epoch) on_epoch(epoch, mean);
    }
    den->parameters().set_requires_grad(false);
    return den;
}

// ---- stage two ------------------------------------------------------------------------

namespace {

struct StageTwoSample {
    Tensor z0;
    std::vector<Tensor> taps;
    Tensor tokens;  // empty without semantic features
    Tensor target;  // full-resolution y
};

StageTwoSample prepare_stage_two(const ImagePair& pair, const LatentCodec& codec, const LatentCodec& stage_codec,
                                 const Denoiser& den, const DDIMPlan& plan, std::uint64_t seed, int k,
                                 const SemanticExtractor* extractor) {
    StageTwoSample s;
    const Image xs = downscale(pair.input, k);
    s.z0 = sample(clean_predictor(den), encode(xs, codec).latent, plan, den.schedule(), seed);
    s.taps = encode(k > 1 ? partition(pair.input, k) : pair.input, stage_codec).taps.taps;
    if (extractor) s.tokens = semantic_tokens(to_tensor(xs), *extractor);
    s.target = to_tensor(pair.target);
    return s;
}

}  // namespace

DetailInjection train_stage_two(const TrainConfig& cfg, ConvCodec& codec, const Denoiser& denoiser,
                                const std::vector<ImagePair>& data, const DIConfig& di_config,
                                const SemanticExtractor* extractor, const FeatureExtractor& perceptual, TrainLog* log,
                                const EpochCallback& on_epoch) {
    require_data(data);
    cfg.validate(codec.config().spatial_downscale);
    DIConfig dc = di_config;
    dc.use_semantic_features = cfg.use_semantic_features;
    if (dc.use_semantic_features && !extractor)
        throw Error(Errc::config_error, "semantic features enabled without an extractor");
    if (!dc.use_semantic_features) extractor = nullptr;

    Rng rng(cfg.seed);
    codec.parameters().set_requires_grad(false);
    const int k = cfg.hi_res_k;
    std::unique_ptr<ConvCodec> expanded;
    if (k > 1) expanded = std::make_unique<ConvCodec>(codec.expand_io_channels(k));
    ConvCodec& stage_codec = expanded ? *expanded : codec;

    DetailInjection di(dc, codec, rng);
    di.expand_output(k);
    nn::ParameterList params = di.parameters();
    if (!cfg.freeze_decoder) {
        nn::ParameterList dec = stage_codec.decoder_parameters();
        dec.set_requires_grad(true);
        params.append("decoder", dec);
    }
    nn::Adam opt(params.vars(), {.learning_rate = cfg.learning_rate});

    const DDIMPlan plan = make_ddim_plan(denoiser.schedule(), cfg.ddim_steps, cfg.eta);
    const bool whole = whole_images(cfg, data);
    std::vector<StageTwoSample> cache;
    if (whole)
        for (const ImagePair& p : data)
            cache.push_back(prepare_stage_two(p, codec, stage_codec, denoiser, plan, sample_seed(cfg.seed, p.id), k,
                                              extractor));

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        double total = 0.0;
        int count = 0;
        for (const auto& batch : epoch_batches(data.size(), cfg.batch_size, rng)) {
            std::vector<StageTwoSample> fresh;
            std::vector<const StageTwoSample*> members;
            fresh.reserve(batch.size());
            for (std::size_t i : batch) {
                if (whole) {
                    members.push_back(&cache[i]);
                } else {
                    const ImagePair v = training_view(data[i], cfg, false, rng);
                    fresh.push_back(prepare_stage_two(v, codec, stage_codec, denoiser, plan,
                                                      sample_seed(cfg.seed, data[i].id), k, extractor));
                    members.push_back(&fresh.back());
                }
            }
            auto gather = [&](auto field) {
                std::vector<Tensor> parts;
                for (const StageTwoSample* m : members) parts.push_back(field(*m));
                return stack_batch(parts);
            };
            const Tensor z0 = gather([](const StageTwoSample& m) { return m.z0; });
            const Tensor target = gather([](const StageTwoSample& m) { return m.target; });
            std::vector<ag::Var> taps;
            for (std::size_t j = 0; j < members.front()->taps.size(); ++j)
                taps.emplace_back(gather([j](const StageTwoSample& m) { return m.taps[j]; }));

            opt.zero_grad();
            ag::Var sem;
            if (extractor) sem = di.project(ag::Var(gather([](const StageTwoSample& m) { return m.tokens; })));
            ag::Var y_hat = di.decode_with_injection(ag::Var(z0), taps, sem, stage_codec);
            if (k > 1) y_hat = ag::depth_to_space(y_hat, k);
            const ag::Var loss = stage_two_loss(y_hat, ag::Var(target), perceptual, cfg.lambda_p);
            ag::backward(loss);
            opt.step();
            total += loss.value()[0] * static_cast<double>(batch.size());
            count += static_cast<int>(batch.size());
        }
        const double mean = total / count;
        if (log) log->epoch_loss.push_back(mean);
        if (on_epoch) on_epoch(epoch, mean);
    }

    if (!cfg.freeze_decoder && expanded) {
        // The expanded codec shares every decoder tensor shape except the
        // output layer, which detail injection replaces anyway.
        const auto src = expanded->decoder_parameters().items();
        const auto dst = codec.decoder_parameters().items();
        for (std::size_t i = 0; i < src.size(); ++i)
            if (src[i].second.shape() == dst[i].second.shape()) {
                ag::Var d = dst[i].second;
                d.mutable_value() = src[i].second.value();
            }
    }
    codec.parameters().set_requires_grad(false);
    di.parameters().set_requires_grad(false);
    return di;
}

// ---- inference -----------------------------------------------------------------------------

InferenceResult remove_shadow_detailed(const Image& x, const ModelBundle& models, const InferenceOptions& options) {
    if (!models.codec || !models.denoiser) throw Error(Errc::checkpoint_error, "codec and denoiser are required");
    const int k = options.hi_res_k;
    if (k < 1) throw Error(Errc::invalid_range, "hi_res_k must be >= 1");
    if (x.height % k != 0 || x.width % k != 0)
        throw Error(Errc::indivisible_dimension, "image " + std::to_string(x.width) + "x" + std::to_string(x.height) +
                                                     " not divisible by k=" + std::to_string(k));
    const ConvCodec& codec = *models.codec;
    const Denoiser& den = *models.denoiser;

    InferenceResult r;
    const Image xs = downscale(x, k);
    r.stage_one_width = xs.width;
    r.stage_one_height = xs.height;
    const DDIMPlan plan = make_ddim_plan(den.schedule(), options.ddim_steps, options.eta);
    r.z0 = sample(clean_predictor(den), encode(xs, codec).latent, plan, den.schedule(), options.seed);
    r.stage_one = decode_image(r.z0, codec);

    if (!options.stage_two || !models.di) {
        r.output = k > 1 ? resize(r.stage_one, x.width, x.height, ResizeMethod::bicubic_antialias) : r.stage_one;
        return r;
    }

    const DetailInjection* di = models.di.get();
    std::unique_ptr<DetailInjection> expanded_di;
    if (models.di_hi_res_k != k) {
        if (models.di_hi_res_k != 1)
            throw Error(Errc::checkpoint_error, "detail injection built for k=" + std::to_string(models.di_hi_res_k) +
                                                    ", requested k=" + std::to_string(k));
        expanded_di = std::make_unique<DetailInjection>(models.di->clone());
        expanded_di->expand_output(k);
        di = expanded_di.get();
    }
    std::unique_ptr<ConvCodec> expanded;
    if (k > 1) expanded = std::make_unique<ConvCodec>(codec.expand_io_channels(k));
    const ConvCodec& stage_codec = expanded ? *expanded : codec;

    const FeatureTapSet taps = encode(k > 1 ? partition(x, k) : x, stage_codec).taps;
    SemanticFeatureMap sem;
    const bool use_sem = di->config().use_semantic_features;
    if (use_sem) {
        if (!models.extractor) throw Error(Errc::checkpoint_error, "semantic extractor missing");
        sem = di->semantic_features(to_tensor(xs), *models.extractor);
    }
    const Tensor out = decode_with_injection(r.z0, taps, use_sem ? &sem : nullptr, stage_codec, *di,
                                             &r.rrdb_features);
    r.output = k > 1 ? merge(to_image(out), k) : to_image(out);
    return r;
}

Image remove_shadow(const Image& x, const ModelBundle& models, const InferenceOptions& options) {
    return remove_shadow_detailed(x, models, options).output;
}

// ---- checkpoints ---------------------------------------------------------------------------

nlohmann::json codec_config_json(const CodecConfig& c) {
    return {{"spatial_downscale", c.spatial_downscale}, {"latent_channels", c.latent_channels},
            {"base_width", c.base_width},               {"n_stages", c.n_stages},
            {"io_channels", c.io_channels},             {"latent_scale", c.latent_scale}};
}

CodecConfig codec_config_from_json(const nlohmann::json& j) {
    CodecConfig c;
    c.spatial_downscale = j.at("spatial_downscale").get<int>();
    c.latent_channels = j.at("latent_channels").get<int>();
    c.base_width = j.at("base_width").get<int>();
    c.n_stages = j.at("n_stages").get<int>();
    c.io_channels = j.at("io_channels").get<int>();
    c.latent_scale = j.at("latent_scale").get<double>();
    return c;
}

nlohmann::json denoiser_config_json(const DenoiserConfig& c, const NoiseSchedule& sched) {
    return {{"latent_channels", c.latent_channels},
            {"in_channels", c.in_channels},
            {"out_channels", c.latent_channels},
            {"widths", c.widths},
            {"time_dim", c.time_dim},
            {"parameterization", parameterization_name(c.parameterization)},
            {"schedule", {{"T", sched.T}, {"beta_start", sched.beta_start}, {"beta_end", sched.beta_end}}}};
}

nlohmann::json di_config_json(const DIConfig& c) {
    return {{"n_branches", c.n_branches},
            {"rrdb_dense_blocks", c.rrdb_dense_blocks},
            {"dense_layers", c.dense_layers},
            {"growth_channels", c.growth_channels},
            {"residual_scale", c.residual_scale},
            {"fuse_kernel", c.fuse_kernel},
            {"use_semantic_features", c.use_semantic_features},
            {"semantic_layers", c.semantic_layers},
            {"semantic_channels", c.semantic_channels},
            {"semantic_token_dim", c.semantic_token_dim},
            {"semantic_seed", c.semantic_seed}};
}

DIConfig di_config_from_json(const nlohmann::json& j) {
    DIConfig c;
    c.n_branches = j.at("n_branches").get<int>();
    c.rrdb_dense_blocks = j.at("rrdb_dense_blocks").get<int>();
    c.dense_layers = j.at("dense_layers").get<int>();
    c.growth_channels = j.at("growth_channels").get<int>();
    c.residual_scale = j.at("residual_scale").get<double>();
    c.fuse_kernel = j.at("fuse_kernel").get<int>();
    c.use_semantic_features = j.at("use_semantic_features").get<bool>();
    c.semantic_layers = j.at("semantic_layers").get<std::vector<int>>();
    c.semantic_channels = j.at("semantic_channels").get<int>();
    c.semantic_token_dim = j.at("semantic_token_dim").get<int>();
    c.semantic_seed = j.at("semantic_seed").get<std::uint64_t>();
    return c;
}

void save_codec(const std::filesystem::path& path, const ConvCodec& codec, int epochs, const std::string& tag) {
    save_checkpoint(path, "codec", codec.parameters(),
                    {{"config", codec_config_json(codec.config())}, {"training_epochs", epochs}, {"dataset_tag", tag}});
}

ConvCodec load_codec(const std::filesystem::path& path, std::string* tag) {
    const nlohmann::json meta = read_sidecar(path, "codec");
    Rng rng(0);
    ConvCodec codec(codec_config_from_json(meta.at("config")), rng);
    load_weights(path, codec.parameters());
    codec.parameters().set_requires_grad(false);
    if (tag) *tag = meta.value("dataset_tag", std::string());
    return codec;
}

void save_denoiser(const std::filesystem::path& path, const UNetDenoiser& den, int epochs, const std::string& tag) {
    save_checkpoint(path, "denoiser", den.parameters(),
                    {{"config", denoiser_config_json(den.config(), den.schedule())},
                     {"parameterization", parameterization_name(den.parameterization())},
                     {"epochs", epochs},
                     {"dataset_tag", tag}});
}

std::unique_ptr<UNetDenoiser> load_denoiser(const std::filesystem::path& path, std::string* tag) {
    const nlohmann::json meta = read_sidecar(path, "denoiser");
    const nlohmann::json& c = meta.at("config");
    DenoiserConfig dc;
    dc.latent_channels = c.at("latent_channels").get<int>();
    dc.in_channels = c.at("in_channels").get<int>();
    dc.widths = c.at("widths").get<std::vector<int>>();
    dc.time_dim = c.at("time_dim").get<int>();
    dc.parameterization = parse_parameterization(meta.at("parameterization").get<std::string>());
    const nlohmann::json& s = c.at("schedule");
    Rng rng(0);
    auto den = std::make_unique<UNetDenoiser>(
        dc, make_noise_schedule(s.at("T").get<int>(), s.at("beta_start").get<double>(), s.at("beta_end").get<double>()),
        rng);
    load_weights(path, den->parameters());
    den->parameters().set_requires_grad(false);
    if (tag) *tag = meta.value("dataset_tag", std::string());
    return den;
}

void save_detail_injection(const std::filesystem::path& path, const DetailInjection& di, const ConvCodec& codec,
                           bool decoder_trained, int hi_res_k, int epochs, const std::string& tag) {
    nn::ParameterList params = di.parameters();
    if (decoder_trained) params.append("decoder", codec.decoder_parameters());
    save_checkpoint(path, "detail_injection", params,
                    {{"di_config", di_config_json(di.config())},
                     {"uses_semantic", di.config().use_semantic_features},
                     {"decoder_trained", decoder_trained},
                     {"codec_config", codec_config_json(codec.config())},
                     {"hi_res_k", hi_res_k},
                     {"epochs", epochs},
                     {"dataset_tag", tag}});
}

DetailInjection load_detail_injection(const std::filesystem::path& path, ConvCodec& codec, int* hi_res_k,
                                      std::string* tag) {
    const nlohmann::json meta = read_sidecar(path, "detail_injection");
    const CodecConfig stored = codec_config_from_json(meta.at("codec_config"));
    const CodecConfig& cc = codec.config();
    if (stored.latent_channels != cc.latent_channels || stored.base_width != cc.base_width ||
        stored.n_stages != cc.n_stages)
        throw Error(Errc::checkpoint_error, "detail injection checkpoint was trained for a different codec");
    Rng rng(0);
    DetailInjection di(di_config_from_json(meta.at("di_config")), codec, rng);
    const int k = meta.at("hi_res_k").get<int>();
    di.expand_output(k);
    nn::ParameterList params = di.parameters();
    const bool decoder_trained = meta.at("decoder_trained").get<bool>();
    if (decoder_trained) {
        // Decoder weights from the checkpoint overwrite the codec's copy.
        params.append("decoder", codec.decoder_parameters());
    }
    load_weights(path, params);
    params.set_requires_grad(false);
    if (hi_res_k) *hi_res_k = k;
    if (tag) *tag = meta.value("dataset_tag", std::string());
    return di;
}

ModelBundle load_models(const std::filesystem::path& codec_path, const std::filesystem::path& denoiser_path,
                        const std::filesystem::path& di_path) {
    ModelBundle b;
    std::string codec_tag, den_tag, di_tag;
    b.codec = std::make_shared<ConvCodec>(load_codec(codec_path, &codec_tag));
    std::unique_ptr<UNetDenoiser> den = load_denoiser(denoiser_path, &den_tag);
    if (den->config().latent_channels != b.codec->config().latent_channels)
        throw Error(Errc::checkpoint_error, "denoiser and codec disagree on latent channels");
    b.denoiser = std::move(den);
    b.dataset_tag = den_tag.empty() ? codec_tag : den_tag;
    if (!di_path.empty()) {
        b.di = std::make_shared<DetailInjection>(load_detail_injection(di_path, *b.codec, &b.di_hi_res_k, &di_tag));
        if (b.di->config().use_semantic_features)
            b.extractor = make_semantic_extractor(b.di->config());
        if (!di_tag.empty()) b.dataset_tag = di_tag;
    }
    return b;
}

}  // namespace shadowlift
