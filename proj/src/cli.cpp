#include "shadowlift/cli.hpp"

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include "shadowlift/checkpoint.hpp"
#include "shadowlift/error.hpp"
#include "shadowlift/metrics.hpp"
#include "shadowlift/pipeline.hpp"

namespace shadowlift {

namespace fs = std::filesystem;

namespace {

struct Options {
    std::string command;
    std::string config_path;
    std::string preset_name = "toy";
    std::vector<std::string> overrides;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::string seeds;
    std::string input;
    std::string dataset;
    std::string ckpt_codec, ckpt_denoiser, ckpt_di;
    std::optional<int> hi_res_k;
    bool no_semantic = false;
    bool no_stage_two = false;
    bool unfreeze_decoder = false;
    int count = 64;
    int test_count = 16;
    int size = 64;
    std::string style = "a";
    int branch = 1;
    std::string test_tag;
};

struct Context {
    const Options& opt;
    std::ostream& out;
    TrainConfig cfg;
    std::vector<std::uint64_t> seeds_used;
    std::vector<std::string> outputs;
};

TrainConfig resolve_config(const Options& o, Stage stage) {
    TrainConfig cfg = preset(o.preset_name, stage);
    if (!o.config_path.empty()) cfg = load_config(o.config_path, cfg);
    for (const std::string& kv : o.overrides) apply_override(cfg, kv);
    cfg.stage = stage;
    if (!o.dataset.empty()) cfg.dataset_root = o.dataset;
    if (o.seed) cfg.seed = *o.seed;
    if (o.hi_res_k) cfg.hi_res_k = *o.hi_res_k;
    if (o.no_semantic) cfg.use_semantic_features = false;
    if (o.unfreeze_decoder) cfg.freeze_decoder = false;
    return cfg;
}

std::vector<ImagePair> load_all(const fs::path& root, Split split) {
    if (root.empty()) throw Error(Errc::config_error, "no dataset given (--dataset or dataset_root)");
    const PairDataset ds = load_pair_dataset(root, split);
    if (ds.empty()) throw Error(Errc::empty_dataset, "empty dataset");
    std::vector<ImagePair> pairs;
    for (std::size_t i = 0; i < ds.size(); ++i) pairs.push_back(ds.get(i));
    return pairs;
}

fs::path out_dir(const Options& o) {
    if (o.out.empty()) throw Error(Errc::config_error, "--out is required");
    fs::create_directories(o.out);
    return o.out;
}

std::string require(const std::string& value, const char* flag) {
    if (value.empty()) throw Error(Errc::config_error, std::string(flag) + " is required");
    return value;
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
    if (text.empty()) return default_seeds();
    std::vector<std::uint64_t> seeds;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t pos = 0;
            seeds.push_back(std::stoull(item, &pos));
            if (pos != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw Error(Errc::config_error, "invalid seed '" + item + "' in --seeds");
        }
    }
    return seeds;
}

void log_epoch(std::ostream& out, const char* what, int epoch, double loss) {
    out << what << " epoch " << epoch << " loss " << loss << '\n';
}

ModelBundle bundle_from(const Options& o, bool want_di) {
    const fs::path di = want_di && !o.no_stage_two ? fs::path(o.ckpt_di) : fs::path();
    return load_models(require(o.ckpt_codec, "--ckpt-codec"), require(o.ckpt_denoiser, "--ckpt-denoiser"), di);
}

InferenceOptions inference_options(const Context& c, std::uint64_t seed) {
    InferenceOptions io;
    io.seed = seed;
    io.ddim_steps = c.cfg.ddim_steps;
    io.eta = c.cfg.eta;
    io.hi_res_k = c.opt.hi_res_k.value_or(1);
    io.stage_two = !c.opt.no_stage_two;
    return io;
}

ModelFn model_fn(const ModelBundle& models, const InferenceOptions& base) {
    return [&models, base](const Image& x, std::uint64_t seed) {
        InferenceOptions io = base;
        io.seed = seed;
        return remove_shadow(x, models, io);
    };
}

// ---- subcommands -----------------------------------------------------------------------

void cmd_gen_data(Context& c) {
    const Options& o = c.opt;
    const fs::path root = out_dir(o);
    const std::uint64_t seed = o.seed.value_or(1);
    if (o.style != "a" && o.style != "b") throw Error(Errc::config_error, "--style must be a or b");
    SynthOptions so;
    so.style = o.style == "a" ? SynthStyle::a : SynthStyle::b;
    write_pair_dataset(root, Split::train, synth_dataset(seed, o.count, o.size, so));
    write_pair_dataset(root, Split::test, synth_dataset(mix_seed(seed, 0x7e57), o.test_count, o.size, so));
    write_json(root / "manifest.json", {{"seed", seed},
                                        {"count", o.count},
                                        {"test_count", o.test_count},
                                        {"size", o.size},
                                        {"style", o.style}});
    c.seeds_used = {seed};
    c.outputs = {(root / "train").string(), (root / "test").string(), (root / "manifest.json").string()};
    c.out << "wrote " << o.count << " train and " << o.test_count << " test pairs to " << root.string() << '\n';
}

void cmd_train_codec(Context& c) {
    const fs::path dir = out_dir(c.opt);
    c.cfg = resolve_config(c.opt, Stage::one);
    const auto data = load_all(c.cfg.dataset_root, Split::train);
    TrainLog log;
    const ConvCodec codec = train_codec(c.cfg, data, CodecConfig{}, &log,
                                        [&](int e, double l) { log_epoch(c.out, "codec", e, l); });
    save_codec(dir / "codec.bin", codec, c.cfg.epochs, c.cfg.dataset_tag);
    log.write_csv(dir / "codec_log.csv");
    c.seeds_used = {c.cfg.seed};
    c.outputs = {(dir / "codec.bin").string(), (dir / "codec_log.csv").string()};
}

void cmd_train_stage1(Context& c) {
    const fs::path dir = out_dir(c.opt);
    c.cfg = resolve_config(c.opt, Stage::one);
    const ConvCodec codec = load_codec(require(c.opt.ckpt_codec, "--ckpt-codec"));
    const auto data = load_all(c.cfg.dataset_root, Split::train);
    TrainLog log;
    const auto den = train_stage_one(c.cfg, codec, data, DenoiserConfig{}, &log,
                                     [&](int e, double l) { log_epoch(c.out, "stage1", e, l); });
    save_denoiser(dir / "denoiser.bin", *den, c.cfg.epochs, c.cfg.dataset_tag);
    log.write_csv(dir / "stage1_log.csv");
    c.seeds_used = {c.cfg.seed};
    c.outputs = {(dir / "denoiser.bin").string(), (dir / "stage1_log.csv").string()};
}

void cmd_train_stage2(Context& c) {
    const fs::path dir = out_dir(c.opt);
    c.cfg = resolve_config(c.opt, Stage::two);
    ConvCodec codec = load_codec(require(c.opt.ckpt_codec, "--ckpt-codec"));
    const auto den = load_denoiser(require(c.opt.ckpt_denoiser, "--ckpt-denoiser"));
    const auto data = load_all(c.cfg.dataset_root, Split::train);
    DIConfig dc;
    dc.use_semantic_features = c.cfg.use_semantic_features;
    const auto extractor = make_semantic_extractor(dc);
    const RandomConvPyramid perceptual(kDefaultPerceptualSeed);
    TrainLog log;
    const DetailInjection di = train_stage_two(c.cfg, codec, *den, data, dc, extractor.get(), perceptual, &log,
                                               [&](int e, double l) { log_epoch(c.out, "stage2", e, l); });
    save_detail_injection(dir / "di.bin", di, codec, !c.cfg.freeze_decoder, c.cfg.hi_res_k, c.cfg.epochs,
                          c.cfg.dataset_tag);
    log.write_csv(dir / "stage2_log.csv");
    c.seeds_used = {c.cfg.seed};
    c.outputs = {(dir / "di.bin").string(), (dir / "stage2_log.csv").string()};
}

void cmd_infer(Context& c) {
    const fs::path dir = out_dir(c.opt);
    c.cfg = resolve_config(c.opt, Stage::two);
    const ModelBundle models = bundle_from(c.opt, true);
    const fs::path input = require(c.opt.input, "--input");
    const std::uint64_t seed = c.opt.seed.value_or(1);
    const Image out = remove_shadow(read_png(input), models, inference_options(c, seed));
    const fs::path target = dir / (input.stem().string() + "_shadow_free.png");
    write_png(target, out);
    c.seeds_used = {seed};
    c.outputs = {target.string()};
    c.out << "wrote " << target.string() << '\n';
}

void cmd_eval(Context& c) {
    const fs::path dir = out_dir(c.opt);
    c.cfg = resolve_config(c.opt, Stage::two);
    const ModelBundle models = bundle_from(c.opt, true);
    const PairDataset ds = load_pair_dataset(require(c.opt.dataset, "--dataset"), Split::test);
    const std::uint64_t seed = c.opt.seed.value_or(1);
    MetricsRecord rec = evaluate(model_fn(models, inference_options(c, seed)), ds, seed);
    rec.label = fs::path(c.opt.dataset).filename().string();
    write_metrics_csv(dir / "metrics.csv", rec);
    write_json(dir / "metrics.json", metrics_json(rec));
    c.seeds_used = {seed};
    c.outputs = {(dir / "metrics.csv").string(), (dir / "metrics.json").string()};
    c.out << "mean_psnr " << format_metric(rec.mean_psnr) << " mean_ssim " << format_metric(rec.mean_ssim)
          << " count " << rec.count << '\n';
}

void cmd_variance(Context& c) {
    const fs::path dir = out_dir(c.opt);
    c.cfg = resolve_config(c.opt, Stage::two);
    const ModelBundle models = bundle_from(c.opt, true);
    const PairDataset ds = load_pair_dataset(require(c.opt.dataset, "--dataset"), Split::test);
    const std::vector<std::uint64_t> seeds = parse_seeds(c.opt.seeds);
    const VarianceReport rep = seed_variance(model_fn(models, inference_options(c, 1)), ds, seeds);
    write_json(dir / "variance.json", variance_json(rep));
    c.seeds_used = seeds;
    c.outputs = {(dir / "variance.json").string()};
    c.out << "mean_variance " << format_metric(rep.mean_variance) << " mean_psnr " << format_metric(rep.mean_psnr)
          << '\n';
}

void cmd_cross_eval(Context& c) {
    const fs::path dir = out_dir(c.opt);
    c.cfg = resolve_config(c.opt, Stage::two);
    const ModelBundle models = bundle_from(c.opt, true);
    const fs::path root = require(c.opt.dataset, "--dataset");
    const PairDataset ds = load_pair_dataset(root, Split::test);
    const std::string test_tag = c.opt.test_tag.empty() ? root.filename().string() : c.opt.test_tag;
    const std::uint64_t seed = c.opt.seed.value_or(1);
    const MetricsRecord rec =
        cross_dataset_eval(model_fn(models, inference_options(c, seed)), models.dataset_tag, ds, test_tag, seed);
    write_metrics_csv(dir / "cross_eval.csv", rec);
    write_json(dir / "cross_eval.json", metrics_json(rec));
    c.seeds_used = {seed};
    c.outputs = {(dir / "cross_eval.csv").string(), (dir / "cross_eval.json").string()};
    c.out << rec.label << " mean_psnr " << format_metric(rec.mean_psnr) << " mean_ssim "
          << format_metric(rec.mean_ssim) << '\n';
}

void cmd_visualize(Context& c) {
    const fs::path dir = out_dir(c.opt);
    c.cfg = resolve_config(c.opt, Stage::two);
    if (c.opt.no_stage_two) throw Error(Errc::config_error, "visualize needs the detail injection model");
    const ModelBundle models = bundle_from(c.opt, true);
    if (!models.di) throw Error(Errc::config_error, "--ckpt-di is required");
    const fs::path input = require(c.opt.input, "--input");
    const std::uint64_t seed = c.opt.seed.value_or(1);
    const InferenceResult res = remove_shadow_detailed(read_png(input), models, inference_options(c, seed));
    const int n = static_cast<int>(res.rrdb_features.size());
    if (c.opt.branch < 1 || c.opt.branch > n)
        throw Error(Errc::out_of_range, "--branch must be in [1, " + std::to_string(n) + "]");
    const fs::path pca = dir / (input.stem().string() + "_branch" + std::to_string(c.opt.branch) + "_pca.png");
    write_png_unit(pca, pca_visualize(res.rrdb_features[c.opt.branch - 1]));
    const fs::path output = dir / (input.stem().string() + "_shadow_free.png");
    write_png(output, res.output);
    c.seeds_used = {seed};
    c.outputs = {pca.string(), output.string()};
    c.out << "wrote " << pca.string() << '\n';
}

void write_run_manifest(const Context& c, const std::vector<std::string>& args, double seconds) {
    if (c.opt.out.empty()) return;
    const std::string config = config_to_text(c.cfg);
    char hash[17];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(hash_string(config)));
    write_json(fs::path(c.opt.out) / "run_manifest.json", {{"command", c.opt.command},
                                                           {"args", args},
                                                           {"config", config},
                                                           {"config_hash", hash},
                                                           {"seeds", c.seeds_used},
                                                           {"outputs", c.outputs},
                                                           {"wall_time_s", seconds}});
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    Options o;
    CLI::App app{"Two-stage latent diffusion shadow removal", "shadowlift"};
    app.require_subcommand(1);

    auto add_config = [&o](CLI::App* s) {
        s->add_option("--config", o.config_path, "key=value config file");
        s->add_option("--preset", o.preset_name, "base preset: toy, istd, srd, ins, wsrd");
        s->add_option("--set", o.overrides, "override key=value (repeatable)");
    };
    auto add_ckpts = [&o](CLI::App* s) {
        s->add_option("--ckpt-codec", o.ckpt_codec, "codec checkpoint");
        s->add_option("--ckpt-denoiser", o.ckpt_denoiser, "stage-one checkpoint");
        s->add_option("--ckpt-di", o.ckpt_di, "stage-two checkpoint");
        s->add_option("--hi-res-k", o.hi_res_k, "patch-partition factor");
        s->add_flag("--no-stage-two", o.no_stage_two, "decode stage-one latents without detail injection");
    };
    auto add_common = [&o](CLI::App* s) {
        s->add_option("--out", o.out, "output directory");
        s->add_option("--seed", o.seed, "random seed");
    };

    auto* gen = app.add_subcommand("gen-data", "write a synthetic paired dataset");
    add_common(gen);
    gen->add_option("--count", o.count, "training pairs");
    gen->add_option("--test-count", o.test_count, "test pairs");
    gen->add_option("--size", o.size, "image side length");
    gen->add_option("--style", o.style, "generator style a or b");

    const std::map<std::string, std::string> about{
        {"train-codec", "train the latent codec on inputs and targets"},
        {"train-stage1", "train the latent denoiser against a frozen codec"},
        {"train-stage2", "train the detail injection module"},
        {"eval", "score a test split (PSNR, SSIM)"},
        {"variance", "per-image PSNR variance across seeds"},
        {"cross-eval", "score a test split under an A→B label"}};

    for (const char* name : {"train-codec", "train-stage1", "train-stage2"}) {
        auto* s = app.add_subcommand(name, about.at(name));
        add_common(s);
        add_config(s);
        s->add_option("--dataset", o.dataset, "dataset root");
        s->add_option("--hi-res-k", o.hi_res_k, "patch-partition factor");
        if (std::string(name) != "train-codec") s->add_option("--ckpt-codec", o.ckpt_codec, "codec checkpoint");
        if (std::string(name) == "train-stage2") {
            s->add_option("--ckpt-denoiser", o.ckpt_denoiser, "stage-one checkpoint");
            s->add_flag("--no-semantic", o.no_semantic, "train without semantic features");
            s->add_flag("--unfreeze-decoder", o.unfreeze_decoder, "also train the codec decoder");
        }
    }

    for (const char* name : {"infer", "visualize"}) {
        auto* s = app.add_subcommand(name, name == std::string("infer") ? "remove shadows from one image"
                                                                         : "PCA view of RRDB features");
        add_common(s);
        add_config(s);
        add_ckpts(s);
        s->add_option("--input", o.input, "input PNG");
        if (name == std::string("visualize")) s->add_option("--branch", o.branch, "detail injection branch");
    }

    for (const char* name : {"eval", "variance", "cross-eval"}) {
        auto* s = app.add_subcommand(name, about.at(name));
        add_common(s);
        add_config(s);
        add_ckpts(s);
        s->add_option("--dataset", o.dataset, "dataset root");
        if (name == std::string("variance")) s->add_option("--seeds", o.seeds, "comma separated seeds");
        if (name == std::string("cross-eval")) s->add_option("--test-tag", o.test_tag, "label of the test dataset");
    }

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    }
    o.command = app.get_subcommands().front()->get_name();

    Context c{o, out, TrainConfig{}, {}, {}};
    const auto start = std::chrono::steady_clock::now();
    try {
        if (o.command == "gen-data") cmd_gen_data(c);
        else if (o.command == "train-codec") cmd_train_codec(c);
        else if (o.command == "train-stage1") cmd_train_stage1(c);
        else if (o.command == "train-stage2") cmd_train_stage2(c);
        else if (o.command == "infer") cmd_infer(c);
        else if (o.command == "eval") cmd_eval(c);
        else if (o.command == "variance") cmd_variance(c);
        else if (o.command == "cross-eval") cmd_cross_eval(c);
        else if (o.command == "visualize") cmd_visualize(c);
        write_run_manifest(c, args, std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return e.code() == Errc::config_error ? kExitUsage : kExitFailure;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitFailure;
    }
    return kExitOk;
}

}  // namespace shadowlift
