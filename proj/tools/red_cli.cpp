// Command-line front end: data generation, two-stage training, horizon
// sweeps, ad-hoc anticipation, and the gradient self-check.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>

#include "red/checkpoint.hpp"
#include "red/data.hpp"
#include "red/eval.hpp"
#include "red/gradcheck.hpp"
#include "red/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

std::uint64_t env_seed_or(std::uint64_t fallback) {
    const char* env = std::getenv("RED_SEED");
    if (env == nullptr || *env == '\0') {
        return fallback;
    }
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (end == env || *end != '\0') {
        throw red::ConfigError("RED_SEED is not an integer");
    }
    return static_cast<std::uint64_t>(v);
}

void ensure_output_dir(const fs::path& dir, bool force) {
    if (fs::exists(dir) && !fs::is_directory(dir)) {
        throw red::DataError("output path " + dir.string() + " exists and is not a directory");
    }
    if (fs::is_directory(dir) && !fs::is_empty(dir) && !force) {
        throw red::DataError("output directory " + dir.string() +
                             " is not empty; pass --force to overwrite");
    }
    fs::create_directories(dir);
}

// ---------------------------------------------------------------------------

struct GenDataArgs {
    std::string out;
    red::SyntheticSpec spec;
    bool force = false;
    bool seed_given = false;
};

int cmd_gen_data(GenDataArgs& args) {
    if (!args.seed_given) {
        args.spec.seed = env_seed_or(args.spec.seed);
    }
    args.spec.validate();
    ensure_output_dir(args.out, args.force);
    const red::SyntheticDataset dataset = red::gen_synthetic(args.spec);

    const fs::path dir(args.out);
    std::ofstream manifest(dir / "manifest.txt", std::ios::binary);
    if (!manifest) {
        throw red::DataError("cannot write " + (dir / "manifest.txt").string());
    }
    for (std::size_t v = 0; v < dataset.features.size(); ++v) {
        const std::string stem = dataset.features[v].id;
        red::save_features(dir / (stem + ".feat"), dataset.features[v]);
        red::save_labels(dir / (stem + ".lab"), dataset.labels[v]);
        manifest << stem << ".feat " << stem << ".lab\n";
    }

    std::ofstream provenance(dir / "spec.txt", std::ios::binary);
    provenance << "generator=red gen-data\n"
               << "dim=" << args.spec.dim << "\n"
               << "classes=" << args.spec.classes << "\n"
               << "videos=" << args.spec.videos << "\n"
               << "chunks=" << args.spec.chunks_per_video << "\n"
               << "action_rate=" << args.spec.action_rate << "\n"
               << "separation=" << args.spec.separation << "\n"
               << "noise=" << args.spec.noise << "\n"
               << "smoothing=" << args.spec.smoothing << "\n"
               << "chunk_seconds=" << args.spec.chunk_seconds << "\n"
               << "seed=" << args.spec.seed << "\n";

    std::cout << "wrote " << dataset.features.size() << " videos to " << args.out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string config_path;
    std::string manifest_path;
    std::string out;
    std::string stage = "both";
    std::string arch = "red";
    std::string init_path;
    std::size_t t_ant = 4;
};

void check_dataset_dim(const red::Dataset& dataset, const red::Hyper& hp) {
    for (const red::LabeledVideo& video : dataset) {
        if (video.features.dim != hp.d) {
            throw red::ConfigError("config d=" + std::to_string(hp.d) +
                                   " does not match feature dimension " +
                                   std::to_string(video.features.dim) + " of '" +
                                   video.features.id + "'");
        }
    }
}

void check_init_hyper(const red::Hyper& a, const red::Hyper& b) {
    if (a.t_enc != b.t_enc || a.t_dec != b.t_dec || a.d != b.d || a.h != b.h || a.c != b.c ||
        a.t_ant != b.t_ant) {
        throw red::ConfigError("checkpoint hyperparameters do not match the config");
    }
}

int cmd_train(const TrainArgs& args) {
    red::TrainConfig config = red::parse_train_config(args.config_path);
    config.hyper.t_ant = args.t_ant;
    if (args.arch == "ed" || args.arch == "fc" || args.arch == "efc") {
        config.use_reinforce = false; // no reinforcement module in these variants
    }
    const red::Dataset dataset = red::load_manifest(args.manifest_path);
    check_dataset_dim(dataset, config.hyper);
    fs::create_directories(args.out);
    const fs::path dir(args.out);

    const bool run_stage1 = args.stage == "1" || args.stage == "both";
    const bool run_stage2 = args.stage == "2" || args.stage == "both";
    if (args.stage == "2" && args.init_path.empty()) {
        throw red::ConfigError("--stage 2 needs --init with a stage-1 checkpoint");
    }

    const auto write_outputs = [&](const char* stem, const red::Checkpoint& ckpt,
                                   std::span<const red::EpochStats> curve) {
        red::save_checkpoint(dir / (std::string(stem) + ".ckpt"), ckpt);
        red::write_training_log(dir / (std::string(stem) + "_log.csv"), curve);
        std::cout << "wrote " << (dir / (std::string(stem) + ".ckpt")).string() << "\n";
    };

    if (args.arch == "red" || args.arch == "ed") {
        red::RedParams params = red::make_red_params(config.hyper);
        if (run_stage1) {
            red::TrainResult stage1 =
                red::train_stage1(dataset, config.hyper, config.stage1_options());
            write_outputs("stage1", {red::Arch::red, config.hyper, stage1.params}, stage1.curve);
            params = std::move(stage1.params);
        } else {
            const red::Checkpoint init = red::load_checkpoint(args.init_path);
            check_init_hyper(init.hyper, config.hyper);
            params = init.red();
        }
        if (run_stage2) {
            const red::TrainResult stage2 =
                red::train_stage2(params, dataset, config.hyper, config.stage2_options());
            write_outputs("stage2", {red::Arch::red, config.hyper, stage2.params}, stage2.curve);
        }
        return 0;
    }
    if (args.arch == "fc") {
        red::FcParams params = red::make_fc_params(config.hyper);
        if (run_stage1) {
            red::FcTrainResult stage1 =
                red::train_fc_stage1(dataset, config.hyper, config.stage1_options());
            write_outputs("stage1", {red::Arch::fc, config.hyper, stage1.params}, stage1.curve);
            params = std::move(stage1.params);
        } else {
            const red::Checkpoint init = red::load_checkpoint(args.init_path);
            check_init_hyper(init.hyper, config.hyper);
            params = init.fc();
        }
        if (run_stage2) {
            const red::FcTrainResult stage2 =
                red::train_fc_stage2(params, dataset, config.hyper, config.stage2_options());
            write_outputs("stage2", {red::Arch::fc, config.hyper, stage2.params}, stage2.curve);
        }
        return 0;
    }
    red::EfcParams params = red::make_efc_params(config.hyper);
    if (run_stage1) {
        red::EfcTrainResult stage1 =
            red::train_efc_stage1(dataset, config.hyper, config.stage1_options());
        write_outputs("stage1", {red::Arch::efc, config.hyper, stage1.params}, stage1.curve);
        params = std::move(stage1.params);
    } else {
        const red::Checkpoint init = red::load_checkpoint(args.init_path);
        check_init_hyper(init.hyper, config.hyper);
        params = init.efc();
    }
    if (run_stage2) {
        const red::EfcTrainResult stage2 =
            red::train_efc_stage2(params, dataset, config.hyper, config.stage2_options());
        write_outputs("stage2", {red::Arch::efc, config.hyper, stage2.params}, stage2.curve);
    }
    return 0;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
    std::string checkpoint;
    std::string manifest;
    std::vector<std::size_t> horizons;
    std::string out = "report.csv";
    std::string dump;
    bool global_w = false;
    std::size_t jobs = 1;
};

std::unique_ptr<red::Anticipator> make_anticipator(const red::Checkpoint& ckpt) {
    switch (ckpt.arch) {
    case red::Arch::red:
        return std::make_unique<red::RedAnticipator>(ckpt.red(), ckpt.hyper);
    case red::Arch::fc:
        return std::make_unique<red::FcAnticipator>(ckpt.fc(), ckpt.hyper);
    case red::Arch::efc:
        return std::make_unique<red::EfcAnticipator>(ckpt.efc(), ckpt.hyper);
    }
    throw red::Error("unreachable architecture tag");
}

int cmd_eval(EvalArgs& args) {
    const red::Checkpoint ckpt = red::load_checkpoint(args.checkpoint);
    const std::unique_ptr<red::Anticipator> model = make_anticipator(ckpt);
    if (args.horizons.empty()) {
        if (ckpt.arch == red::Arch::red) {
            for (std::size_t h = 1; h <= ckpt.hyper.t_dec; ++h) {
                args.horizons.push_back(h);
            }
        } else {
            args.horizons.push_back(ckpt.hyper.t_ant);
        }
    }
    const red::Dataset dataset = red::load_manifest(args.manifest);

    red::EvalOptions options;
    options.global_w = args.global_w;
    options.jobs = args.jobs;
    red::MetricsReport report = red::evaluate_horizons(*model, dataset, args.horizons, options);
    std::string echo =
        "checkpoint=" + args.checkpoint + " manifest=" + args.manifest + " horizons=";
    for (std::size_t i = 0; i < args.horizons.size(); ++i) {
        echo += (i == 0 ? "" : ",") + std::to_string(args.horizons[i]);
    }
    report.config_echo = echo;

    red::write_report_csv(std::cout, report);
    if (!args.out.empty()) {
        std::ofstream file(args.out, std::ios::binary);
        if (!file) {
            throw red::DataError("cannot write report " + args.out);
        }
        red::write_report_csv(file, report);
    }
    if (!args.dump.empty()) {
        const std::vector<red::PredictionRow> rows =
            red::collect_predictions(*model, dataset, args.horizons, args.jobs);
        std::ofstream file(args.dump, std::ios::binary);
        if (!file) {
            throw red::DataError("cannot write dump " + args.dump);
        }
        red::write_prediction_dump(file, rows);
    }
    return 0;
}

// ---------------------------------------------------------------------------

struct AnticipateArgs {
    std::string checkpoint;
    std::string features;
    std::size_t at = 0;
};

int cmd_anticipate(const AnticipateArgs& args) {
    const red::Checkpoint ckpt = red::load_checkpoint(args.checkpoint);
    const red::FeatureSequence video = red::load_features(args.features);
    if (video.dim != ckpt.hyper.d) {
        throw red::DataError("feature dimension does not match the checkpoint");
    }
    const std::unique_ptr<red::Anticipator> model = make_anticipator(ckpt);
    if (args.at < model->history_len()) {
        throw red::DataError("anchor " + std::to_string(args.at) + " has fewer than " +
                             std::to_string(model->history_len()) + " observed chunks");
    }
    if (args.at > video.length()) {
        throw red::DataError("anchor " + std::to_string(args.at) + " is past the video end");
    }

    std::vector<red::Vector> outputs;
    std::vector<red::Vector> probs;
    std::vector<std::size_t> steps;
    if (ckpt.arch == red::Arch::red) {
        const std::span<const red::Vector> history(
            video.chunks.data() + (args.at - ckpt.hyper.t_enc), ckpt.hyper.t_enc);
        auto [h, c] = red::encode(history, ckpt.red());
        outputs = red::decode(h, c, ckpt.red(), ckpt.hyper.t_dec);
        for (std::size_t j = 1; j <= ckpt.hyper.t_dec; ++j) {
            steps.push_back(j);
            probs.push_back(red::classify(outputs[j - 1], ckpt.red()));
        }
    } else if (ckpt.arch == red::Arch::fc) {
        outputs.push_back(red::fc_anticipate(video.chunks[args.at - 1], ckpt.fc()));
        steps.push_back(ckpt.hyper.t_ant);
        probs.push_back(red::classify_with(ckpt.fc().cls1, ckpt.fc().cls2, outputs[0]));
    } else {
        const std::span<const red::Vector> history(
            video.chunks.data() + (args.at - ckpt.hyper.t_enc), ckpt.hyper.t_enc);
        outputs.push_back(red::efc_anticipate(history, ckpt.efc()));
        steps.push_back(ckpt.hyper.t_ant);
        probs.push_back(red::classify_with(ckpt.efc().cls1, ckpt.efc().cls2, outputs[0]));
    }

    for (std::size_t i = 0; i < outputs.size(); ++i) {
        const std::size_t argmax = static_cast<std::size_t>(
            std::max_element(probs[i].begin(), probs[i].end()) - probs[i].begin());
        json line;
        line["step"] = steps[i];
        line["chunk"] = args.at + steps[i] - 1;
        line["seconds_ahead"] = static_cast<double>(steps[i]) * video.chunk_seconds;
        line["probs"] = probs[i];
        line["argmax"] = argmax;
        line["feature_norm"] = std::sqrt(red::squared_norm(outputs[i]));
        std::cout << line.dump() << "\n";
    }
    return 0;
}

// ---------------------------------------------------------------------------

struct GradCheckArgs {
    red::GradCheckOptions options;
    bool seed_given = false;
};

int cmd_grad_check(GradCheckArgs& args) {
    if (!args.seed_given) {
        args.options.seed = env_seed_or(args.options.seed);
    }
    const auto start = std::chrono::steady_clock::now();
    const std::vector<red::LossCheck> checks = red::run_grad_checks(args.options);
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    for (const red::LossCheck& check : checks) {
        char buf[256];
        std::snprintf(buf, sizeof(buf),
                      "%-14s max_rel_err=%.3e worst=%s analytic=%.9e numeric=%.9e  %s",
                      check.loss.c_str(), check.report.max_relative_error,
                      check.worst_parameter.c_str(), check.report.analytic_value,
                      check.report.numeric_value, check.passed ? "PASS" : "FAIL");
        std::cout << buf << "\n";
    }
    std::fprintf(stderr, "grad check took %.2f s\n", elapsed);
    if (!red::all_passed(checks)) {
        std::cout << "gradient check FAILED\n";
        return kExitNumeric;
    }
    std::cout << "all gradient checks passed\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"reinforced encoder-decoder action anticipation"};
    app.require_subcommand(1);

    GenDataArgs gen_args;
    CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic feature/label dataset");
    gen->add_option("--out", gen_args.out, "output directory")->required();
    gen->add_option("--videos", gen_args.spec.videos, "number of videos");
    gen->add_option("--chunks", gen_args.spec.chunks_per_video, "chunks per video");
    gen->add_option("--classes", gen_args.spec.classes, "action classes")
        ->check(CLI::PositiveNumber);
    gen->add_option("--dim", gen_args.spec.dim, "feature dimension");
    gen->add_option("--sep", gen_args.spec.separation, "class mean norm");
    gen->add_option("--noise", gen_args.spec.noise, "per-coordinate sigma");
    gen->add_option("--rho", gen_args.spec.smoothing, "backward AR(1) coefficient");
    gen->add_option("--action-rate", gen_args.spec.action_rate, "target action coverage");
    gen->add_option("--chunk-seconds", gen_args.spec.chunk_seconds, "seconds per chunk");
    auto* gen_seed = gen->add_option("--seed", gen_args.spec.seed, "generator seed");
    gen->add_flag("--force", gen_args.force, "overwrite a non-empty output directory");
    gen->callback([&]() { gen_args.seed_given = gen_seed->count() > 0; });

    TrainArgs train_args;
    CLI::App* train = app.add_subcommand("train", "train a model (two-stage)");
    train->add_option("--config", train_args.config_path, "key=value training config")
        ->required();
    train->add_option("--manifest", train_args.manifest_path, "dataset manifest")->required();
    train->add_option("--out", train_args.out, "output directory")->required();
    train->add_option("--stage", train_args.stage, "which stage to run")
        ->check(CLI::IsMember({"1", "2", "both"}));
    train->add_option("--arch", train_args.arch, "architecture variant")
        ->check(CLI::IsMember({"red", "ed", "fc", "efc"}));
    train->add_option("--init", train_args.init_path, "stage-1 checkpoint for --stage 2");
    train->add_option("--t-ant", train_args.t_ant, "fixed horizon for fc/efc");

    EvalArgs eval_args;
    CLI::App* eval = app.add_subcommand("eval", "horizon sweep metrics");
    eval->add_option("--checkpoint", eval_args.checkpoint, "model checkpoint")->required();
    eval->add_option("--manifest", eval_args.manifest, "labeled dataset manifest")->required();
    eval->add_option("--horizons", eval_args.horizons, "horizons in chunks")->delimiter(',');
    eval->add_option("--out", eval_args.out, "report CSV path");
    eval->add_option("--dump", eval_args.dump, "raw prediction CSV path");
    eval->add_flag("--global-w", eval_args.global_w, "one dataset-wide calibration ratio");
    eval->add_option("--jobs", eval_args.jobs, "worker threads")->check(CLI::PositiveNumber);

    AnticipateArgs ant_args;
    CLI::App* ant = app.add_subcommand("anticipate", "anticipate future steps at one anchor");
    ant->add_option("--checkpoint", ant_args.checkpoint, "model checkpoint")->required();
    ant->add_option("--features", ant_args.features, "feature file")->required();
    ant->add_option("--at", ant_args.at, "anchor chunk index")->required();

    GradCheckArgs gc_args;
    CLI::App* gc = app.add_subcommand("grad-check", "verify analytic gradients");
    gc->add_option("--dim", gc_args.options.hyper.d, "feature dimension");
    gc->add_option("--hidden", gc_args.options.hyper.h, "hidden dimension");
    gc->add_option("--t-enc", gc_args.options.hyper.t_enc, "encoder steps");
    gc->add_option("--t-dec", gc_args.options.hyper.t_dec, "anticipation steps");
    gc->add_option("--classes", gc_args.options.hyper.c, "action classes");
    auto* gc_seed = gc->add_option("--seed", gc_args.options.seed, "seed");
    gc->add_option("--eps", gc_args.options.epsilon, "finite-difference step");
    gc->add_option("--tol", gc_args.options.tolerance, "max relative error");
    gc->add_flag("--corrupt", gc_args.options.corrupt,
                 "deliberately corrupt the analytic gradients (self-test)");
    gc->callback([&]() { gc_args.seed_given = gc_seed->count() > 0; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            return app.exit(e); // --help / --version
        }
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }

    try {
        if (gen->parsed()) {
            return cmd_gen_data(gen_args);
        }
        if (train->parsed()) {
            return cmd_train(train_args);
        }
        if (eval->parsed()) {
            return cmd_eval(eval_args);
        }
        if (ant->parsed()) {
            return cmd_anticipate(ant_args);
        }
        if (gc->parsed()) {
            return cmd_grad_check(gc_args);
        }
    } catch (const red::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const red::NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const red::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return kExitUsage;
}
