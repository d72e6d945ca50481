// Command-line front end: dataset synthesis, two-phase training, scoring,
// evaluation and full report export, composed through files only.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cavad/config.hpp"
#include "cavad/data.hpp"
#include "cavad/eval.hpp"
#include "cavad/harness.hpp"
#include "cavad/model.hpp"
#include "cavad/scoring.hpp"
#include "cavad/synth.hpp"

namespace fs = std::filesystem;
using namespace cavad;

namespace {

// distinguishes bad invocations (exit 1) from failures of valid ones (exit 2)
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Args {
    std::string config;
    std::string out;
    std::string ckpt;
    std::string data;
    long seed = -1;  // -1 = not given
    std::vector<std::string> sets;
};

std::vector<std::string> overrides_with_seed(const Args& a) {
    std::vector<std::string> sets = a.sets;
    if (a.seed >= 0) sets.push_back("seed=" + std::to_string(a.seed));
    return sets;
}

void write_text(const std::string& path, const std::string& text) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw std::runtime_error("cannot write " + path);
    std::fwrite(text.data(), 1, text.size(), f);
    std::fclose(f);
}

// checkpoint config plus --set overrides; the parameter set must still match
TrainConfig override_ckpt_config(const Checkpoint& ckpt, const std::vector<std::string>& sets) {
    TrainConfig cfg = ckpt.cfg;
    try {
        for (const std::string& s : sets) {
            const size_t eq = s.find('=');
            if (eq == std::string::npos)
                throw std::runtime_error("config: override '" + s + "' is not KEY=VALUE");
            set_train_key(cfg, s.substr(0, eq), s.substr(eq + 1));
        }
        validate(cfg);
    } catch (const std::exception& e) {
        throw UsageError(e.what());
    }
    return cfg;
}

void cmd_synth(const Args& a) {
    SynthConfig cfg;
    try {
        cfg = parse_synth_config(a.config, a.sets);
    } catch (const std::exception& e) {
        throw UsageError(e.what());
    }
    const long seed = a.seed >= 0 ? a.seed : 1;
    synth_generate(cfg, seed, a.out);
    std::cout << "synth: wrote dataset to " << a.out << "\n";
}

void cmd_train(const Args& a) {
    TrainConfig cfg;
    try {
        cfg = parse_train_config(a.config, overrides_with_seed(a));
    } catch (const std::exception& e) {
        throw UsageError(e.what());
    }
    DatasetManifest data = load_frame_dataset(a.data, "train", cfg);
    FrameStore store(data, cfg.frame_size);
    fs::create_directories(a.out);
    write_text((fs::path(a.out) / "config.cfg").string(), dump_config(cfg));

    TrainOptions opts;
    opts.out_dir = a.out;
    TrainResult res = train(cfg, data, store, opts);
    std::cout << "train: " << res.epochs_completed << " epochs, checkpoint at " << res.ckpt_path
              << "\n";
}

struct LoadedModel {
    Checkpoint ckpt;
    TrainConfig cfg;
    DatasetManifest data;
};

LoadedModel load_for_test(const Args& a) {
    LoadedModel lm{load_checkpoint(a.ckpt), TrainConfig{}, DatasetManifest{}};
    lm.cfg = override_ckpt_config(lm.ckpt, a.sets);
    lm.data = load_frame_dataset(a.data, "test", lm.cfg);
    return lm;
}

void cmd_score(const Args& a) {
    LoadedModel lm = load_for_test(a);
    Model model(lm.cfg, lm.ckpt.n_scenes);
    restore(model, lm.ckpt);
    FrameStore store(lm.data, lm.cfg.frame_size);
    std::vector<ScoreSeries> series;
    for (size_t vi = 0; vi < lm.data.videos.size(); ++vi)
        series.push_back(score_video(model, store, lm.data, static_cast<int>(vi)));
    write_score_csvs(series, a.out);
    std::cout << "score: wrote " << series.size() << " series under " << a.out << "/scores\n";
}

void cmd_eval(const Args& a) {
    LoadedModel lm = load_for_test(a);
    Model model(lm.cfg, lm.ckpt.n_scenes);
    restore(model, lm.ckpt);
    FrameStore store(lm.data, lm.cfg.frame_size);
    EvalBundle eb = evaluate_test_set(model, store, lm.data);
    fs::create_directories(a.out);
    write_report_csv((fs::path(a.out) / "report.csv").string(), eb.report);
    write_roc_csv((fs::path(a.out) / "roc.csv").string(), eb.points);
    std::cout << "eval: auc " << eb.report.auc << ", eer " << eb.report.eer << ", fnorm gap "
              << eb.report.fnorm_gap << "\n";
}

void cmd_report(const Args& a) {
    LoadedModel lm = load_for_test(a);
    Model model(lm.cfg, lm.ckpt.n_scenes);
    restore(model, lm.ckpt);
    FrameStore store(lm.data, lm.cfg.frame_size);
    EvalBundle eb = evaluate_test_set(model, store, lm.data);
    export_curves(eb.report, eb.points, eb.series, a.out);
    export_extreme_c1(model, store, lm.data, a.out);
    std::cout << "report: auc " << eb.report.auc << ", wrote report.csv, roc.csv, scores and "
              << "c1 matrices under " << a.out << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"causal representation consistency learning for video anomaly detection"};
    app.require_subcommand(1);
    app.footer(config_help_text());

    Args args;
    auto add_common = [&](CLI::App* sub, bool with_config, bool with_ckpt, bool with_data,
                          bool with_seed) {
        if (with_config)
            sub->add_option("--config", args.config, "flat key = value config file");
        sub->add_option("--out", args.out, "output directory")->required();
        if (with_ckpt) sub->add_option("--ckpt", args.ckpt, "checkpoint file")->required();
        if (with_data) sub->add_option("--data", args.data, "dataset root")->required();
        if (with_seed) sub->add_option("--seed", args.seed, "RNG seed (overrides config)");
        sub->add_option("--set", args.sets, "KEY=VALUE config override (repeatable)");
    };

    CLI::App* synth = app.add_subcommand("synth", "generate the synthetic sprite dataset");
    add_common(synth, true, false, false, true);
    CLI::App* train = app.add_subcommand("train", "run the two-phase training loop");
    add_common(train, true, false, true, true);
    CLI::App* score = app.add_subcommand("score", "write per-video anomaly score CSVs");
    add_common(score, false, true, true, false);
    CLI::App* eval = app.add_subcommand("eval", "compute AUC/EER and the F-norm gap");
    add_common(eval, false, true, true, false);
    CLI::App* report =
        app.add_subcommand("report", "eval plus score curves and C1 matrix dumps");
    add_common(report, false, true, true, false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (synth->parsed()) cmd_synth(args);
        if (train->parsed()) cmd_train(args);
        if (score->parsed()) cmd_score(args);
        if (eval->parsed()) cmd_eval(args);
        if (report->parsed()) cmd_report(args);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
