// SPDX-License-Identifier: Apache-2.0

#include "mfpn/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>

#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"

#include "mfpn/analysis.hpp"
#include "mfpn/config.hpp"
#include "mfpn/heatmap.hpp"
#include "mfpn/training.hpp"
#include "mfpn/weight_file.hpp"

namespace mfpn {

namespace fs = std::filesystem;

namespace {

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string preset;
    std::string builder;
    std::string checkpoint;
};

// Demo budget: small enough for a couple of minutes on one core.
constexpr int kDemoChannels = 8;
constexpr int kDemoTrainScenes = 400;
constexpr int kDemoEvalScenes = 100;

void configure_logging() {
    auto logger = spdlog::get("mfpn");
    if (!logger) {
        logger = spdlog::stderr_logger_mt("mfpn");
        logger->set_pattern("[%l] %v");
        spdlog::set_default_logger(logger);
    }
    const char* env = std::getenv("MFPN_LOG");
    const std::string level = env ? env : "info";
    if (level == "quiet") {
        spdlog::set_level(spdlog::level::off);
    } else if (level == "debug") {
        spdlog::set_level(spdlog::level::debug);
    } else {
        spdlog::set_level(spdlog::level::info);
        if (level != "info") {
            spdlog::warn("MFPN_LOG='{}' not one of quiet, info, debug; using info", level);
        }
    }
}

ExperimentConfig resolve_config(const Options& opt) {
    ExperimentConfig cfg;
    if (!opt.config.empty()) {
        cfg = load_config(opt.config);
    } else {
        spdlog::debug("default config:\n{}", write_config(cfg));
    }
    if (opt.seed) {
        cfg.seed = *opt.seed;
    }
    if (!opt.builder.empty()) {
        cfg.builder = parse_builder_kind(opt.builder);
    }
    if (!opt.out.empty()) {
        cfg.out_dir = opt.out;
    }
    cfg.validate();
    return cfg;
}

void write_file(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    std::ofstream f(path, std::ios::binary);
    f << text;
    if (!f) {
        throw std::runtime_error("cannot write " + path.string());
    }
}

fs::path train_dir(const fs::path& out, BuilderKind kind) { return out / ("train_" + std::string(to_string(kind))); }

// ---- paramcount ----------------------------------------------------------

std::string builder_totals(const FpnConfig& cfg) {
    std::ostringstream os;
    os << "totals by builder\n";
    std::map<BuilderKind, std::int64_t> totals;
    for (BuilderKind k : kAllBuilders) {
        os << "  " << std::left << std::setw(18) << to_string(k) << std::right;
        try {
            totals[k] = count_params(cfg, k).total;
            os << std::setw(12) << totals[k] << "\n";
        } catch (const std::invalid_argument& e) {
            os << std::setw(12) << "n/a" << "  (" << e.what() << ")\n";
        }
    }
    const auto has = [&](BuilderKind k) { return totals.contains(k); };
    if (has(BuilderKind::top_down) && has(BuilderKind::bottom_up) && has(BuilderKind::fusing_splitting) &&
        has(BuilderKind::mfpn)) {
        const std::int64_t laterals = count_params(cfg, BuilderKind::mfpn).subtotal("laterals");
        const std::int64_t extra = count_params(cfg, BuilderKind::mfpn).subtotal("extra");
        const std::int64_t branches =
            totals[BuilderKind::top_down] + totals[BuilderKind::bottom_up] + totals[BuilderKind::fusing_splitting];
        os << "  sum of branches " << branches << ", shared laterals " << laterals << ", shared extra " << extra
           << "\n";
        os << "  mfpn = branches - 2*(laterals + extra): "
           << (totals[BuilderKind::mfpn] == branches - 2 * (laterals + extra) ? "holds" : "VIOLATED") << "\n";
    }
    return os.str();
}

int cmd_paramcount(const Options& opt, std::ostream& out) {
    ExperimentConfig cfg = resolve_config(opt);
    FpnConfig fpn = cfg.fpn;
    BuilderKind kind = cfg.builder;
    if (opt.preset == "retinanet-fpn") {
        fpn = retinanet_fpn_preset();
        kind = BuilderKind::fpn;
    } else if (opt.preset == "resnet50") {
        fpn = resnet50_pyramid_preset();
    }
    if (!opt.builder.empty()) {
        kind = parse_builder_kind(opt.builder);
    }
    const ParamReport report = count_params(fpn, kind);
    std::ostringstream text;
    text << report.to_text() << "\n" << builder_totals(fpn) << "\n" << parameter_reconciliation_report() << "\n"
         << "total: " << report.total << "\n";
    out << text.str();
    if (!opt.out.empty()) {
        write_file(fs::path(opt.out) / "paramcount.txt", text.str());
        write_file(fs::path(opt.out) / "paramcount.json", report.to_json().dump(2) + "\n");
    }
    return 0;
}

// ---- flow ------------------------------------------------------------------

bool run_flow(const ExperimentConfig& cfg, const std::vector<BuilderKind>& kinds, std::ostream& out,
              const std::optional<fs::path>& dir) {
    FpnConfig fpn = cfg.fpn;
    fpn.extra_levels = ExtraLevels::off;
    bool all_match = true;
    std::string csv = "builder,output_level,backbone_level,magnitude,reaches\n";
    std::string text;
    for (BuilderKind k : kinds) {
        const FlowMatrix fm = flow_matrix(k, fpn, cfg.seed, 1 << fpn.max_level);
        const bool match = fm.reaches == analytic_flow_mask(k, fpn);
        all_match = all_match && match;
        text += fm.to_text() + "matches analytic mask: " + (match ? "yes" : "NO") + "\n\n";
        std::istringstream rows(fm.to_csv());
        std::string line;
        std::getline(rows, line);
        while (std::getline(rows, line)) {
            csv += std::string(to_string(k)) + "," + line + "\n";
        }
    }
    out << text;
    if (dir) {
        write_file(*dir / "flow.txt", text);
        write_file(*dir / "flow.csv", csv);
    }
    return all_match;
}

int cmd_flow(const Options& opt, std::ostream& out) {
    const ExperimentConfig cfg = resolve_config(opt);
    std::vector<BuilderKind> kinds(std::begin(kAllBuilders), std::end(kAllBuilders));
    if (!opt.builder.empty()) {
        kinds = {cfg.builder};
    }
    const bool ok = run_flow(cfg, kinds, out, opt.out.empty() ? std::nullopt : std::optional<fs::path>(opt.out));
    return ok ? 0 : 1;
}

// ---- gradcheck -------------------------------------------------------------

bool run_gradcheck(std::uint64_t seed, std::ostream& out, const std::optional<fs::path>& dir) {
    std::ostringstream text;
    bool ok = true;
    const GradCheckReport ops = grad_check_ops(seed);
    text << "ops (seed " << seed << ")\n" << ops.to_text();
    ok = ok && ops.passed();
    for (BuilderKind k : kAllBuilders) {
        const GradCheckReport r = grad_check_builder(k, seed);
        text << to_string(k) << " (seed " << seed << ")\n" << r.to_text();
        ok = ok && r.passed();
    }
    text << (ok ? "gradcheck PASS\n" : "gradcheck FAIL\n");
    out << text.str();
    if (dir) {
        write_file(*dir / "gradcheck.txt", text.str());
    }
    return ok;
}

int cmd_gradcheck(const Options& opt, std::ostream& out) {
    const std::uint64_t seed = opt.seed.value_or(0);
    return run_gradcheck(seed, out, opt.out.empty() ? std::nullopt : std::optional<fs::path>(opt.out)) ? 0 : 1;
}

// ---- train / eval ----------------------------------------------------------

TrainState run_training(const ExperimentConfig& cfg, const fs::path& dir, const std::string& resume,
                        std::ostream& out) {
    const ModelConfig model = cfg.model_config();
    TrainState state = resume.empty() ? make_train_state(model, cfg.lr, cfg.seed) : load_train_state(resume);
    if (!resume.empty()) {
        spdlog::info("resuming from {} at step {}", resume, state.step);
    }
    for (int e = 0; e < cfg.epochs; ++e) {
        train_epoch(state, model, cfg.scenes_per_epoch);
        spdlog::info("{} epoch {} step {} running loss {:.6f}", to_string(cfg.builder), e + 1, state.step,
                     state.running_loss);
        save_train_state(dir / ("epoch_" + std::to_string(e + 1)), state);
    }
    save_train_state(dir, state);
    std::ostringstream csv;
    write_loss_csv(csv, state.losses);
    write_file(dir / "loss.csv", csv.str());
    save_config(dir / "config.txt", cfg);

    const std::size_t n = state.losses.size();
    const double initial = window_mean(state.losses, 0, kRunningWindow);
    const double final_loss = window_mean(state.losses, n - std::min<std::size_t>(n, kRunningWindow), kRunningWindow);
    out << to_string(cfg.builder) << ": steps " << state.step << ", initial running loss " << initial
        << ", final running loss " << final_loss << ", ratio " << (initial > 0 ? final_loss / initial : 0.0)
        << "\n";
    return state;
}

int cmd_train(const Options& opt, std::ostream& out) {
    const ExperimentConfig cfg = resolve_config(opt);
    run_training(cfg, train_dir(cfg.out_dir, cfg.builder), opt.checkpoint, out);
    return 0;
}

WeightStore load_model_weights(const ModelConfig& model, const fs::path& checkpoint) {
    WeightStore weights;
    add_model_weights(weights, model);
    const fs::path file = fs::is_directory(checkpoint) ? checkpoint / "weights.mfpw" : checkpoint;
    load_weights_into(file, weights);
    return weights;
}

int cmd_eval(const Options& opt, std::ostream& out) {
    const ExperimentConfig cfg = resolve_config(opt);
    const ModelConfig model = cfg.model_config();
    const fs::path ckpt = opt.checkpoint.empty() ? train_dir(cfg.out_dir, cfg.builder) : fs::path(opt.checkpoint);
    const WeightStore weights = load_model_weights(model, ckpt);
    const SizeScores scores = evaluate_by_size(weights, model, cfg.eval_scenes, cfg.eval_seed);
    out << scores.to_csv();
    write_file(fs::path(cfg.out_dir) / ("eval_" + std::string(to_string(cfg.builder)) + ".csv"), scores.to_csv());
    return 0;
}

// ---- heatmap ---------------------------------------------------------------

void run_heatmaps(const ExperimentConfig& cfg, const std::string& checkpoint, std::ostream& out) {
    ModelConfig model = cfg.model_config();
    const fs::path dir = cfg.out_dir;
    fs::create_directories(dir);
    const BlobScene scene = generate_blob_scene(cfg.seed, model.scene);
    dump_scene(dir / "heatmap_scene", scene);
    for (BuilderKind k : {BuilderKind::fpn, BuilderKind::top_down, BuilderKind::mfpn}) {
        model.kind = k;
        WeightStore weights;
        add_model_weights(weights, model);
        const fs::path ckpt = train_dir(checkpoint.empty() ? dir : fs::path(checkpoint), k) / "weights.mfpw";
        if (fs::exists(ckpt)) {
            load_weights_into(ckpt, weights);
            spdlog::info("heatmap {}: weights from {}", to_string(k), ckpt.string());
        } else {
            init_glorot_uniform(weights, cfg.seed);
            spdlog::info("heatmap {}: no checkpoint, random weights from seed {}", to_string(k), cfg.seed);
        }
        Graph g;
        const FpnConfig fpn = model.fpn_config();
        const BackboneFeatures raw = synth_backbone_forward(g, scene.image, model.backbone, weights);
        const PyramidSet pyr = build_pyramid(g, k, apply_laterals(g, raw, fpn, weights), fpn, weights);
        for (const fs::path& p : export_heatmap(pyr, dir / ("heatmap_" + std::string(to_string(k))))) {
            out << p.string() << "\n";
        }
    }
}

int cmd_heatmap(const Options& opt, std::ostream& out) {
    run_heatmaps(resolve_config(opt), opt.checkpoint, out);
    return 0;
}

// ---- demo ------------------------------------------------------------------

int cmd_demo(const Options& opt, std::ostream& out) {
    ExperimentConfig cfg = resolve_config(opt);
    cfg.fpn = FpnConfig{};
    cfg.fpn.channels = kDemoChannels;
    cfg.epochs = 1;
    cfg.scenes_per_epoch = kDemoTrainScenes;
    cfg.eval_scenes = kDemoEvalScenes;
    const fs::path dir = cfg.out_dir;
    fs::create_directories(dir);
    bool ok = true;

    out << "== paramcount\n";
    Options pc;
    pc.preset = "retinanet-fpn";
    cmd_paramcount(pc, out);
    std::ostringstream params;
    params << count_params(retinanet_fpn_preset(), BuilderKind::fpn).to_text() << "\n"
           << builder_totals(resnet50_pyramid_preset()) << "\n"
           << parameter_reconciliation_report();
    write_file(dir / "paramcount.txt", params.str());

    out << "== flow\n";
    ok = run_flow(cfg, std::vector<BuilderKind>(std::begin(kAllBuilders), std::end(kAllBuilders)), out, dir) && ok;

    out << "== gradcheck\n";
    ok = run_gradcheck(cfg.seed, out, dir) && ok;

    out << "== train and eval\n";
    std::string table = "builder,class,precision,recall,f1\n";
    for (BuilderKind k : kAllBuilders) {
        cfg.builder = k;
        const TrainState state = run_training(cfg, train_dir(dir, k), "", out);
        const SizeScores scores = evaluate_by_size(state.weights, cfg.model_config(), cfg.eval_scenes, cfg.eval_seed);
        std::istringstream rows(scores.to_csv());
        std::string line;
        std::getline(rows, line);
        while (std::getline(rows, line)) {
            table += std::string(to_string(k)) + "," + line + "\n";
        }
    }
    out << table;
    write_file(dir / "eval_comparison.csv", table);

    out << "== heatmap\n";
    run_heatmaps(cfg, dir.string(), out);
    out << (ok ? "demo finished\n" : "demo finished with failed checks\n");
    return ok ? 0 : 1;
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    configure_logging();
    CLI::App app{"Multi-branch feature pyramid experiments", "mfpn"};
    app.require_subcommand(1);
    Options opt;

    const auto common = [&opt](CLI::App* sub) {
        sub->add_option("--config", opt.config, "config file (key: value)")->check(CLI::ExistingFile);
        sub->add_option("--seed", opt.seed, "seed override");
        sub->add_option("--out", opt.out, "output directory");
        sub->add_option("--builder", opt.builder, "fpn, top_down, bottom_up, fusing_splitting or mfpn");
    };
    CLI::App* paramcount = app.add_subcommand("paramcount", "parameter counts and reconciliation report");
    common(paramcount);
    paramcount->add_option("--preset", opt.preset, "named neck configuration")
        ->check(CLI::IsMember({"retinanet-fpn", "resnet50"}));
    CLI::App* flow = app.add_subcommand("flow", "gradient-probed flow matrices");
    common(flow);
    CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
    common(gradcheck);
    CLI::App* train = app.add_subcommand("train", "train the toy detector");
    common(train);
    train->add_option("--checkpoint", opt.checkpoint, "resume from a saved train state directory");
    CLI::App* eval = app.add_subcommand("eval", "per-size-class F1 of a trained model");
    common(eval);
    eval->add_option("--checkpoint", opt.checkpoint, "weights file or train state directory");
    CLI::App* heatmap = app.add_subcommand("heatmap", "activation heatmaps for fpn, top_down and mfpn");
    common(heatmap);
    heatmap->add_option("--checkpoint", opt.checkpoint, "directory holding train_<builder>/ checkpoints");
    CLI::App* demo = app.add_subcommand("demo", "short end-to-end run of every subcommand at C=8");
    common(demo);

    if (!args.empty() && !args.front().starts_with("-") && app.get_subcommand_no_throw(args.front()) == nullptr) {
        err << "error: unknown subcommand '" << args.front() << "'\n\n" << app.help();
        return 2;
    }
    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return 2;
    }

    try {
        if (*paramcount) return cmd_paramcount(opt, out);
        if (*flow) return cmd_flow(opt, out);
        if (*gradcheck) return cmd_gradcheck(opt, out);
        if (*train) return cmd_train(opt, out);
        if (*eval) return cmd_eval(opt, out);
        if (*heatmap) return cmd_heatmap(opt, out);
        if (*demo) return cmd_demo(opt, out);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}

}  // namespace mfpn
