#include "blindloss/cli.hpp"

#include "CLI11.hpp"

#include "blindloss/gradsuite.hpp"
#include "blindloss/svg.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <thread>

namespace blindloss {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kEvalTag = 0xE7A1ULL;

std::string iso_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::tm tm_utc{};
    gmtime_r(&t, &tm_utc);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    return buf;
}

std::string format_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DomainError("cannot open " + path.string() + " for writing");
    out << text;
}

int worker_count(std::size_t tasks) {
    unsigned n = std::thread::hardware_concurrency();
    if (n == 0) n = 1;
    if (const char* env = std::getenv("BLINDLOSS_THREADS")) {
        const long cap = std::strtol(env, nullptr, 10);
        if (cap >= 1) n = std::min<unsigned>(n, static_cast<unsigned>(cap));
    }
    return static_cast<int>(std::min<std::size_t>(n, tasks));
}

struct SceneSets {
    std::vector<Scene> train;
    std::vector<Scene> eval_source;
    std::vector<Scene> eval_shifted;
    std::string corpus_text;
};

SceneSets build_scenes(const TrainConfig& cfg) {
    SceneSets sets;
    std::vector<CorpusEntry> entries = build_corpus(cfg.data);
    sets.corpus_text = corpus_to_text(entries);
    for (const CorpusEntry& e : entries) {
        Scene scene = realize(e, cfg.data);
        if (e.split == "train") {
            sets.train.push_back(std::move(scene));
        } else if (e.style_id == cfg.data.train_style) {
            sets.eval_source.push_back(std::move(scene));
        } else {
            sets.eval_shifted.push_back(std::move(scene));
        }
    }
    return sets;
}

std::vector<NamedParameter> all_parameters(TrainResult& result) {
    std::vector<NamedParameter> params = result.net.parameters();
    for (std::size_t j = 0; j < result.heads.size(); ++j) {
        const std::string prefix = "head." + std::to_string(j) + ".";
        params.push_back({prefix + "w1", result.heads[j].w1});
        params.push_back({prefix + "b1", result.heads[j].b1});
        params.push_back({prefix + "w2", result.heads[j].w2});
        params.push_back({prefix + "b2", result.heads[j].b2});
    }
    for (std::size_t j = 0; j < result.sdcl_heads.size(); ++j) {
        const std::string prefix = "sdcl_head." + std::to_string(j) + ".";
        params.push_back({prefix + "w1", result.sdcl_heads[j].w1});
        params.push_back({prefix + "b1", result.sdcl_heads[j].b1});
        params.push_back({prefix + "w2", result.sdcl_heads[j].w2});
        params.push_back({prefix + "b2", result.sdcl_heads[j].b2});
    }
    return params;
}

// Rebuilds the exact parameter skeleton train() would produce, for loading a
// checkpoint outside of training.
TrainResult skeleton_for_eval(const TrainConfig& cfg) {
    TrainConfig warmless = cfg;
    warmless.optimizer.total_iters = 1;  // structure only; weights come from the checkpoint
    NetworkConfig net_cfg = cfg.model;
    net_cfg.classes = cfg.data.classes;
    net_cfg.height = cfg.data.height;
    net_cfg.width = cfg.data.width;
    net_cfg.seed = 0;

    TrainResult result{SegmentationNet::init(net_cfg), {}, {}, {}};
    if (cfg.losses.use_cwcl || cfg.losses.use_sdcl) {
        for (int j = 0; j < net_cfg.decoder_blocks; ++j) {
            Rng rng(1);
            result.heads.push_back(ProjectionHead::init(
                net_cfg.decoder_widths[static_cast<std::size_t>(j)], cfg.head.embed_dim, rng));
        }
        if (cfg.losses.use_sdcl && cfg.head.mode == HeadMode::Individual) {
            for (int j = 0; j < net_cfg.decoder_blocks; ++j) {
                Rng rng(2);
                result.sdcl_heads.push_back(ProjectionHead::init(
                    net_cfg.decoder_widths[static_cast<std::size_t>(j)], cfg.head.embed_dim, rng));
            }
        }
    }
    return result;
}

void export_scenes(const fs::path& dir, const SceneSets& sets, RunManifest& manifest) {
    fs::create_directories(dir);
    const auto dump_split = [&](const std::vector<Scene>& scenes, const std::string& tag) {
        for (std::size_t i = 0; i < scenes.size(); ++i) {
            char idx[16];
            std::snprintf(idx, sizeof(idx), "%04zu", i);
            const fs::path ppm = dir / (tag + "_" + idx + ".ppm");
            const fs::path pgm = dir / (tag + "_" + idx + ".pgm");
            write_ppm(ppm, scenes[i].image);
            write_pgm(pgm, scenes[i].mask);
            manifest.outputs.push_back(ppm.string());
            manifest.outputs.push_back(pgm.string());
        }
    };
    dump_split(sets.train, "train");
    dump_split(sets.eval_source, "eval_source");
    dump_split(sets.eval_shifted, "eval_shifted");
}

void emit_plots(const fs::path& out_dir, const std::vector<IterationRow>& history,
                const MetricsReport& shifted, RunManifest& manifest) {
    std::vector<SvgSeries> series{{"total", {}}, {"ce", {}}, {"cml", {}},
                                  {"ccl", {}},   {"cwcl", {}}, {"sdcl", {}}};
    for (const IterationRow& row : history) {
        series[0].values.push_back(row.losses.total);
        series[1].values.push_back(row.losses.ce);
        series[2].values.push_back(row.losses.cml);
        series[3].values.push_back(row.losses.ccl);
        series[4].values.push_back(row.losses.cwcl);
        series[5].values.push_back(row.losses.sdcl);
    }
    const fs::path curves = out_dir / "loss_curves.svg";
    svg_line_chart(curves, "training loss", series);
    manifest.outputs.push_back(curves.string());

    std::vector<std::string> labels;
    for (int c = 0; c < shifted.classes; ++c) labels.push_back("c" + std::to_string(c));
    const fs::path bars = out_dir / "per_class_iou.svg";
    svg_bar_chart(bars, "per-class IoU (shifted domain)", labels, shifted.per_class_iou);
    manifest.outputs.push_back(bars.string());
}

TrainConfig resolve_config(const std::string& config_path, const std::string& manifest_path) {
    if (!manifest_path.empty()) {
        RunManifest m = load_manifest(manifest_path);
        return config_from_json(m.config);
    }
    if (!config_path.empty()) return load_config(config_path);
    return default_config();
}

}  // namespace

std::vector<AblationRow> ablation_rows(const std::string& preset, const TrainConfig& base) {
    const auto row = [&](const std::string& name, bool cml, bool ccl, bool cwcl, bool sdcl) {
        AblationRow r{name, base.losses};
        r.losses.use_cml = cml;
        r.losses.use_ccl = ccl;
        r.losses.use_cwcl = cwcl;
        r.losses.use_sdcl = sdcl;
        return r;
    };
    if (preset == "table4")
        return {row("baseline", false, false, false, false),
                row("cml", true, false, false, false),
                row("cml_ccl", true, true, false, false),
                row("cwcl", false, false, true, false),
                row("cwcl_sdcl", false, false, true, true),
                row("cml_ccl_cwcl", true, true, true, false),
                row("full", true, true, true, true)};
    if (preset == "ce") return {row("baseline", false, false, false, false)};
    if (preset == "all") return {row("full", true, true, true, true)};
    if (preset == "custom")
        return {row("custom", base.losses.use_cml, base.losses.use_ccl, base.losses.use_cwcl,
                    base.losses.use_sdcl)};
    throw ContractViolation("ablate: unknown losses preset '" + preset + "'");
}

ExperimentOutput execute_training(const TrainConfig& cfg) {
    SceneSets sets = build_scenes(cfg);
    ExperimentOutput out{train(cfg, sets.train), {}, {}};
    const std::uint64_t eval_seed = derive_seed(cfg.seed, kEvalTag);
    out.source_metrics = evaluate(out.result.net, out.result.heads, sets.eval_source,
                                  cfg.losses.normalize_embeddings, eval_seed);
    out.shifted_metrics = evaluate(out.result.net, out.result.heads, sets.eval_shifted,
                                   cfg.losses.normalize_embeddings, eval_seed);
    return out;
}

std::string metrics_csv(const std::vector<IterationRow>& history) {
    std::string csv = "iteration,lr,ce,cml,ccl,cwcl,sdcl,total\n";
    for (const IterationRow& row : history) {
        csv += std::to_string(row.iteration);
        csv += ',';
        csv += format_g17(row.lr);
        csv += ',';
        csv += format_g17(row.losses.ce);
        csv += ',';
        csv += format_g17(row.losses.cml);
        csv += ',';
        csv += format_g17(row.losses.ccl);
        csv += ',';
        csv += format_g17(row.losses.cwcl);
        csv += ',';
        csv += format_g17(row.losses.sdcl);
        csv += ',';
        csv += format_g17(row.losses.total);
        csv += '\n';
    }
    return csv;
}

Json metrics_to_json(const MetricsReport& report) {
    Json j;
    j["miou"] = report.miou;
    j["pixel_accuracy"] = report.pixel_accuracy;
    j["separation"] = report.separation;
    Json per_class = Json::array();
    for (double v : report.per_class_iou) {
        if (std::isnan(v))
            per_class.push_back(nullptr);
        else
            per_class.push_back(v);
    }
    j["per_class_iou"] = per_class;
    Json confusion = Json::array();
    for (int r = 0; r < report.classes; ++r) {
        Json row = Json::array();
        for (int c = 0; c < report.classes; ++c)
            row.push_back(report.confusion[static_cast<std::size_t>(r) * report.classes + c]);
        confusion.push_back(row);
    }
    j["confusion"] = confusion;
    return j;
}

Json summary_json(const TrainConfig& cfg, const MetricsReport& source, const MetricsReport& shifted,
                  const std::vector<IterationRow>& history) {
    Json j;
    j["seed"] = cfg.seed;
    j["config"] = config_to_json(cfg);
    j["metrics"] = {{"source", metrics_to_json(source)}, {"shifted", metrics_to_json(shifted)}};
    if (!history.empty()) {
        const LossBreakdown& last = history.back().losses;
        j["final_losses"] = {{"ce", last.ce},   {"cml", last.cml},   {"ccl", last.ccl},
                             {"cwcl", last.cwcl}, {"sdcl", last.sdcl}, {"total", last.total}};
    }
    return j;
}

namespace {

int cmd_train(const TrainConfig& cfg, const std::vector<std::string>& args, const fs::path& out_dir,
              bool export_scene_files, bool plots) {
    fs::create_directories(out_dir);
    SceneSets sets = build_scenes(cfg);
    TrainResult result = train(cfg, sets.train);
    const std::uint64_t eval_seed = derive_seed(cfg.seed, kEvalTag);
    MetricsReport source = evaluate(result.net, result.heads, sets.eval_source,
                                    cfg.losses.normalize_embeddings, eval_seed);
    MetricsReport shifted = evaluate(result.net, result.heads, sets.eval_shifted,
                                     cfg.losses.normalize_embeddings, eval_seed);

    RunManifest manifest;
    manifest.command = "train";
    manifest.args = args;
    manifest.config = config_to_json(cfg);
    manifest.corpus = sets.corpus_text;
    manifest.out_dir = out_dir.string();
    manifest.timestamp = iso_timestamp();
    manifest.version = blindloss_version();

    const fs::path csv_path = out_dir / "metrics.csv";
    write_text(csv_path, metrics_csv(result.history));
    manifest.outputs.push_back(csv_path.string());

    const fs::path summary_path = out_dir / "summary.json";
    write_text(summary_path, summary_json(cfg, source, shifted, result.history).dump(2) + "\n");
    manifest.outputs.push_back(summary_path.string());

    const fs::path ckpt_path = out_dir / "net.ckpt";
    std::vector<NamedParameter> params = all_parameters(result);
    save_checkpoint(ckpt_path, params);
    manifest.outputs.push_back(ckpt_path.string());

    const fs::path corpus_path = out_dir / "corpus.txt";
    write_text(corpus_path, sets.corpus_text);
    manifest.outputs.push_back(corpus_path.string());

    if (export_scene_files) export_scenes(out_dir / "scenes", sets, manifest);
    if (plots) emit_plots(out_dir, result.history, shifted, manifest);

    write_manifest(out_dir / "manifest.json", manifest);
    std::printf("train: shifted mIoU %.4f (source %.4f), outputs in %s\n", shifted.miou, source.miou,
                out_dir.string().c_str());
    return 0;
}

int cmd_eval(const TrainConfig& cfg, const std::vector<std::string>& args, const fs::path& ckpt,
             const fs::path& out_dir) {
    fs::create_directories(out_dir);
    SceneSets sets = build_scenes(cfg);
    TrainResult skeleton = skeleton_for_eval(cfg);
    std::vector<NamedParameter> params = all_parameters(skeleton);
    load_checkpoint(ckpt, params);

    const std::uint64_t eval_seed = derive_seed(cfg.seed, kEvalTag);
    MetricsReport source = evaluate(skeleton.net, skeleton.heads, sets.eval_source,
                                    cfg.losses.normalize_embeddings, eval_seed);
    MetricsReport shifted = evaluate(skeleton.net, skeleton.heads, sets.eval_shifted,
                                     cfg.losses.normalize_embeddings, eval_seed);

    RunManifest manifest;
    manifest.command = "eval";
    manifest.args = args;
    manifest.config = config_to_json(cfg);
    manifest.corpus = sets.corpus_text;
    manifest.out_dir = out_dir.string();
    manifest.timestamp = iso_timestamp();
    manifest.version = blindloss_version();

    const fs::path summary_path = out_dir / "summary.json";
    write_text(summary_path, summary_json(cfg, source, shifted, {}).dump(2) + "\n");
    manifest.outputs.push_back(summary_path.string());
    write_manifest(out_dir / "manifest.json", manifest);
    std::printf("eval: shifted mIoU %.4f (source %.4f)\n", shifted.miou, source.miou);
    return 0;
}

int cmd_gen_data(const TrainConfig& cfg, const std::vector<std::string>& args,
                 const fs::path& out_dir, bool export_scene_files) {
    fs::create_directories(out_dir);
    SceneSets sets = build_scenes(cfg);

    RunManifest manifest;
    manifest.command = "gen-data";
    manifest.args = args;
    manifest.config = config_to_json(cfg);
    manifest.corpus = sets.corpus_text;
    manifest.out_dir = out_dir.string();
    manifest.timestamp = iso_timestamp();
    manifest.version = blindloss_version();

    const fs::path corpus_path = out_dir / "corpus.txt";
    write_text(corpus_path, sets.corpus_text);
    manifest.outputs.push_back(corpus_path.string());
    if (export_scene_files) export_scenes(out_dir / "scenes", sets, manifest);
    write_manifest(out_dir / "manifest.json", manifest);
    std::printf("gen-data: %zu train / %zu eval scenes listed in %s\n", sets.train.size(),
                sets.eval_source.size() + sets.eval_shifted.size(), corpus_path.string().c_str());
    return 0;
}

int cmd_ablate(const TrainConfig& base, const std::vector<std::string>& args,
               const std::string& preset, const std::vector<std::uint64_t>& seeds,
               const fs::path& out_dir) {
    fs::create_directories(out_dir);
    const std::vector<AblationRow> rows = ablation_rows(preset, base);

    struct Task {
        std::size_t row;
        std::uint64_t seed;
    };
    std::vector<Task> tasks;
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::uint64_t s : seeds) tasks.push_back({r, s});

    struct Outcome {
        double source_miou = 0, shifted_miou = 0, shifted_acc = 0, separation = 0;
    };
    std::vector<Outcome> outcomes(tasks.size());

    std::atomic<std::size_t> next{0};
    const int workers = worker_count(tasks.size());
    auto run_tasks = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= tasks.size()) return;
            TrainConfig cfg = base;
            cfg.losses = rows[tasks[i].row].losses;
            cfg.seed = tasks[i].seed;
            ExperimentOutput out = execute_training(cfg);
            outcomes[i] = {out.source_metrics.miou, out.shifted_metrics.miou,
                           out.shifted_metrics.pixel_accuracy, out.shifted_metrics.separation};
        }
    };
    std::vector<std::thread> pool;
    for (int w = 1; w < workers; ++w) pool.emplace_back(run_tasks);
    run_tasks();
    for (std::thread& t : pool) t.join();

    std::string csv = "row,seed,source_miou,shifted_miou,shifted_accuracy,shifted_separation\n";
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        csv += rows[tasks[i].row].name;
        csv += ',';
        csv += std::to_string(tasks[i].seed);
        csv += ',';
        csv += format_g17(outcomes[i].source_miou);
        csv += ',';
        csv += format_g17(outcomes[i].shifted_miou);
        csv += ',';
        csv += format_g17(outcomes[i].shifted_acc);
        csv += ',';
        csv += format_g17(outcomes[i].separation);
        csv += '\n';
    }

    std::string table = "row            mean_source_miou  mean_shifted_miou\n";
    std::printf("%s", table.c_str());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        double src = 0, shf = 0;
        int n = 0;
        for (std::size_t i = 0; i < tasks.size(); ++i) {
            if (tasks[i].row != r) continue;
            src += outcomes[i].source_miou;
            shf += outcomes[i].shifted_miou;
            ++n;
        }
        char line[96];
        std::snprintf(line, sizeof(line), "%-14s %16.4f %18.4f\n", rows[r].name.c_str(), src / n,
                      shf / n);
        table += line;
        std::printf("%s", line);
    }

    RunManifest manifest;
    manifest.command = "ablate";
    manifest.args = args;
    manifest.config = config_to_json(base);
    manifest.out_dir = out_dir.string();
    manifest.timestamp = iso_timestamp();
    manifest.version = blindloss_version();

    const fs::path csv_path = out_dir / "ablate.csv";
    write_text(csv_path, csv);
    manifest.outputs.push_back(csv_path.string());
    const fs::path table_path = out_dir / "table.txt";
    write_text(table_path, table);
    manifest.outputs.push_back(table_path.string());
    write_manifest(out_dir / "manifest.json", manifest);
    return 0;
}

int cmd_gradcheck(int instances) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<GradSuiteResult> results = run_gradient_suite(instances, 20240901);
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    bool ok = true;
    for (const GradSuiteResult& r : results) {
        const bool pass = r.max_error <= 1e-4;
        ok = ok && pass;
        std::printf("%-14s max relative error %.3e over %d instances  [%s]\n", r.name.c_str(),
                    r.max_error, r.instances, pass ? "ok" : "FAIL");
    }
    std::printf("gradcheck finished in %.1f s\n", elapsed);
    return ok ? 0 : 1;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
    CLI::App app{"style-blind segmentation losses on a toy substrate"};
    app.require_subcommand(1);

    std::string config_path, manifest_path, out_dir, losses_preset = "table4", seeds_arg, ckpt_path;
    std::uint64_t seed_override = 0;
    bool have_seed = false;
    int iters_override = 0;
    bool export_scene_files = false, plots = false;
    int gradcheck_instances = 100;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "JSON config file");
        cmd->add_option("--manifest", manifest_path, "reproduce a previous run from its manifest");
        cmd->add_option("--out", out_dir, "output directory");
        cmd->add_option("--seed", seed_override, "override config seed")
            ->each([&](const std::string&) { have_seed = true; });
        cmd->add_option("--iters", iters_override, "override total iterations");
    };

    CLI::App* train_cmd = app.add_subcommand("train", "train on the synthetic corpus");
    add_common(train_cmd);
    train_cmd->add_flag("--export-scenes", export_scene_files, "write PPM/PGM scene dumps");
    train_cmd->add_flag("--plots", plots, "emit SVG loss curves and IoU bars");

    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
    add_common(eval_cmd);
    eval_cmd->add_option("--ckpt", ckpt_path, "weight checkpoint")->required();

    CLI::App* gen_cmd = app.add_subcommand("gen-data", "materialize corpus manifests");
    add_common(gen_cmd);
    gen_cmd->add_flag("--export-scenes", export_scene_files, "write PPM/PGM scene dumps");

    CLI::App* ablate_cmd = app.add_subcommand("ablate", "loss ablation sweeps over shared seeds");
    add_common(ablate_cmd);
    ablate_cmd->add_option("--losses", losses_preset, "all | ce | table4 | custom");
    ablate_cmd->add_option("--seeds", seeds_arg, "comma-separated seed list");

    CLI::App* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient suite");
    grad_cmd->add_option("--instances", gradcheck_instances, "random instances per loss");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (grad_cmd->parsed()) return cmd_gradcheck(gradcheck_instances);

        TrainConfig cfg = resolve_config(config_path, manifest_path);
        if (have_seed) cfg.seed = seed_override;
        if (iters_override > 0) cfg.optimizer.total_iters = iters_override;
        validate_config(cfg);

        if (out_dir.empty()) {
            if (train_cmd->parsed()) out_dir = "out/train";
            if (eval_cmd->parsed()) out_dir = "out/eval";
            if (gen_cmd->parsed()) out_dir = "out/data";
            if (ablate_cmd->parsed()) out_dir = "out/ablate";
        }

        if (train_cmd->parsed()) return cmd_train(cfg, args, out_dir, export_scene_files, plots);
        if (eval_cmd->parsed()) return cmd_eval(cfg, args, ckpt_path, out_dir);
        if (gen_cmd->parsed()) return cmd_gen_data(cfg, args, out_dir, export_scene_files);
        if (ablate_cmd->parsed()) {
            std::vector<std::uint64_t> seeds = cfg.experiment_seeds;
            if (!seeds_arg.empty()) {
                seeds.clear();
                std::stringstream ss(seeds_arg);
                std::string item;
                while (std::getline(ss, item, ',')) seeds.push_back(std::stoull(item));
                if (seeds.empty()) throw ContractViolation("ablate: empty --seeds list");
            }
            return cmd_ablate(cfg, args, losses_preset, seeds, out_dir);
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 2;
}

}  // namespace blindloss
