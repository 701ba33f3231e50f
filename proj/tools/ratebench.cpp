// ratebench: train, sweep and evaluate rate-controlled audio autoencoders.

#include "ratebench/config.hpp"
#include "ratebench/diffusion.hpp"
#include "ratebench/errors.hpp"
#include "ratebench/rd_harness.hpp"
#include "ratebench/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ratebench;

namespace {

struct CommonOptions {
    std::string config;
    std::vector<std::string> overrides;
    std::string output_root;
};

void add_common(CLI::App * cmd, CommonOptions & o) {
    cmd->add_option("--config", o.config, "JSON config file (defaults apply to missing keys)");
    cmd->add_option("--set", o.overrides, "Override a config key, e.g. --set train.steps=100")->take_all();
    cmd->add_option("--output-root", o.output_root, "Output root (else RATEBENCH_OUTPUT_ROOT, else config)");
}

RunConfig load_config(const CommonOptions & o) {
    RunConfig cfg = o.config.empty() ? run_config_from_json(json::object()) : parse_config(o.config);
    cfg = apply_overrides(cfg, o.overrides);
    if (!o.output_root.empty()) {
        cfg.output_root = o.output_root;
    } else if (const char * env = std::getenv("RATEBENCH_OUTPUT_ROOT"); env != nullptr && *env != '\0') {
        cfg.output_root = env;
    }
    return cfg;
}

void write_json(const fs::path & path, const json & j) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path);
    if (!f) throw std::invalid_argument("cannot write " + path.string());
    f << j.dump(2) << '\n';
}

void write_text(const fs::path & path, const std::string & text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path);
    if (!f) throw std::invalid_argument("cannot write " + path.string());
    f << text;
}

int report_error(const std::string & code, const std::string & message) {
    std::cerr << json{{"error", {{"code", code}, {"message", message}}}}.dump() << std::endl;
    return 2;
}

}  // namespace

int main(int argc, char ** argv) {
    CLI::App app{"Rate-controlled audio autoencoder benchmark"};
    app.require_subcommand(1);

    // train
    CommonOptions train_opts;
    std::string train_out;
    bool quiet = false;
    auto * train = app.add_subcommand("train", "Train one model");
    add_common(train, train_opts);
    train->add_option("--out", train_out, "Run directory (default <output root>/train/seed<seed>)");
    train->add_flag("--quiet", quiet, "Do not echo metrics rows");

    // sweep
    CommonOptions sweep_opts;
    std::string sweep_out;
    std::optional<std::size_t> max_new;
    auto * sweep = app.add_subcommand("sweep", "Train and evaluate every point of a sweep (resumable)");
    add_common(sweep, sweep_opts);
    sweep->add_option("--out", sweep_out, "Sweep directory (default <output root>/<sweep.output_dir>)");
    sweep->add_option("--max-new-points", max_new, "Stop after training this many new points");

    // curve
    std::string curve_in, curve_out, curve_plot, curve_format = "csv";
    auto * curve = app.add_subcommand("curve", "Emit the rate-distortion table and plot from a sweep directory");
    curve->add_option("--in", curve_in, "Sweep directory")->required();
    curve->add_option("--out", curve_out, "Table path")->required();
    curve->add_option("--plot", curve_plot, "SVG plot path")->required();
    curve->add_option("--format", curve_format, "csv or json")->check(CLI::IsMember({"csv", "json"}));

    // ablation
    std::string abl_in, abl_out, abl_csv, abl_family;
    std::optional<double> abl_target;
    auto * ablation = app.add_subcommand("ablation", "Variant comparison table at one rate target");
    ablation->add_option("--in", abl_in, "Sweep directory")->required();
    ablation->add_option("--out", abl_out, "Markdown report path (default <in>/ablation.md)");
    ablation->add_option("--csv", abl_csv, "CSV report path (default <in>/ablation.csv)");
    ablation->add_option("--target-kl", abl_target, "Only use points with this target KL");
    ablation->add_option("--family", abl_family, "Only use points of this family");

    // probe
    CommonOptions probe_opts;
    std::string probe_vae, probe_out;
    auto * probe = app.add_subcommand("probe", "Latent diffusion predictability probe on a frozen VAE");
    add_common(probe, probe_opts);
    probe->add_option("--vae", probe_vae, "VAE checkpoint")->required();
    probe->add_option("--out", probe_out, "Report path (default next to the checkpoint)");

    // eval
    std::string eval_ckpt, eval_out;
    auto * eval = app.add_subcommand("eval", "Measure KL, bitrate and mel distance of a checkpoint");
    eval->add_option("--checkpoint", eval_ckpt, "Checkpoint path")->required();
    eval->add_option("--out", eval_out, "Optional JSON output path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp & e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp & e) {
        return app.exit(e);
    } catch (const CLI::ParseError & e) {
        return report_error("invalid-argument", e.what());
    }

    try {
        if (*train) {
            const RunConfig cfg = load_config(train_opts);
            const fs::path dir = train_out.empty() ? fs::path(cfg.output_root) / "train" /
                                                         ("seed" + std::to_string(cfg.train.seed))
                                                   : fs::path(train_out);
            fs::create_directories(dir);
            write_json(dir / "config.json", to_json(cfg.train));
            fs::remove(dir / "metrics.jsonl");
            Trainer trainer(cfg.train);
            std::ofstream metrics(dir / "metrics.jsonl");
            trainer.run([&](const MetricsRow & row) {
                const std::string line = row.to_json().dump();
                metrics << line << '\n' << std::flush;
                if (!quiet) std::cerr << line << '\n';
            });
            trainer.save(dir / "checkpoint.rbck");
            const EvalResult e = trainer.evaluate();
            const json out = {{"run_dir", dir.string()},
                              {"steps", trainer.step()},
                              {"measured_kl", e.kl_per_frame},
                              {"measured_bitrate_bps", e.bitrate_bps},
                              {"mel_distance", e.mel_distance},
                              {"per_dim_kl", e.per_dim_kl}};
            write_json(dir / "eval.json", out);
            std::cout << out.dump() << std::endl;
        } else if (*sweep) {
            const RunConfig cfg = load_config(sweep_opts);
            const fs::path dir = sweep_out.empty() ? fs::path(cfg.output_root) / cfg.sweep.output_dir : fs::path(sweep_out);
            SweepOptions so;
            so.max_new_points = max_new;
            so.log = [](const std::string & msg) { std::cerr << msg << '\n'; };
            const SweepResult r = run_sweep(cfg, dir, so);
            json failures = json::array();
            for (const auto & f : r.failures) {
                failures.push_back({{"model_id", f.model_id}, {"code", f.code}, {"message", f.message}});
            }
            std::cout << json{{"sweep_dir", dir.string()},
                              {"points", r.points.size()},
                              {"trained", r.trained},
                              {"skipped", r.skipped},
                              {"complete", r.complete},
                              {"failures", failures}}
                             .dump()
                      << std::endl;
            if (!r.failures.empty() && r.points.empty()) return 1;
        } else if (*curve) {
            const auto points = collect_points(curve_in);
            emit_curve(points, curve_format == "json" ? CurveFormat::json : CurveFormat::csv, curve_out, curve_plot);
            std::cout << json{{"points", points.size()}, {"table", curve_out}, {"plot", curve_plot}}.dump()
                      << std::endl;
        } else if (*ablation) {
            std::vector<RDPoint> points;
            for (auto & p : collect_points(abl_in)) {
                if (abl_target && p.target_kl != *abl_target) continue;
                if (!abl_family.empty() && p.family != abl_family) continue;
                points.push_back(std::move(p));
            }
            const AblationReport rep = ablation_report(points);
            const fs::path md = abl_out.empty() ? fs::path(abl_in) / "ablation.md" : fs::path(abl_out);
            const fs::path csv = abl_csv.empty() ? fs::path(abl_in) / "ablation.csv" : fs::path(abl_csv);
            write_text(md, rep.markdown);
            write_text(csv, rep.csv);
            std::cout << rep.markdown;
        } else if (*probe) {
            RunConfig cfg = load_config(probe_opts);
            const ProbeReport rep = predictability_score(probe_vae, cfg.diffusion);
            const fs::path vae(probe_vae);
            const fs::path out = probe_out.empty() ? vae.parent_path() / "probe.json" : fs::path(probe_out);
            write_json(out, rep.to_json());
            // Attach the score to the sweep point when the checkpoint belongs to one.
            const fs::path result = vae.parent_path() / "result.json";
            if (fs::exists(result)) {
                std::ifstream f(result);
                RDPoint p = RDPoint::from_json(json::parse(f));
                p.predictability = rep.predictability_score;
                write_json(result, p.to_json());
            }
            std::cout << rep.to_json().dump() << std::endl;
        } else if (*eval) {
            LoadedModel m = load_model(eval_ckpt);
            const Dataset ds = load_dataset(m.config.data, m.config.model.sample_rate_hz, m.config.model.hop);
            const Split split = split_dataset(ds.items.size(), m.config.data.eval_fraction, m.config.data.seed);
            std::vector<const std::vector<float> *> items;
            for (std::size_t i : split.eval) items.push_back(&ds.items[i].samples);
            const EvalResult e = evaluate_codec(*m.codec, items, ds.sample_rate_hz);
            const json out = {{"checkpoint", eval_ckpt},
                              {"step", m.step},
                              {"measured_kl", e.kl_per_frame},
                              {"measured_bitrate_bps", e.bitrate_bps},
                              {"mel_distance", e.mel_distance},
                              {"per_dim_kl", e.per_dim_kl},
                              {"items", e.items}};
            if (!eval_out.empty()) write_json(eval_out, out);
            std::cout << out.dump() << std::endl;
        }
    } catch (const std::exception & e) {
        return report_error(error_code(e), e.what());
    }
    return 0;
}
