// Acceptance run: prints one PASS/FAIL line per criterion and exits nonzero if any fail.

#include "ratebench/config.hpp"
#include "ratebench/diffusion.hpp"
#include "ratebench/errors.hpp"
#include "ratebench/rate_core.hpp"
#include "ratebench/rd_harness.hpp"
#include "ratebench/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ratebench;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Context {
    fs::path work;
    std::string ratebench;
    // Filled by the convergence ladder and reused by later criteria.
    std::vector<RDPoint> ladder;
    std::vector<RDPoint> low_lambda;
    std::string ladder_error;
};

constexpr double kFrameRate = 40.0;
const std::vector<double> kTargets{10, 40, 160};
const std::vector<std::uint64_t> kSeeds{0, 1, 2};
constexpr int kLadderSteps = 5000;

std::string fmt(double v, int prec = 4) {
    std::ostringstream s;
    s.precision(prec);
    s << v;
    return s.str();
}

double median(std::vector<double> v) {
    if (v.empty()) throw std::invalid_argument("median of nothing");
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string read_file(const fs::path & p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw std::invalid_argument("cannot read " + p.string());
    std::ostringstream s;
    s << f.rdbuf();
    return s.str();
}

std::string quote(const std::string & s) { return "'" + s + "'"; }

/// Runs the CLI; stdout and stderr go to files under `log_stem`. Returns the exit status.
int run_cli(const Context & ctx, const std::string & args, const fs::path & log_stem) {
    const std::string cmd = quote(ctx.ratebench) + " " + args + " > " + quote(log_stem.string() + ".out") + " 2> " +
                            quote(log_stem.string() + ".err");
    const int rc = std::system(cmd.c_str());
    return rc == -1 ? -1 : WEXITSTATUS(rc);
}

RunConfig ladder_config(const std::vector<double> & targets, double lambda) {
    RunConfig cfg = run_config_from_json(json::object());
    cfg.train.steps = kLadderSteps;
    cfg.sweep.families = {"gaussian"};
    cfg.sweep.target_kls = targets;
    cfg.sweep.lambda_weights = {lambda};
    cfg.sweep.seeds = kSeeds;
    return cfg;
}

std::vector<RDPoint> run_ladder(const Context & ctx, const RunConfig & cfg) {
    SweepOptions so;
    so.log = [](const std::string & m) { std::cerr << "  [sweep] " << m << std::endl; };
    const SweepResult r = run_sweep(cfg, ctx.work / "ladder", so);
    if (!r.failures.empty()) {
        throw std::runtime_error("ladder point " + r.failures.front().model_id + " failed: " + r.failures.front().message);
    }
    return r.points;
}

const RDPoint & find_point(const std::vector<RDPoint> & pts, double target, std::uint64_t seed) {
    for (const auto & p : pts) {
        if (p.target_kl == target && p.seed == seed) return p;
    }
    throw std::runtime_error("missing ladder point target " + fmt(target) + " seed " + std::to_string(seed));
}

void require_ladder(const Context & ctx) {
    if (ctx.ladder.empty()) throw std::runtime_error("convergence ladder unavailable: " + ctx.ladder_error);
}

// 1
Outcome golden_rate(Context &) {
    const std::vector<std::pair<double, double>> pairs{
        {132.63, 7.65}, {200.39, 11.56}, {341.26, 19.69}, {642.35, 37.06}, {1284.21, 74.10}};
    double worst = 0.0;
    for (const auto & [kl, kbps] : pairs) {
        worst = std::max(worst, std::abs(kl_to_bitrate(kl, kFrameRate) / 1000.0 - kbps) / kbps);
    }
    return {worst <= 1e-3, "max relative error " + fmt(worst)};
}

// 2
Outcome kl_oracle(Context &) {
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<int> dim(1, 8);
    std::normal_distribution<double> mu(0.0, 1.5);
    std::uniform_real_distribution<double> lv(-3.0, 2.0);
    int misses = 0, beyond2 = 0;
    double worst_z = 0.0, sum_z = 0.0, sum_z2 = 0.0;
    for (int i = 0; i < 100; ++i) {
        const std::size_t d = static_cast<std::size_t>(dim(rng));
        GaussianPosterior post(1, d);
        for (std::size_t j = 0; j < d; ++j) {
            post.mu[j] = mu(rng);
            post.log_var[j] = lv(rng);
        }
        const double exact = gaussian_kl(post)[0];
        const MonteCarloEstimate mc = kl_mc_oracle(post, 1'000'000, 1000 + i);
        const double signed_z = (mc.estimate - exact) / mc.std_error, z = std::abs(signed_z);
        worst_z = std::max(worst_z, z);
        sum_z += signed_z;
        sum_z2 += signed_z * signed_z;
        if (z > 2.0) ++beyond2;
        if (z > 3.0) ++misses;
    }
    // For an unbiased estimator z ~ N(0,1): mean ~0 +- 0.1, mean square ~1 +- 0.14, about 4.6 beyond 2 SE,
    // and P(at least one of 100 beyond 3 SE) ~ 0.24.
    return {misses == 0, "100 posteriors, worst |diff|/SE " + fmt(worst_z, 3) + ", outside 3 SE: " +
                             std::to_string(misses) + "; z mean " + fmt(sum_z / 100, 3) + ", mean z^2 " +
                             fmt(sum_z2 / 100, 3) + ", beyond 2 SE: " + std::to_string(beyond2)};
}

// 3
Outcome kl_gradients(Context &) {
    std::mt19937_64 rng(77);
    std::uniform_int_distribution<int> dim(1, 8), frames(1, 4);
    std::normal_distribution<double> mu(0.0, 1.5);
    std::uniform_real_distribution<double> lv(-3.0, 2.0);
    const double h = 1e-5;
    double worst = 0.0;
    auto total = [](const GaussianPosterior & p) {
        double s = 0.0;
        for (double v : gaussian_kl(p)) s += v;
        return s;
    };
    for (int i = 0; i < 50; ++i) {
        GaussianPosterior post(frames(rng), dim(rng));
        for (auto & v : post.mu) v = mu(rng);
        for (auto & v : post.log_var) v = lv(rng);
        const GaussianPosterior g = gaussian_kl_gradient(post);
        for (std::size_t k = 0; k < post.mu.size(); ++k) {
            for (int which = 0; which < 2; ++which) {
                GaussianPosterior up = post, dn = post;
                (which == 0 ? up.mu : up.log_var)[k] += h;
                (which == 0 ? dn.mu : dn.log_var)[k] -= h;
                const double fd = (total(up) - total(dn)) / (2 * h);
                const double an = (which == 0 ? g.mu : g.log_var)[k];
                worst = std::max(worst, std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-3}));
            }
        }
    }
    return {worst < 1e-4, "50 inputs, max relative error " + fmt(worst, 3)};
}

// 4
Outcome target_convergence(Context & ctx) {
    try {
        ctx.ladder = run_ladder(ctx, ladder_config(kTargets, 10.0));
    } catch (const std::exception & e) {
        ctx.ladder_error = e.what();
        throw;
    }
    bool ok = true;
    std::string detail;
    for (double t : kTargets) {
        detail += "target " + fmt(t) + ":";
        for (auto s : kSeeds) {
            const double kl = find_point(ctx.ladder, t, s).measured_kl;
            ok = ok && std::abs(kl - t) <= 0.15 * t;
            detail += " " + fmt(kl);
        }
        detail += "; ";
    }
    return {ok, detail + "tolerance 15%"};
}

// 5
Outcome rd_trend(Context & ctx) {
    require_ladder(ctx);
    std::vector<std::pair<double, double>> rows;  // median bitrate, median mel
    for (double t : kTargets) {
        std::vector<double> bps, mel;
        for (auto s : kSeeds) {
            bps.push_back(find_point(ctx.ladder, t, s).measured_bitrate_bps);
            mel.push_back(find_point(ctx.ladder, t, s).mel_distance);
        }
        rows.emplace_back(median(bps), median(mel));
    }
    std::sort(rows.begin(), rows.end());
    bool ok = true;
    std::string detail;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (i > 0) ok = ok && rows[i].second <= rows[i - 1].second;
        detail += fmt(rows[i].first, 5) + " bps -> mel " + fmt(rows[i].second) + "; ";
    }
    return {ok, detail + "median over 3 seeds"};
}

// 6
Outcome lambda_adherence(Context & ctx) {
    require_ladder(ctx);
    const double target = 40.0;
    ctx.low_lambda = run_ladder(ctx, ladder_config({target}, 1.0));
    std::vector<double> err1, err10;
    for (auto s : kSeeds) {
        err10.push_back(std::abs(find_point(ctx.ladder, target, s).measured_kl - target));
        err1.push_back(std::abs(find_point(ctx.low_lambda, target, s).measured_kl - target));
    }
    const double m10 = median(err10), m1 = median(err1);
    return {m10 <= m1, "target 40: median |KL-target| lambda=10 " + fmt(m10) + ", lambda=1 " + fmt(m1)};
}

// 7
Outcome free_bits_floor(Context & ctx) {
    TrainConfig cfg = train_config_from_json(json::object());
    cfg.bottleneck.rate_loss = RateLossKind::free_bits;
    cfg.bottleneck.free_bits_lambda = 0.5;
    cfg.steps = kLadderSteps;
    cfg.seed = 5;
    Trainer t(cfg);
    t.run(ctx.work / "free_bits_metrics.jsonl");
    t.save(ctx.work / "free_bits.rbck");
    const auto & ds = t.dataset();
    auto per_dim = [&](const std::vector<std::size_t> & idx) {
        std::vector<const std::vector<float> *> items;
        for (std::size_t i : idx) items.push_back(&ds.items[i].samples);
        return evaluate_codec(t.codec(), items, ds.sample_rate_hz).per_dim_kl;
    };
    std::vector<std::size_t> all(ds.items.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    // Every item has the same length, so the whole-corpus mean is the item mean.
    const auto whole = per_dim(all), train = per_dim(t.split().train), held = per_dim(t.split().eval);
    auto lo = [](const std::vector<double> & v) { return *std::min_element(v.begin(), v.end()); };
    auto hi = [](const std::vector<double> & v) { return *std::max_element(v.begin(), v.end()); };
    const auto below = std::count_if(whole.begin(), whole.end(), [](double v) { return v < 0.45; });
    return {below == 0, std::to_string(whole.size()) + " dims over the whole corpus: min " + fmt(lo(whole)) +
                            " max " + fmt(hi(whole)) + ", " + std::to_string(below) +
                            " below 0.45 (train split min " + fmt(lo(train)) + ", eval split min " + fmt(lo(held)) +
                            ")"};
}

// 8
Outcome vq_rate(Context & ctx) {
    require_ladder(ctx);
    RunConfig cfg = run_config_from_json(json::object());
    cfg.train.steps = 300;
    cfg.sweep.families = {"vq"};
    cfg.sweep.vq_points = {{16, 2}};
    cfg.sweep.seeds = {0};
    const SweepResult r = run_sweep(cfg, ctx.work / "vq", {});
    if (r.points.size() != 1) throw std::runtime_error("vq sweep produced no point");
    const RDPoint & vq = r.points.front();
    const double expected = kFrameRate * 2 * std::log2(16.0);
    const bool exact = vq.measured_bitrate_bps == expected && vq_bitrate(16, 2, kFrameRate) == expected;

    std::vector<RDPoint> all = ctx.ladder;
    all.push_back(vq);
    const fs::path table = ctx.work / "unified.csv", plot = ctx.work / "unified.svg";
    emit_curve(all, CurveFormat::csv, table, plot);
    const json side = json::parse(read_file(plot.string() + ".json"));
    std::set<std::string> families;
    bool listed = false;
    for (const auto & s : side.at("series")) {
        families.insert(s.at("family").get<std::string>());
        for (const auto & id : s.at("points")) listed = listed || id.get<std::string>() == vq.model_id;
    }
    const auto parsed = parse_curve_csv(read_file(table));
    const bool shared = families == std::set<std::string>{"gaussian", "vq"} && listed &&
                        side.at("x_axis").at("quantity") == "measured_bitrate_bps" &&
                        parsed.size() == all.size();
    return {exact && shared, "bitrate " + fmt(vq.measured_bitrate_bps, 10) + " vs S*n*log2K " + fmt(expected, 10) +
                                 "; plotted series: " + std::to_string(families.size()) + " families, " +
                                 std::to_string(parsed.size()) + " rows on one bitrate axis"};
}

// 9
Outcome schedule_identities(Context &) {
    double worst_vp = 0.0;
    for (double shift : {0.0, std::log(0.5)}) {
        const NoiseSchedule s(shift);
        for (int i = 1; i <= 10000; ++i) {
            const double t = static_cast<double>(i) / 10001.0;
            worst_vp = std::max(worst_vp, std::abs(s.alpha(t) * s.alpha(t) + s.sigma(t) * s.sigma(t) - 1.0));
        }
    }
    const NoiseSchedule shifted(std::log(0.5));
    const double da = std::abs(shifted.alpha(0.5) - 0.44721), ds = std::abs(shifted.sigma(0.5) - 0.89443);

    std::mt19937_64 rng(9);
    std::normal_distribution<float> n;
    std::vector<float> z(4096), eps(4096);
    for (auto & v : z) v = n(rng);
    for (auto & v : eps) v = n(rng);
    double worst_rt = 0.0;
    for (double t : {0.01, 0.25, 0.5, 0.75, 0.99}) {
        const auto zt = noised_latent(z, eps, t, shifted);
        const auto rec = recover_from_v(zt, v_target(z, eps, t, shifted), t, shifted);
        for (std::size_t i = 0; i < z.size(); ++i) {
            worst_rt = std::max({worst_rt, static_cast<double>(std::abs(rec.z[i] - z[i])),
                                 static_cast<double>(std::abs(rec.eps[i] - eps[i]))});
        }
    }
    const bool ok = worst_vp <= 1e-9 && da <= 1e-5 && ds <= 1e-5 && worst_rt <= 1e-6;
    return {ok, "alpha^2+sigma^2-1 max " + fmt(worst_vp, 3) + "; t=0.5 alpha " + fmt(shifted.alpha(0.5), 6) +
                    " sigma " + fmt(shifted.sigma(0.5), 6) + "; v round trip max " + fmt(worst_rt, 3)};
}

// 10
Outcome probe_smoke(Context & ctx) {
    require_ladder(ctx);
    const fs::path ckpt =
        point_dir(ctx.work / "ladder", find_point(ctx.ladder, 40.0, 0).model_id) / "checkpoint.rbck";
    const fs::path report = ctx.work / "probe.json";
    const int rc = run_cli(ctx, "probe --vae " + quote(ckpt.string()) + " --set diffusion.steps=2000 --out " +
                                    quote(report.string()),
                           ctx.work / "probe");
    if (rc != 0) throw std::runtime_error("probe exited " + std::to_string(rc) + ": " + read_file(ctx.work / "probe.err"));
    const json j = json::parse(read_file(report));
    const double init = j.at("init_loss"), analytic = j.at("analytic_init_loss"), fin = j.at("final_train_loss");
    const double init_err = std::abs(init - analytic) / analytic, reduction = 1.0 - fin / init;
    const bool ok = init_err <= 0.05 && reduction >= 0.30 && j.contains("predictability_score") &&
                    j.contains("measured_bitrate");
    return {ok, "init v-MSE " + fmt(init) + " vs analytic " + fmt(analytic) + " (" + fmt(100 * init_err, 3) +
                    "%); reduction " + fmt(100 * reduction, 3) + "%; score " +
                    fmt(j.at("predictability_score").get<double>()) + "; report " + report.filename().string()};
}

// 11
Outcome determinism(Context & ctx) {
    TrainConfig cfg = train_config_from_json(json::object());
    cfg.steps = 200;
    cfg.log_every = 10;
    cfg.eval_every = 100;
    cfg.seed = 11;
    auto stream = [&] {
        std::vector<std::string> rows;
        Trainer t(cfg);
        t.run([&](const MetricsRow & r) { rows.push_back(r.to_json().dump()); });
        return rows;
    };
    const auto a = stream(), b = stream();
    const bool same_stream = a == b && !a.empty();

    RunConfig sc = run_config_from_json(json::object());
    sc.train.steps = 100;
    sc.train.log_every = 10;
    sc.sweep.target_kls = {10, 40, 160};
    sc.sweep.lambda_weights = {10};
    const fs::path whole = ctx.work / "det_whole", parts = ctx.work / "det_parts";
    const SweepResult w = run_sweep(sc, whole, {});
    SweepOptions once;
    once.max_new_points = 1;
    const SweepResult first = run_sweep(sc, parts, once);
    // Simulate a crash between checkpoint and result for the second point.
    const SweepResult second = run_sweep(sc, parts, once);
    fs::remove(point_dir(parts, second.points.back().model_id) / "result.json");
    const SweepResult rest = run_sweep(sc, parts, {});
    bool same_sweep = w.complete && rest.complete && !first.complete && w.points.size() == 3 &&
                      rest.points.size() == 3;
    for (const auto & p : w.points) {
        const fs::path pa = point_dir(whole, p.model_id), pb = point_dir(parts, p.model_id);
        same_sweep = same_sweep && read_file(pa / "result.json") == read_file(pb / "result.json") &&
                     read_file(pa / "metrics.jsonl") == read_file(pb / "metrics.jsonl") &&
                     read_file(pa / "checkpoint.rbck") == read_file(pb / "checkpoint.rbck");
    }
    return {same_stream && same_sweep, std::to_string(a.size()) + " metrics rows " +
                                           (same_stream ? "bit-identical" : "DIFFER") +
                                           "; interrupted+resumed 3-point sweep " +
                                           (same_sweep ? "matches" : "DIFFERS from") + " uninterrupted"};
}

// 12
Outcome cli_end_to_end(Context & ctx) {
    const auto start = std::chrono::steady_clock::now();
    const fs::path dir = ctx.work / "cli";
    fs::create_directories(dir);
    const fs::path sweep = dir / "sweep", table = dir / "curve.csv", plot = dir / "curve.svg", md = dir / "ablation.md";
    auto step = [&](const std::string & name, const std::string & args) {
        const int rc = run_cli(ctx, args, dir / name);
        if (rc != 0) {
            throw std::runtime_error(name + " exited " + std::to_string(rc) + ": " + read_file(dir / (name + ".err")));
        }
    };
    step("sweep", "sweep --set train.steps=1000 sweep.target_kls=[10,40,160] sweep.lambda_weights=[10] --out " +
                      quote(sweep.string()));
    step("curve", "curve --in " + quote(sweep.string()) + " --out " + quote(table.string()) + " --plot " +
                      quote(plot.string()));
    step("ablation", "ablation --in " + quote(sweep.string()) + " --target-kl 40 --out " + quote(md.string()));
    const double minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() / 60.0;

    std::istringstream csv(read_file(table));
    std::string header, line;
    std::getline(csv, header);
    std::string expected;
    for (const auto & c : curve_columns()) expected += (expected.empty() ? "" : ",") + c;
    int rows = 0;
    while (std::getline(csv, line)) rows += line.empty() ? 0 : 1;
    const auto plot_bytes = fs::file_size(plot);
    const std::string report = read_file(md);
    const bool table1 = report.find("| Model | Passthrough | Discriminator |") != std::string::npos &&
                        report.find("| gaussian") != std::string::npos;
    const bool ok = header == expected && rows == 3 && plot_bytes > 0 && table1 && minutes <= 30.0;
    return {ok, "csv header " + std::string(header == expected ? "exact" : "WRONG") + ", " + std::to_string(rows) +
                    " rows; plot " + std::to_string(plot_bytes) + " bytes; ablation table " +
                    (table1 ? "ok" : "malformed") + "; " + fmt(minutes, 3) + " min"};
}

// Trained decoder versus random init on training data, reported alongside the criteria.
Outcome reconstruction_gain(Context & ctx) {
    require_ladder(ctx);
    const RDPoint & p = find_point(ctx.ladder, 160.0, 0);
    LoadedModel m = load_model(point_dir(ctx.work / "ladder", p.model_id) / "checkpoint.rbck");
    Trainer fresh(m.config);
    std::vector<const std::vector<float> *> items;
    for (std::size_t i : fresh.split().train) items.push_back(&fresh.dataset().items[i].samples);
    const double trained = evaluate_codec(*m.codec, items, fresh.dataset().sample_rate_hz).mel_distance;
    const double random = evaluate_codec(fresh.codec(), items, fresh.dataset().sample_rate_hz).mel_distance;
    const double reduction = 1.0 - trained / random;
    return {reduction >= 0.5, "train-split mel distance " + fmt(random) + " at init -> " + fmt(trained) +
                                  " after training (" + fmt(100 * reduction, 3) + "% lower, need 50%)"};
}

}  // namespace

int main(int argc, char ** argv) {
    CLI::App app{"ratebench acceptance run"};
    Context ctx;
    std::string work = "acceptance_work";
    std::vector<std::string> only;
    bool keep = false;
    app.add_option("--ratebench", ctx.ratebench, "Path to the ratebench executable")->required();
    app.add_option("--work", work, "Scratch directory");
    app.add_option("--only", only, "Run only these ids (e.g. C1 C9 S1)");
    app.add_flag("--keep", keep, "Reuse finished sweep points from a previous run");
    CLI11_PARSE(app, argc, argv);
    ctx.work = fs::absolute(work);
    if (!keep) fs::remove_all(ctx.work);
    fs::create_directories(ctx.work);

    struct Criterion {
        std::string id;
        std::string name;
        std::function<Outcome(Context &)> run;
    };
    // Cheap checks first; the ladder feeds 5, 6, 8, 10 and S1.
    const std::vector<Criterion> order{
        {"C1", "golden rate mapping", golden_rate},
        {"C2", "KL Monte-Carlo oracle", kl_oracle},
        {"C3", "KL gradient check", kl_gradients},
        {"C9", "schedule and v identities", schedule_identities},
        {"C11", "determinism and resume", determinism},
        {"C4", "target-KL convergence", target_convergence},
        {"C5", "rate-distortion trend", rd_trend},
        {"C6", "lambda adherence ordering", lambda_adherence},
        {"C7", "free-bits floor", free_bits_floor},
        {"C8", "VQ structural rate", vq_rate},
        {"C10", "diffusion probe smoke", probe_smoke},
        {"C12", "end-to-end CLI", cli_end_to_end},
        {"S1", "reconstruction vs random init", reconstruction_gain},
    };
    const std::set<std::string> wanted(only.begin(), only.end());
    const bool need_ladder = wanted.empty() || std::any_of(wanted.begin(), wanted.end(), [](const std::string & id) {
                                 return id == "C5" || id == "C6" || id == "C8" || id == "C10" || id == "S1";
                             });

    std::map<int, std::string> lines;
    int failed = 0, index = 0;
    for (const auto & c : order) {
        ++index;
        const bool selected = wanted.empty() || wanted.count(c.id) > 0 || (c.id == "C4" && need_ladder);
        if (!selected) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run(ctx);
        } catch (const std::exception & e) {
            o = {false, std::string("error: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::ostringstream line;
        line << c.id << ' ' << (o.pass ? "PASS" : "FAIL") << "  " << c.name << ": " << o.detail << " [" << fmt(secs, 3)
             << " s]";
        std::cout << line.str() << std::endl;
        if (!o.pass) ++failed;
        const int num = c.id[0] == 'C' ? std::stoi(c.id.substr(1)) : 100 + index;
        lines[num] = line.str();
    }
    std::cout << "\nSummary (criterion order):\n";
    for (const auto & [num, line] : lines) std::cout << line << '\n';
    std::cout << (failed == 0 ? "ALL PASS" : std::to_string(failed) + " FAILED") << std::endl;
    return failed == 0 ? 0 : 1;
}
