#include "helpers.hpp"
#include "ratebench/rd_harness.hpp"
#include "ratebench/trainer.hpp"

#include <doctest.h>

#include <fstream>
#include <iterator>
#include <set>

using namespace ratebench;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

RDPoint make_point(const std::string & id, const std::string & family, double kl, double mel, std::uint64_t seed = 0) {
    RDPoint p;
    p.model_id = id;
    p.family = family;
    p.target_kl = kl;
    p.lambda = 10;
    p.measured_kl = kl * 1.01;
    p.measured_bitrate_bps = kl_to_bitrate(p.measured_kl, 40.0);
    p.mel_distance = mel;
    p.seed = seed;
    p.sample_rate_hz = 16000;
    p.hop = 400;
    p.latent_dim = 16;
    return p;
}

std::string slurp(const fs::path & p) {
    std::ifstream f(p);
    return {std::istreambuf_iterator<char>(f), {}};
}

RunConfig tiny_sweep() {
    RunConfig cfg;
    cfg.train = testing::tiny_config();
    cfg.train.steps = 4;
    cfg.train.eval_every = 4;
    cfg.sweep.target_kls = {5, 20, 80};
    cfg.sweep.lambda_weights = {10};
    return cfg;
}

}  // namespace

TEST_CASE("sweep plan") {
    RunConfig cfg;
    cfg.sweep.target_kls = {10, 40};
    cfg.sweep.lambda_weights = {1, 10};
    cfg.sweep.seeds = {0, 1};
    cfg.sweep.families = {"gaussian", "vq"};
    cfg.sweep.vq_points = {{16, 1}, {16, 2}};
    const auto plan = plan_sweep(cfg);
    REQUIRE(plan.size() == 2 * 2 * 2 + 2 * 2);
    std::set<std::string> ids;
    for (const auto & p : plan) ids.insert(p.point.model_id);
    CHECK(ids.size() == plan.size());
    CHECK(plan[0].point.model_id == "gaussian-kl10-lam1-pt0-adv0-s0");
    CHECK(plan[0].train.target_kl == 10);
    CHECK(plan[0].train.weights.rate_weight == 1);
    CHECK(plan[0].train.seed == 0);
    const auto & vq = plan.back();
    CHECK(vq.point.family == "vq");
    CHECK(vq.train.bottleneck.kind == BottleneckKind::vq);
    CHECK(vq.train.bottleneck.rate_loss == RateLossKind::none);
    CHECK(vq.train.bottleneck.num_codebooks == 2);
    // Same plan twice.
    const auto again = plan_sweep(cfg);
    for (std::size_t i = 0; i < plan.size(); ++i) CHECK(again[i].point.model_id == plan[i].point.model_id);
}

TEST_CASE("ablation axes in the plan") {
    RunConfig cfg;
    cfg.sweep.target_kls = {40};
    cfg.sweep.lambda_weights = {10};
    cfg.sweep.passthrough_probs = {0.0, 0.25};
    cfg.sweep.adversarial = {false, true};
    const auto plan = plan_sweep(cfg);
    REQUIRE(plan.size() == 4);
    for (const auto & p : plan) {
        CHECK(p.train.bottleneck.passthrough_prob == p.point.passthrough_prob);
        CHECK((p.train.weights.adv_weight > 0) == p.point.adversarial);
    }
}

TEST_CASE("curve CSV") {
    const std::vector<RDPoint> pts{make_point("a", "gaussian", 10, 0.9), make_point("b", "vq", 2.772588722239781, 1.3, 3)};
    const std::string csv = curve_csv(pts);
    CHECK(csv.substr(0, csv.find('\n')) ==
          "model_id,family,target_kl,lambda,measured_kl,measured_bitrate_bps,mel_distance,seed");
    const auto back = parse_curve_csv(csv);
    REQUIRE(back.size() == 2);
    CHECK(curve_csv(back) == csv);
    CHECK(back[1].measured_kl == pts[1].measured_kl);
    CHECK(back[1].seed == 3);
    CHECK_THROWS_AS(parse_curve_csv("model_id,family\nx,y\n"), std::invalid_argument);
}

TEST_CASE("curve files") {
    const auto dir = testing::fresh_dir("curve");
    SUBCASE("single point") {
        emit_curve({make_point("a", "gaussian", 10, 0.9)}, CurveFormat::csv, dir / "c.csv", dir / "c.svg");
        const std::string csv = slurp(dir / "c.csv");
        CHECK(std::count(csv.begin(), csv.end(), '\n') == 2);
        CHECK(fs::file_size(dir / "c.svg") > 0);
        CHECK(slurp(dir / "c.svg").find("<svg") != std::string::npos);
    }
    SUBCASE("two families give two series") {
        emit_curve({make_point("a", "gaussian", 10, 0.9), make_point("b", "gaussian", 40, 0.8),
                    make_point("c", "vq", 2.77, 1.1)},
                   CurveFormat::csv, dir / "c.csv", dir / "c.svg");
        const json side = json::parse(slurp(dir / "c.svg.json"));
        REQUIRE(side["series"].size() == 2);
        std::set<std::string> fams;
        for (const auto & s : side["series"]) fams.insert(s["family"].get<std::string>());
        CHECK(fams == std::set<std::string>{"gaussian", "vq"});
        CHECK(side["x_axis"]["scale"] == "log");
        const std::string svg = slurp(dir / "c.svg");
        CHECK(svg.find("data-family=\"vq\"") != std::string::npos);
        CHECK(svg.find("data-family=\"gaussian\"") != std::string::npos);
    }
    SUBCASE("json table") {
        emit_curve({make_point("a", "gaussian", 10, 0.9)}, CurveFormat::json, dir / "c.json", dir / "c.svg");
        const json j = json::parse(slurp(dir / "c.json"));
        REQUIRE(j.size() == 1);
        for (const auto & col : curve_columns()) CHECK(j[0].contains(col));
    }
    CHECK_THROWS_AS(emit_curve({}, CurveFormat::csv, dir / "e.csv", dir / "e.svg"), std::invalid_argument);
}

TEST_CASE("ablation report") {
    SUBCASE("one variant, one row") {
        const auto rep = ablation_report({make_point("a", "gaussian", 40, 0.9, 0), make_point("b", "gaussian", 40, 0.7, 1)});
        CHECK(std::count(rep.csv.begin(), rep.csv.end(), '\n') == 2);
        CHECK(rep.markdown.find("| Model | Passthrough | Discriminator") != std::string::npos);
    }
    SUBCASE("rows per variant, bitrate consistent with KL") {
        auto a = make_point("a", "gaussian", 40, 0.9);
        auto b = make_point("b", "gaussian", 40, 0.8);
        b.passthrough_prob = 0.25;
        auto c = make_point("c", "gaussian", 40, 0.85);
        c.adversarial = true;
        const auto rep = ablation_report({a, b, c});
        std::istringstream in(rep.csv);
        std::string line;
        std::getline(in, line);
        CHECK(line.find("mel_distance") != std::string::npos);
        int rows = 0;
        while (std::getline(in, line)) {
            ++rows;
            std::vector<std::string> cells;
            std::stringstream ss(line);
            for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
            // variant, passthrough_prob, discriminator, lambda, mel_distance, measured_kl, bitrate_kbps, seeds
            REQUIRE(cells.size() == 8);
            CHECK(std::stod(cells[6]) * 1000.0 == doctest::Approx(kl_to_bitrate(std::stod(cells[5]), 40.0)).epsilon(1e-12));
        }
        CHECK(rows == 3);
    }
    SUBCASE("mismatched rate geometry") {
        auto a = make_point("a", "gaussian", 40, 0.9);
        auto b = make_point("b", "gaussian", 40, 0.8);
        b.hop = 320;
        CHECK_THROWS_AS(ablation_report({a, b}), std::invalid_argument);
        b = make_point("b", "gaussian", 80, 0.8);
        CHECK_THROWS_AS(ablation_report({a, b}), std::invalid_argument);
    }
}

TEST_CASE("a one-point sweep equals a single training run") {
    const auto dir = testing::fresh_dir("sweep_one");
    RunConfig cfg = tiny_sweep();
    cfg.sweep.target_kls = {20};
    const SweepResult r = run_sweep(cfg, dir);
    REQUIRE(r.complete);
    REQUIRE(r.points.size() == 1);
    const auto plan = plan_sweep(cfg);
    Trainer t(plan[0].train);
    std::string expected;
    t.run([&](const MetricsRow & row) { expected += row.to_json().dump() + "\n"; });
    CHECK(slurp(point_dir(dir, plan[0].point.model_id) / "metrics.jsonl") == expected);
    const EvalResult e = t.evaluate();
    CHECK(r.points[0].measured_kl == e.kl_per_frame);
    CHECK(r.points[0].mel_distance == e.mel_distance);
    CHECK(r.points[0].measured_bitrate_bps == doctest::Approx(kl_to_bitrate(e.kl_per_frame, 40.0)).epsilon(1e-12));
}

TEST_CASE("interrupted sweep resumes to the same result") {
    const auto full_dir = testing::fresh_dir("sweep_full");
    const auto part_dir = testing::fresh_dir("sweep_part");
    const RunConfig cfg = tiny_sweep();
    const SweepResult full = run_sweep(cfg, full_dir);
    REQUIRE(full.complete);
    REQUIRE(full.points.size() == 3);

    SweepOptions stop;
    stop.max_new_points = 1;
    const SweepResult first = run_sweep(cfg, part_dir, stop);
    CHECK_FALSE(first.complete);
    CHECK(first.trained == 1);
    // Simulate a crash after the checkpoint was written but before the result.
    const SweepResult second = run_sweep(cfg, part_dir, stop);
    CHECK(second.trained == 1);
    fs::remove(point_dir(part_dir, second.points.back().model_id) / "result.json");
    const SweepResult rest = run_sweep(cfg, part_dir);
    CHECK(rest.complete);
    CHECK(rest.trained == 1);
    REQUIRE(rest.points.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(rest.points[i].to_json() == full.points[i].to_json());
        const auto id = full.points[i].model_id;
        CHECK(slurp(point_dir(part_dir, id) / "metrics.jsonl") == slurp(point_dir(full_dir, id) / "metrics.jsonl"));
    }
    CHECK(collect_points(part_dir).size() == 3);
}

TEST_CASE("vq points report the structural rate") {
    const auto dir = testing::fresh_dir("sweep_vq");
    RunConfig cfg = tiny_sweep();
    cfg.sweep.families = {"vq"};
    cfg.sweep.vq_points = {{16, 1}, {4, 3}};
    const SweepResult r = run_sweep(cfg, dir);
    REQUIRE(r.points.size() == 2);
    CHECK(r.points[0].measured_bitrate_bps == vq_bitrate(16, 1, 40.0));
    CHECK(r.points[1].measured_bitrate_bps == vq_bitrate(4, 3, 40.0));
    CHECK(r.points[1].family == "vq");
}

TEST_CASE("failed points are recorded and the sweep continues") {
    const auto dir = testing::fresh_dir("sweep_fail");
    RunConfig cfg = tiny_sweep();
    cfg.train.data.source = DataSource::wav_dir;
    cfg.train.data.wav_dir = (dir / "no_such_dir").string();
    const SweepResult r = run_sweep(cfg, dir);
    CHECK(r.complete);
    CHECK(r.points.empty());
    REQUIRE(r.failures.size() == 3);
    CHECK(r.failures[0].code == "invalid-argument");
    const std::string log = slurp(dir / "points.jsonl");
    CHECK(std::count(log.begin(), log.end(), '\n') == 3);
}
