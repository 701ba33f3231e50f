#include "ratebench/rd_harness.hpp"

#include "ratebench/errors.hpp"
#include "ratebench/trainer.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace ratebench {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string fmt_g(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

std::string fmt_exact(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void write_text_atomic(const fs::path & path, const std::string & text) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::trunc);
        if (!f) throw std::invalid_argument("cannot write " + tmp.string());
        f << text;
    }
    fs::rename(tmp, path);
}

std::string read_text(const fs::path & path) {
    std::ifstream f(path);
    if (!f) throw std::invalid_argument("cannot read " + path.string());
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

// Appends one line under an exclusive lock so concurrent sweep workers do not interleave.
void append_locked(const fs::path & path, const std::string & line) {
    const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
    if (fd < 0) throw std::invalid_argument("cannot open " + path.string());
    ::flock(fd, LOCK_EX);
    const std::string data = line + "\n";
    const ssize_t n = ::write(fd, data.data(), data.size());
    ::flock(fd, LOCK_UN);
    ::close(fd);
    if (n != static_cast<ssize_t>(data.size())) throw std::invalid_argument("short write to " + path.string());
}

}  // namespace

std::string RDPoint::variant() const {
    if (family == "vq") {
        return "vq K=" + std::to_string(codebook_size) + " n=" + std::to_string(num_codebooks);
    }
    std::string v = family;
    v += passthrough_prob > 0.0 ? " passthrough " + fmt_g(100.0 * passthrough_prob) + "%" : " no passthrough";
    v += adversarial ? " +disc" : "";
    return v;
}

json RDPoint::to_json() const {
    json j = {{"model_id", model_id},
              {"family", family},
              {"target_kl", target_kl},
              {"lambda", lambda},
              {"measured_kl", measured_kl},
              {"measured_bitrate_bps", measured_bitrate_bps},
              {"mel_distance", mel_distance},
              {"seed", seed},
              {"passthrough_prob", passthrough_prob},
              {"adversarial", adversarial},
              {"codebook_size", codebook_size},
              {"num_codebooks", num_codebooks},
              {"sample_rate_hz", sample_rate_hz},
              {"hop", hop},
              {"latent_dim", latent_dim}};
    if (predictability) j["predictability"] = *predictability;
    return j;
}

RDPoint RDPoint::from_json(const json & j) {
    RDPoint p;
    p.model_id = j.at("model_id").get<std::string>();
    p.family = j.at("family").get<std::string>();
    p.target_kl = j.at("target_kl").get<double>();
    p.lambda = j.at("lambda").get<double>();
    p.measured_kl = j.at("measured_kl").get<double>();
    p.measured_bitrate_bps = j.at("measured_bitrate_bps").get<double>();
    p.mel_distance = j.at("mel_distance").get<double>();
    p.seed = j.at("seed").get<std::uint64_t>();
    p.passthrough_prob = j.value("passthrough_prob", 0.0);
    p.adversarial = j.value("adversarial", false);
    p.codebook_size = j.value("codebook_size", 0);
    p.num_codebooks = j.value("num_codebooks", 0);
    p.sample_rate_hz = j.value("sample_rate_hz", 0);
    p.hop = j.value("hop", 0);
    p.latent_dim = j.value("latent_dim", 0);
    if (j.contains("predictability")) p.predictability = j.at("predictability").get<double>();
    return p;
}

std::vector<PlannedPoint> plan_sweep(const RunConfig & cfg) {
    cfg.sweep.validate();
    const auto & s = cfg.sweep;
    const TrainConfig & base = cfg.train;
    std::vector<PlannedPoint> plan;
    auto geometry = [&](RDPoint & p) {
        p.sample_rate_hz = base.model.sample_rate_hz;
        p.hop = base.model.hop;
        p.latent_dim = base.model.latent_dim;
    };
    for (const auto & family : s.families) {
        if (family == "gaussian") {
            for (double target : s.target_kls)
                for (double lambda : s.lambda_weights)
                    for (double pt : s.passthrough_probs)
                        for (bool adv : s.adversarial)
                            for (std::uint64_t seed : s.seeds) {
                                PlannedPoint pp;
                                pp.train = base;
                                pp.train.bottleneck.kind = BottleneckKind::gaussian;
                                pp.train.bottleneck.passthrough_prob = pt;
                                pp.train.target_kl = target;
                                pp.train.weights.rate_weight = lambda;
                                if (adv) {
                                    if (pp.train.weights.adv_weight == 0.0) pp.train.weights.adv_weight = 1.0;
                                    if (pp.train.weights.feature_match_weight == 0.0)
                                        pp.train.weights.feature_match_weight = 2.0;
                                } else {
                                    pp.train.weights.adv_weight = 0.0;
                                    pp.train.weights.feature_match_weight = 0.0;
                                }
                                pp.train.seed = seed;
                                RDPoint & p = pp.point;
                                p.family = family;
                                p.target_kl = target;
                                p.lambda = lambda;
                                p.seed = seed;
                                p.passthrough_prob = pt;
                                p.adversarial = adv;
                                geometry(p);
                                p.model_id = "gaussian-kl" + fmt_g(target) + "-lam" + fmt_g(lambda) + "-pt" +
                                             fmt_g(pt) + "-adv" + (adv ? "1" : "0") + "-s" + std::to_string(seed);
                                plan.push_back(std::move(pp));
                            }
        } else {
            for (const auto & vq : s.vq_points)
                for (std::uint64_t seed : s.seeds) {
                    PlannedPoint pp;
                    pp.train = base;
                    pp.train.bottleneck.kind = BottleneckKind::vq;
                    pp.train.bottleneck.rate_loss = RateLossKind::none;
                    pp.train.bottleneck.passthrough_prob = 0.0;
                    pp.train.bottleneck.codebook_size = vq.codebook_size;
                    pp.train.bottleneck.num_codebooks = vq.num_codebooks;
                    pp.train.target_kl = vq_kl_nats(vq.codebook_size, vq.num_codebooks);
                    pp.train.weights.adv_weight = 0.0;
                    pp.train.weights.feature_match_weight = 0.0;
                    pp.train.seed = seed;
                    RDPoint & p = pp.point;
                    p.family = family;
                    p.target_kl = pp.train.target_kl;
                    p.lambda = 0.0;
                    p.seed = seed;
                    p.codebook_size = vq.codebook_size;
                    p.num_codebooks = vq.num_codebooks;
                    geometry(p);
                    p.model_id = "vq-k" + std::to_string(vq.codebook_size) + "-n" + std::to_string(vq.num_codebooks) +
                                 "-s" + std::to_string(seed);
                    plan.push_back(std::move(pp));
                }
        }
    }
    return plan;
}

fs::path point_dir(const fs::path & out_dir, const std::string & model_id) { return out_dir / "points" / model_id; }

namespace {

constexpr const char * kCheckpointName = "checkpoint.rbck";
constexpr const char * kResultName = "result.json";
constexpr const char * kMetricsName = "metrics.jsonl";

RDPoint finish_point(RDPoint p, const EvalResult & e) {
    p.measured_kl = e.kl_per_frame;
    p.measured_bitrate_bps = e.bitrate_bps;
    p.mel_distance = e.mel_distance;
    return p;
}

EvalResult evaluate_checkpoint(const fs::path & ckpt) {
    LoadedModel m = load_model(ckpt);
    const Dataset ds = load_dataset(m.config.data, m.config.model.sample_rate_hz, m.config.model.hop);
    const Split split = split_dataset(ds.items.size(), m.config.data.eval_fraction, m.config.data.seed);
    std::vector<const std::vector<float> *> items;
    for (std::size_t i : split.eval) items.push_back(&ds.items[i].samples);
    return evaluate_codec(*m.codec, items, ds.sample_rate_hz);
}

}  // namespace

SweepResult run_sweep(const RunConfig & cfg, const fs::path & out_dir, const SweepOptions & opts) {
    const auto plan = plan_sweep(cfg);
    fs::create_directories(out_dir / "points");
    write_text_atomic(out_dir / "sweep_config.json", to_json(cfg).dump(2) + "\n");
    const fs::path log_path = out_dir / "points.jsonl";
    auto log = [&](const std::string & msg) {
        if (opts.log) opts.log(msg);
    };

    SweepResult result;
    std::size_t budget = opts.max_new_points.value_or(plan.size());
    for (const auto & pp : plan) {
        const fs::path dir = point_dir(out_dir, pp.point.model_id);
        const fs::path result_path = dir / kResultName;
        const fs::path ckpt = dir / kCheckpointName;
        if (fs::exists(result_path)) {
            result.points.push_back(RDPoint::from_json(json::parse(read_text(result_path))));
            ++result.skipped;
            continue;
        }
        try {
            RDPoint point;
            if (fs::exists(ckpt)) {
                log(pp.point.model_id + ": evaluating existing checkpoint");
                point = finish_point(pp.point, evaluate_checkpoint(ckpt));
                ++result.skipped;
            } else {
                if (budget == 0) {
                    log("stopping: new-point budget exhausted");
                    return result;
                }
                --budget;
                log(pp.point.model_id + ": training " + std::to_string(pp.train.steps) + " steps");
                fs::create_directories(dir);
                fs::remove(dir / kMetricsName);
                write_text_atomic(dir / "config.json", to_json(pp.train).dump(2) + "\n");
                Trainer trainer(pp.train);
                trainer.run(dir / kMetricsName);
                trainer.save(ckpt);
                point = finish_point(pp.point, trainer.evaluate());
                ++result.trained;
            }
            write_text_atomic(result_path, point.to_json().dump(2) + "\n");
            append_locked(log_path, json{{"status", "ok"}, {"point", point.to_json()}}.dump());
            result.points.push_back(point);
        } catch (const std::exception & e) {
            SweepFailure f{pp.point.model_id, error_code(e), e.what()};
            log(f.model_id + ": failed (" + f.code + "): " + f.message);
            append_locked(log_path, json{{"status", "failed"},
                                         {"model_id", f.model_id},
                                         {"error", {{"code", f.code}, {"message", f.message}}}}
                                        .dump());
            result.failures.push_back(std::move(f));
        }
    }
    result.complete = true;
    return result;
}

std::vector<RDPoint> collect_points(const fs::path & dir) {
    if (!fs::is_directory(dir)) {
        throw std::invalid_argument("'" + dir.string() + "' is not a directory");
    }
    std::vector<RDPoint> points;
    for (const auto & e : fs::recursive_directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().filename() == kResultName) {
            points.push_back(RDPoint::from_json(json::parse(read_text(e.path()))));
        }
    }
    std::sort(points.begin(), points.end(),
              [](const RDPoint & a, const RDPoint & b) { return a.model_id < b.model_id; });
    return points;
}

std::string curve_csv(const std::vector<RDPoint> & points) {
    std::ostringstream os;
    const auto & cols = curve_columns();
    for (std::size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << cols[i];
    os << '\n';
    for (const auto & p : points) {
        if (p.model_id.find_first_of(",\"\n") != std::string::npos ||
            p.family.find_first_of(",\"\n") != std::string::npos) {
            throw std::invalid_argument("model_id and family must not contain commas, quotes or newlines");
        }
        os << p.model_id << ',' << p.family << ',' << fmt_exact(p.target_kl) << ',' << fmt_exact(p.lambda) << ','
           << fmt_exact(p.measured_kl) << ',' << fmt_exact(p.measured_bitrate_bps) << ','
           << fmt_exact(p.mel_distance) << ',' << p.seed << '\n';
    }
    return os.str();
}

std::vector<RDPoint> parse_curve_csv(const std::string & text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw std::invalid_argument("curve CSV is empty");
    std::string expected;
    for (std::size_t i = 0; i < curve_columns().size(); ++i) expected += (i ? "," : "") + curve_columns()[i];
    if (line != expected) throw std::invalid_argument("curve CSV header mismatch: '" + line + "'");
    std::vector<RDPoint> out;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) f.push_back(cell);
        if (f.size() != curve_columns().size()) {
            throw std::invalid_argument("curve CSV row " + std::to_string(row) + " has " + std::to_string(f.size()) +
                                        " fields");
        }
        try {
            RDPoint p;
            p.model_id = f[0];
            p.family = f[1];
            p.target_kl = std::stod(f[2]);
            p.lambda = std::stod(f[3]);
            p.measured_kl = std::stod(f[4]);
            p.measured_bitrate_bps = std::stod(f[5]);
            p.mel_distance = std::stod(f[6]);
            p.seed = std::stoull(f[7]);
            out.push_back(std::move(p));
        } catch (const std::logic_error &) {
            throw std::invalid_argument("curve CSV row " + std::to_string(row) + " has a malformed number");
        }
    }
    return out;
}

namespace {

std::string svg_escape(const std::string & s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '&': out += "&amp;"; break;
            default: out += c;
        }
    }
    return out;
}

struct Series {
    std::string family;
    std::vector<const RDPoint *> points;
};

std::vector<Series> group_by_family(const std::vector<RDPoint> & points) {
    std::vector<Series> series;
    for (const auto & p : points) {
        auto it = std::find_if(series.begin(), series.end(), [&](const Series & s) { return s.family == p.family; });
        if (it == series.end()) {
            series.push_back({p.family, {}});
            it = series.end() - 1;
        }
        it->points.push_back(&p);
    }
    for (auto & s : series) {
        std::sort(s.points.begin(), s.points.end(), [](const RDPoint * a, const RDPoint * b) {
            return a->measured_bitrate_bps < b->measured_bitrate_bps;
        });
    }
    return series;
}

std::string render_svg(const std::vector<Series> & series) {
    constexpr double W = 640, H = 420, L = 70, R = 170, T = 30, B = 55;
    const double pw = W - L - R, ph = H - T - B;
    double xmin = INFINITY, xmax = 0, ymin = INFINITY, ymax = -INFINITY;
    for (const auto & s : series)
        for (const auto * p : s.points) {
            const double x = std::max(p->measured_bitrate_bps, 1e-3);
            xmin = std::min(xmin, x);
            xmax = std::max(xmax, x);
            ymin = std::min(ymin, p->mel_distance);
            ymax = std::max(ymax, p->mel_distance);
        }
    double lx0 = std::floor(std::log10(xmin)), lx1 = std::ceil(std::log10(xmax));
    if (lx1 <= lx0) lx1 = lx0 + 1;
    if (ymax - ymin < 1e-9) {
        ymin -= 0.5;
        ymax += 0.5;
    }
    const double pad = 0.08 * (ymax - ymin);
    ymin -= pad;
    ymax += pad;
    auto px = [&](double x) { return L + (std::log10(std::max(x, 1e-3)) - lx0) / (lx1 - lx0) * pw; };
    auto py = [&](double y) { return T + (ymax - y) / (ymax - ymin) * ph; };
    static const char * colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
       << ' ' << H << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << pw << "\" height=\"" << ph
       << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (double d = lx0; d <= lx1 + 1e-9; d += 1.0) {
        const double x = L + (d - lx0) / (lx1 - lx0) * pw;
        os << "<line x1=\"" << x << "\" y1=\"" << T << "\" x2=\"" << x << "\" y2=\"" << T + ph
           << "\" stroke=\"#ddd\"/>\n";
        os << "<text x=\"" << x << "\" y=\"" << T + ph + 18 << "\" font-size=\"11\" text-anchor=\"middle\">1e"
           << static_cast<int>(d) << "</text>\n";
    }
    for (int i = 0; i <= 4; ++i) {
        const double y = ymin + (ymax - ymin) * i / 4.0;
        os << "<text x=\"" << L - 6 << "\" y=\"" << py(y) + 4 << "\" font-size=\"11\" text-anchor=\"end\">"
           << fmt_g(std::round(y * 1000) / 1000) << "</text>\n";
    }
    os << "<text x=\"" << L + pw / 2 << "\" y=\"" << H - 12
       << "\" font-size=\"13\" text-anchor=\"middle\">bitrate (bit/s, log scale)</text>\n";
    os << "<text transform=\"translate(16," << T + ph / 2
       << ") rotate(-90)\" font-size=\"13\" text-anchor=\"middle\">mel distance</text>\n";
    for (std::size_t k = 0; k < series.size(); ++k) {
        const char * c = colors[k % 6];
        const auto & s = series[k];
        os << "<g class=\"series\" data-family=\"" << svg_escape(s.family) << "\">\n";
        if (s.points.size() > 1) {
            os << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"1.5\" points=\"";
            for (const auto * p : s.points) os << px(p->measured_bitrate_bps) << ',' << py(p->mel_distance) << ' ';
            os << "\"/>\n";
        }
        for (const auto * p : s.points) {
            os << "<circle cx=\"" << px(p->measured_bitrate_bps) << "\" cy=\"" << py(p->mel_distance)
               << "\" r=\"4\" fill=\"" << c << "\"><title>" << svg_escape(p->model_id) << "</title></circle>\n";
        }
        const double ly = T + 16 + 20.0 * k;
        os << "<circle cx=\"" << L + pw + 18 << "\" cy=\"" << ly << "\" r=\"5\" fill=\"" << c << "\"/>\n";
        os << "<text x=\"" << L + pw + 30 << "\" y=\"" << ly + 4 << "\" font-size=\"12\">" << svg_escape(s.family)
           << "</text>\n</g>\n";
    }
    os << "</svg>\n";
    return os.str();
}

}  // namespace

void emit_curve(const std::vector<RDPoint> & points, CurveFormat format, const fs::path & table_path,
                const fs::path & plot_path) {
    if (points.empty()) {
        throw std::invalid_argument("emit_curve: no points");
    }
    for (const auto & p : points) {
        if (!std::isfinite(p.measured_bitrate_bps) || !std::isfinite(p.mel_distance)) {
            throw std::invalid_argument("emit_curve: point " + p.model_id + " has non-finite values");
        }
    }
    for (const auto & path : {table_path, plot_path}) {
        if (path.has_parent_path()) fs::create_directories(path.parent_path());
    }
    if (format == CurveFormat::csv) {
        write_text_atomic(table_path, curve_csv(points));
    } else {
        json arr = json::array();
        for (const auto & p : points) arr.push_back(p.to_json());
        write_text_atomic(table_path, arr.dump(2) + "\n");
    }
    const auto series = group_by_family(points);
    write_text_atomic(plot_path, render_svg(series));
    json side = {{"x_axis", {{"quantity", "measured_bitrate_bps"}, {"scale", "log"}}},
                 {"y_axis", {{"quantity", "mel_distance"}, {"scale", "linear"}}},
                 {"series", json::array()}};
    for (const auto & s : series) {
        json pts = json::array();
        for (const auto * p : s.points) pts.push_back(p->model_id);
        side["series"].push_back({{"family", s.family}, {"points", pts}});
    }
    write_text_atomic(plot_path.string() + ".json", side.dump(2) + "\n");
}

AblationReport ablation_report(const std::vector<RDPoint> & points) {
    if (points.empty()) {
        throw std::invalid_argument("ablation_report: no points");
    }
    const RDPoint & ref = points.front();
    for (const auto & p : points) {
        if (p.sample_rate_hz != ref.sample_rate_hz || p.hop != ref.hop || p.latent_dim != ref.latent_dim ||
            p.target_kl != ref.target_kl) {
            throw std::invalid_argument("ablation_report: point " + p.model_id +
                                        " has a different rate spec (sample rate, hop, latent dim or target KL) than " +
                                        ref.model_id);
        }
    }
    struct Row {
        std::string variant;
        double lambda;
        double passthrough;
        bool adversarial;
        double mel = 0, kl = 0, bps = 0;
        int n = 0;
    };
    std::vector<Row> rows;
    for (const auto & p : points) {
        const std::string v = p.variant();
        auto it = std::find_if(rows.begin(), rows.end(),
                               [&](const Row & r) { return r.variant == v && r.lambda == p.lambda; });
        if (it == rows.end()) {
            rows.push_back({v, p.lambda, p.passthrough_prob, p.adversarial});
            it = rows.end() - 1;
        }
        it->mel += p.mel_distance;
        it->kl += p.measured_kl;
        ++it->n;
    }
    const double frame_rate = static_cast<double>(ref.sample_rate_hz) / ref.hop;
    std::ostringstream md, csv;
    md << "Target KL " << fmt_g(ref.target_kl) << " nats/frame, " << ref.latent_dim << " latent dims, "
       << fmt_g(frame_rate) << " frames/s\n\n";
    md << "| Model | Passthrough | Discriminator | lambda | Mel distance | KL | Bitrate (kbps) | Seeds |\n";
    md << "|---|---|---|---|---|---|---|---|\n";
    csv << "variant,passthrough_prob,discriminator,lambda,mel_distance,measured_kl,bitrate_kbps,seeds\n";
    for (auto & r : rows) {
        r.mel /= r.n;
        r.kl /= r.n;
        // Bitrate follows from the averaged KL so each row is self-consistent.
        r.bps = kl_to_bitrate(r.kl, frame_rate);
        char line[512];
        std::snprintf(line, sizeof line, "| %s | %g%% | %s | %g | %.3f | %.2f | %.2f | %d |\n", r.variant.c_str(),
                      100.0 * r.passthrough, r.adversarial ? "on" : "off", r.lambda, r.mel, r.kl, r.bps / 1000.0, r.n);
        md << line;
        csv << r.variant << ',' << fmt_exact(r.passthrough) << ',' << (r.adversarial ? "on" : "off") << ','
            << fmt_exact(r.lambda) << ',' << fmt_exact(r.mel) << ',' << fmt_exact(r.kl) << ','
            << fmt_exact(r.bps / 1000.0) << ',' << r.n << '\n';
    }
    return {md.str(), csv.str()};
}

}  // namespace ratebench
