#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "eitdiff/core/binary_io.hpp"
#include "eitdiff/core/error.hpp"
#include "eitdiff/core/parallel.hpp"
#include "eitdiff/core/rng.hpp"
#include "eitdiff/diffusion/sampler.hpp"
#include "eitdiff/fem/mesh.hpp"
#include "eitdiff/inverse/preimage.hpp"
#include "eitdiff/metrics/metrics.hpp"
#include "eitdiff/models/train.hpp"
#include "eitdiff/phantom/dataset.hpp"
#include "eitdiff/phantom/noise.hpp"
#include "eitdiff/pipeline/config.hpp"
#include "eitdiff/pipeline/png.hpp"

// Each command reads its inputs from and writes its outputs under cfg.out.
// Outputs depend only on the config and seed (never on --threads), except
// for bench timings and the PNG grid.

namespace eitdiff::pipeline {

inline constexpr std::uint64_t sample_seed_salt = 0xd1ff'5a3dULL;
inline constexpr std::uint64_t noise_seed_salt = 0x0b5e'7715ULL;

namespace detail {

inline std::ostream& null_log() {
    static std::ofstream sink;
    return sink;
}

// The dataset on disk must have been generated from the same settings.
inline Dataset open_dataset(const RunConfig& cfg) {
    const auto dir = cfg.dataset_dir();
    if (!std::filesystem::exists(dir / "manifest.json"))
        throw IoError("no dataset at " + dir.string() + " (run the dataset command first)");
    Dataset ds = load_dataset(dir);
    if (ds.manifest.at("config") != dataset_config_json(cfg.dataset))
        throw ConfigError("config: the dataset in " + dir.string() + " was generated with different dataset settings");
    return ds;
}

inline std::vector<std::size_t> select_records(const RunConfig& cfg, std::size_t total) {
    if (!cfg.reconstruct.records.empty()) return cfg.reconstruct.records;
    const std::size_t n = std::min<std::size_t>(total, static_cast<std::size_t>(cfg.reconstruct.count));
    std::vector<std::size_t> idx;
    for (std::size_t k = 0; k < n; ++k) idx.push_back(k * total / n);
    return idx;
}

inline Preimager make_preimager(const DatasetConfig& d) {
    PreimageOptions o = d.preimage;
    o.grid = d.grid;
    o.background_sigma = d.background_sigma;
    return Preimager(build_disk_mesh(1.0, d.coarse_refinement, 16, d.electrode_coverage), StimulationProtocol::adjacent(), o);
}

struct Models {
    ScoreModel score;
    FvcnModel fvcn;
};

inline Models load_models(const RunConfig& cfg) {
    Models m{load_score_model(cfg.score_dir()), load_fvcn_model(cfg.fvcn_dir())};
    if (m.score.net->arch().image != cfg.dataset.grid) throw ConfigError("config: score checkpoint grid differs from dataset.grid");
    return m;
}

// Runs fn(models, k) for k in [0, n); every worker owns its own copy of the
// networks because forward passes cache activations.
template <typename Fn>
void for_each_with_models(const RunConfig& cfg, std::size_t n, Fn fn) {
    const auto workers = static_cast<std::size_t>(std::max(1, std::min<int>(cfg.threads, static_cast<int>(n))));
    parallel_for(0, workers, static_cast<int>(workers), [&](std::size_t w) {
        Models m = load_models(cfg);
        for (std::size_t k = w; k < n; k += workers) fn(m, k);
    });
}

inline SamplerOptions method_options(const RunConfig& cfg, const std::string& method, std::size_t record) {
    SamplerOptions o = cfg.sample;
    o.seed = record_seed(cfg.seed ^ sample_seed_salt, record);
    o.warn = {}; // clips and VC failures are counted in the reconstruction manifest
    if (method == "cdm") o.vc_mode = VcMode::off;
    else if (method == "vc_after") o.vc_mode = VcMode::after;
    else if (method == "cdmvc") o.vc_mode = VcMode::during;
    else throw ContractError("method_options: '" + method + "' is not a sampling method");
    return o;
}

inline PixelImage run_method(Models& m, const RunConfig& cfg, const std::string& method, std::size_t record,
                             const PixelImage& initial, const MeasurementFrame& v, SampleStats* stats = nullptr) {
    if (method == "initial") return initial;
    return sample(initial, v, m.score, &m.fvcn, method_options(cfg, method, record), stats);
}

inline nlohmann::json stats_json(const SampleStats& s) {
    return {{"score_evals", s.score_evals},         {"triggered", s.triggered}, {"fvcn_grad_passes", s.fvcn_grad_passes},
            {"fvcn_eval_passes", s.fvcn_eval_passes}, {"clipped", s.clipped},   {"vc_failures", s.vc_failures}};
}

inline void log_line(std::ostream& log, const std::string& msg) { log << msg << std::endl; }

} // namespace detail

inline nlohmann::json cmd_mesh(const RunConfig& cfg, std::ostream& log = detail::null_log()) {
    const auto& mc = cfg.mesh;
    const Mesh mesh = build_disk_mesh(mc.radius, mc.refinement, mc.electrodes, mc.coverage);
    save_mesh(mesh, cfg.mesh_dir());
    const double analytic = std::numbers::pi * mc.radius * mc.radius;
    const long euler = static_cast<long>(mesh.nodes.size()) - static_cast<long>(mesh.edge_count()) +
                       static_cast<long>(mesh.elements.size());
    const nlohmann::json summary = {{"node_count", mesh.nodes.size()},
                                    {"element_count", mesh.element_count()},
                                    {"electrode_count", mesh.electrodes.size()},
                                    {"total_area", mesh.total_area()},
                                    {"analytic_area", analytic},
                                    {"area_rel_error", std::abs(mesh.total_area() - analytic) / analytic},
                                    {"euler_characteristic", euler}};
    io::write_json(cfg.mesh_dir() / "summary.json", summary);
    detail::log_line(log, "mesh: " + std::to_string(mesh.element_count()) + " elements, " +
                              std::to_string(mesh.electrodes.size()) + " electrodes -> " + cfg.mesh_dir().string());
    return summary;
}

// Generates the corpus, then re-solves the forward problem for a few records
// and compares against the stored voltages.
inline nlohmann::json cmd_dataset(const RunConfig& cfg, std::ostream& log = detail::null_log()) {
    const auto dir = cfg.dataset_dir();
    auto manifest = generate_dataset(cfg.dataset, dir, [&](std::size_t done, std::size_t total) {
        detail::log_line(log, "dataset: " + std::to_string(done) + "/" + std::to_string(total));
    });

    const RecordFactory factory(cfg.dataset);
    const Dataset ds = load_dataset(dir);
    nlohmann::json checks = nlohmann::json::array();
    double worst = 0.0;
    const std::size_t n = ds.size(), probes = std::min<std::size_t>(n, 3);
    for (std::size_t k = 0; k < probes; ++k) {
        const std::size_t i = k * n / probes;
        const auto v = factory.voltage_of(ds.phantom(i));
        const auto stored = ds.voltage_of(i);
        double num = 0.0, den = 0.0;
        for (std::size_t j = 0; j < stored.size(); ++j) {
            num = std::max(num, std::abs(v.values[j] - static_cast<double>(stored[j])));
            den = std::max(den, std::abs(v.values[j]));
        }
        const double rel = den > 0.0 ? num / den : num;
        worst = std::max(worst, rel);
        checks.push_back({{"record", i}, {"max_rel_error", rel}});
    }
    const nlohmann::json verify = {{"records", checks}, {"max_rel_error", worst}};
    io::write_json(dir / "verify.json", verify);
    if (!(worst < 1e-5)) throw NumericalError("dataset: stored voltages disagree with a forward re-solve (rel " + std::to_string(worst) + ")");
    detail::log_line(log, "dataset: " + std::to_string(n) + " records -> " + dir.string());
    return {{"records", n}, {"verify", verify}};
}

inline nlohmann::json cmd_train_score(const RunConfig& cfg, std::ostream& log = detail::null_log()) {
    const Dataset ds = detail::open_dataset(cfg);
    ScoreModel m;
    m.norm = norm_from_dataset(ds);
    m.schedule_s = cfg.score.s;
    m.schedule = cosine_schedule(cfg.score.T, cfg.score.s);
    m.net = std::make_unique<ScoreNet>(cfg.score.arch);
    Rng init = make_rng(cfg.score.train.seed ^ 0x1417ULL);
    m.net->init(init);
    TrainOptions o = cfg.score.train;
    o.progress = [&](int step, double loss, double eval) {
        std::ostringstream os;
        os << "train-score: step " << step << " loss " << loss << " eval " << eval;
        detail::log_line(log, os.str());
    };
    const auto rep = train_score(m, ds, o);
    save_score_model(cfg.score_dir(), m, &rep, {{"train_options", to_json(cfg.score.train)}});
    return to_json(rep);
}

inline nlohmann::json cmd_train_fvcn(const RunConfig& cfg, std::ostream& log = detail::null_log()) {
    const Dataset ds = detail::open_dataset(cfg);
    FvcnModel m;
    m.norm = norm_from_dataset(ds);
    FvcnArch arch = cfg.fvcn.arch;
    arch.outputs = static_cast<int>(ds.measurements);
    m.net = std::make_unique<Fvcn>(arch);
    Rng init = make_rng(cfg.fvcn.train.seed ^ 0x1417ULL);
    m.net->init(init);
    TrainOptions o = cfg.fvcn.train;
    o.progress = [&](int step, double loss, double eval) {
        std::ostringstream os;
        os << "train-fvcn: step " << step << " loss " << loss << " val " << eval;
        detail::log_line(log, os.str());
    };
    const auto rep = train_fvcn(m, ds, o);
    save_fvcn_model(cfg.fvcn_dir(), m, &rep, {{"train_options", to_json(cfg.fvcn.train)}});
    return to_json(rep);
}

// Writes <method>.f32 (records x grid x grid, in manifest order),
// manifest.json and, when enabled, grid.png and per-step CSV logs.
inline nlohmann::json cmd_reconstruct(const RunConfig& cfg, std::ostream& log = detail::null_log()) {
    const Dataset ds = detail::open_dataset(cfg);
    const auto records = detail::select_records(cfg, ds.size());
    const auto& methods = cfg.reconstruct.methods;
    const auto dir = cfg.reconstruct_dir();
    std::filesystem::create_directories(dir);
    if (cfg.reconstruct.step_log) std::filesystem::create_directories(dir / "steps");

    std::vector<std::vector<PixelImage>> out(methods.size(), std::vector<PixelImage>(records.size()));
    std::vector<nlohmann::json> stats(records.size(), nlohmann::json::object());
    detail::for_each_with_models(cfg, records.size(), [&](detail::Models& m, std::size_t k) {
        const std::size_t i = records[k];
        const auto initial = ds.initial_image(i);
        const auto v = ds.voltage_frame(i);
        for (std::size_t q = 0; q < methods.size(); ++q) {
            SampleStats st;
            out[q][k] = detail::run_method(m, cfg, methods[q], i, initial, v, &st);
            if (methods[q] != "initial") {
                stats[k][methods[q]] = detail::stats_json(st);
                if (cfg.reconstruct.step_log)
                    write_step_log(dir / "steps" / (std::to_string(i) + "_" + methods[q] + ".csv"), st);
            }
        }
    });

    for (std::size_t q = 0; q < methods.size(); ++q) {
        std::vector<double> flat;
        for (const auto& img : out[q]) flat.insert(flat.end(), img.values.begin(), img.values.end());
        io::write_raw<float>(dir / (methods[q] + ".f32"), io::to_f32(flat));
    }
    nlohmann::json recs = nlohmann::json::array();
    for (std::size_t k = 0; k < records.size(); ++k)
        recs.push_back({{"index", records[k]},
                        {"setting", ds.setting(records[k])},
                        {"sample_seed", record_seed(cfg.seed ^ sample_seed_salt, records[k])},
                        {"stats", stats[k]}});
    nlohmann::json files = nlohmann::json::object();
    for (const auto& m : methods) files[m] = m + ".f32";
    const nlohmann::json manifest = {{"format", "eitdiff-reconstruction"}, {"grid", ds.grid},  {"methods", methods},
                                     {"files", files},                     {"records", recs}, {"sampler", to_json(cfg.sample)}};
    io::write_json(dir / "manifest.json", manifest);

    if (cfg.reconstruct.png) {
        auto find = [&](const std::string& name) {
            const auto it = std::find(methods.begin(), methods.end(), name);
            if (it == methods.end()) throw ConfigError("config: reconstruct.png needs method '" + name + "'");
            return static_cast<std::size_t>(it - methods.begin());
        };
        const std::size_t qi = find("initial"), qc = find("cdm"), qv = find("cdmvc");
        std::vector<PixelImage> truths;
        for (auto i : records) truths.push_back(ds.truth_image(i));
        std::vector<std::vector<const PixelImage*>> rows;
        for (std::size_t k = 0; k < records.size(); ++k) rows.push_back({&truths[k], &out[qi][k], &out[qc][k], &out[qv][k]});
        png::write(dir / "grid.png", png::image_grid(rows));
    }
    detail::log_line(log, "reconstruct: " + std::to_string(records.size()) + " records x " + std::to_string(methods.size()) +
                              " methods -> " + dir.string());
    return manifest;
}

struct Reconstruction {
    nlohmann::json manifest;
    std::vector<std::size_t> records;
    std::map<std::string, std::vector<PixelImage>> images;
};

inline Reconstruction load_reconstruction(const std::filesystem::path& dir) {
    Reconstruction r;
    r.manifest = io::read_json(dir / "manifest.json");
    if (r.manifest.value("format", "") != "eitdiff-reconstruction") throw IoError(dir.string() + ": not a reconstruction");
    const int g = r.manifest.at("grid").get<int>();
    for (const auto& rec : r.manifest.at("records")) r.records.push_back(rec.at("index").get<std::size_t>());
    const std::size_t px = static_cast<std::size_t>(g) * g;
    for (const auto& m : r.manifest.at("methods")) {
        const auto name = m.get<std::string>();
        const auto raw = io::read_raw<float>(dir / r.manifest.at("files").at(name).get<std::string>());
        if (raw.size() != px * r.records.size()) throw IoError(dir.string() + ": " + name + " has the wrong size");
        auto& imgs = r.images[name];
        for (std::size_t k = 0; k < r.records.size(); ++k) {
            PixelImage img(g);
            std::copy(raw.begin() + static_cast<std::ptrdiff_t>(k * px), raw.begin() + static_cast<std::ptrdiff_t>((k + 1) * px),
                      img.values.begin());
            imgs.push_back(std::move(img));
        }
    }
    return r;
}

// Metrics for the stored reconstructions (metrics.csv, one row per record
// and method), plus the noise sweep: each level adds white noise to the
// stored frame, re-runs pre-imaging and the selected methods, and writes
// noise_<db>dB.csv. Realized SNRs go to noise_snr.csv.
inline nlohmann::json cmd_evaluate(const RunConfig& cfg, std::ostream& log = detail::null_log()) {
    const Dataset ds = detail::open_dataset(cfg);
    if (!std::filesystem::exists(cfg.reconstruct_dir() / "manifest.json"))
        throw IoError("no reconstructions at " + cfg.reconstruct_dir().string() + " (run the reconstruct command first)");
    const Reconstruction rec = load_reconstruction(cfg.reconstruct_dir());
    const auto dir = cfg.evaluate_dir();
    std::filesystem::create_directories(dir);
    const double pmax = cfg.evaluate.psnr_max;

    std::vector<MetricRow> rows;
    nlohmann::json summary = {{"records", rec.records.size()}, {"noiseless", nlohmann::json::object()}};
    for (const auto& method : rec.manifest.at("methods")) {
        const auto name = method.get<std::string>();
        std::vector<MetricRow> part;
        for (std::size_t k = 0; k < rec.records.size(); ++k) {
            const std::size_t i = rec.records[k];
            MetricRow r = evaluate_image(rec.images.at(name)[k], ds.truth_image(i), pmax);
            r.record = i;
            r.setting = ds.setting(i);
            r.method = name;
            part.push_back(r);
        }
        summary["noiseless"][name] = to_json(aggregate(part));
        rows.insert(rows.end(), part.begin(), part.end());
    }
    write_metric_csv(dir / "metrics.csv", rows);
    detail::log_line(log, "evaluate: " + std::to_string(rows.size()) + " rows -> " + (dir / "metrics.csv").string());

    if (cfg.evaluate.noise_sweep) {
        const Preimager pre = detail::make_preimager(cfg.dataset);
        const std::size_t n = std::min<std::size_t>(rec.records.size(), static_cast<std::size_t>(cfg.evaluate.noise_records));
        const auto& levels = cfg.evaluate.noise_db;
        const auto& methods = cfg.evaluate.noise_methods;
        const bool needs_models = std::any_of(methods.begin(), methods.end(), [](const auto& m) { return m != "initial"; });
        std::vector<std::vector<MetricRow>> table(levels.size() * n);
        std::vector<double> realized(levels.size() * n);
        auto job = [&](detail::Models* m, std::size_t j) {
            const std::size_t l = j / n, k = j % n, i = rec.records[k];
            Rng rng = make_rng(record_seed(cfg.seed ^ noise_seed_salt ^ (static_cast<std::uint64_t>(l) << 40), i));
            const auto clean = ds.voltage_frame(i);
            const auto noisy = add_noise_snr(clean, levels[l], rng);
            realized[j] = measure_snr(clean, noisy);
            const PixelImage initial = pre(noisy);
            const auto truth = ds.truth_image(i);
            for (const auto& method : methods) {
                const PixelImage img = method == "initial" ? initial : detail::run_method(*m, cfg, method, i, initial, noisy);
                MetricRow r = evaluate_image(img, truth, pmax);
                r.record = i;
                r.setting = ds.setting(i);
                r.method = method;
                r.noise_db = levels[l];
                table[j].push_back(r);
            }
        };
        if (needs_models)
            detail::for_each_with_models(cfg, table.size(), [&](detail::Models& m, std::size_t j) { job(&m, j); });
        else
            parallel_for(0, table.size(), cfg.threads, [&](std::size_t j) { job(nullptr, j); });

        std::ofstream snr(dir / "noise_snr.csv", std::ios::trunc);
        if (!snr) throw IoError("cannot write noise_snr.csv");
        snr << "target_db,record,realized_db\n" << std::setprecision(10);
        nlohmann::json sweep = nlohmann::json::array();
        for (std::size_t l = 0; l < levels.size(); ++l) {
            std::vector<MetricRow> level_rows;
            double mean_snr = 0.0;
            for (std::size_t k = 0; k < n; ++k) {
                const std::size_t j = l * n + k;
                level_rows.insert(level_rows.end(), table[j].begin(), table[j].end());
                mean_snr += realized[j] / static_cast<double>(n);
                snr << format_metric(levels[l]) << ',' << rec.records[k] << ',' << format_metric(realized[j]) << '\n';
            }
            std::ostringstream name;
            name << "noise_" << levels[l] << "dB.csv";
            write_metric_csv(dir / name.str(), level_rows);
            nlohmann::json agg = nlohmann::json::object();
            for (const auto& method : methods) {
                std::vector<MetricRow> part;
                for (const auto& r : level_rows)
                    if (r.method == method) part.push_back(r);
                agg[method] = to_json(aggregate(part));
            }
            sweep.push_back({{"target_db", levels[l]}, {"realized_db_mean", mean_snr}, {"table", name.str()}, {"methods", agg}});
            detail::log_line(log, "evaluate: noise " + format_metric(levels[l]) + " dB -> " + (dir / name.str()).string());
        }
        summary["noise_sweep"] = sweep;
    }
    io::write_json(dir / "summary.json", summary);
    return summary;
}

// Per-stage wall time for the full CDMVC path on a few records:
// pre-imaging from the stored frame, DDIM sampling, and VC refinement
// (sampling_s excludes the time spent in VC).
inline nlohmann::json cmd_bench(const RunConfig& cfg, std::ostream& log = detail::null_log()) {
    const Dataset ds = detail::open_dataset(cfg);
    RunConfig one = cfg;
    one.reconstruct.records.clear();
    one.reconstruct.count = cfg.bench.records;
    const auto records = detail::select_records(one, ds.size());
    const Preimager pre = detail::make_preimager(cfg.dataset);
    detail::Models m = detail::load_models(cfg);
    const auto dir = cfg.bench_dir();
    std::filesystem::create_directories(dir);

    std::ofstream csv(dir / "timing.csv", std::ios::trunc);
    if (!csv) throw IoError("cannot write timing.csv");
    csv << "record,repeat,preimage_s,sampling_s,vc_s,total_s\n" << std::setprecision(6);
    using clock = std::chrono::steady_clock;
    double sum[3] = {0, 0, 0}, lo[3], hi[3];
    std::fill(lo, lo + 3, std::numeric_limits<double>::infinity());
    std::fill(hi, hi + 3, 0.0);
    int runs = 0;
    for (int rep = 0; rep < cfg.bench.repeats; ++rep)
        for (auto i : records) {
            const auto v = ds.voltage_frame(i);
            const auto t0 = clock::now();
            const PixelImage initial = pre(v);
            const auto t1 = clock::now();
            SampleStats st;
            sample(initial, v, m.score, &m.fvcn, detail::method_options(cfg, "cdmvc", i), &st);
            const auto t2 = clock::now();
            const double stage[3] = {std::chrono::duration<double>(t1 - t0).count(),
                                     std::chrono::duration<double>(t2 - t1).count() - st.vc_seconds, st.vc_seconds};
            for (int s = 0; s < 3; ++s) {
                sum[s] += stage[s];
                lo[s] = std::min(lo[s], stage[s]);
                hi[s] = std::max(hi[s], stage[s]);
            }
            ++runs;
            csv << i << ',' << rep << ',' << stage[0] << ',' << stage[1] << ',' << stage[2] << ','
                << stage[0] + stage[1] + stage[2] << '\n';
        }
    const char* names[3] = {"preimage", "sampling", "vc"};
    nlohmann::json summary = {{"runs", runs}, {"records", records}, {"repeats", cfg.bench.repeats}};
    for (int s = 0; s < 3; ++s)
        summary[names[s]] = {{"mean_s", sum[s] / runs}, {"min_s", lo[s]}, {"max_s", hi[s]}};
    summary["total_mean_s"] = (sum[0] + sum[1] + sum[2]) / runs;
    io::write_json(dir / "summary.json", summary);
    detail::log_line(log, "bench: " + std::to_string(runs) + " runs -> " + (dir / "timing.csv").string());
    return summary;
}

} // namespace eitdiff::pipeline
