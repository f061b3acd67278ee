#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "eitdiff/core/binary_io.hpp"
#include "eitdiff/core/error.hpp"
#include "eitdiff/diffusion/sampler.hpp"
#include "eitdiff/models/fvcn.hpp"
#include "eitdiff/models/scorenet.hpp"
#include "eitdiff/models/train.hpp"
#include "eitdiff/phantom/dataset.hpp"

namespace eitdiff::pipeline {

struct MeshSection {
    double radius = 1.0;
    int refinement = 3;
    int electrodes = 16;
    double coverage = 0.5;
};

struct ScoreSection {
    ScoreNetArch arch{.channels = {16, 32}};
    TrainOptions train{.epochs = 1000, .max_steps = 3000, .lr = 2e-3, .eval_every = 250};
    int T = 1000;
    double s = 0.008;
};

struct FvcnSection {
    FvcnArch arch;
    TrainOptions train{.epochs = 1000, .max_steps = 3000, .lr = 1e-3, .eval_every = 100, .patience = 1000};
};

inline const std::vector<std::string>& all_methods() {
    static const std::vector<std::string> m{"initial", "cdm", "vc_after", "cdmvc"};
    return m;
}

struct ReconstructSection {
    std::vector<std::size_t> records; // explicit indices; empty: `count` evenly spaced records
    int count = 8;
    std::vector<std::string> methods = all_methods();
    bool png = true;
    bool step_log = false;
};

struct EvaluateSection {
    bool noise_sweep = true;
    std::vector<double> noise_db{50, 40, 30, 20, 10, 5};
    int noise_records = 4; // first N reconstructed records
    std::vector<std::string> noise_methods{"initial", "cdmvc"};
    double psnr_max = default_psnr_max;
};

struct BenchSection {
    int records = 3;
    int repeats = 3;
};

struct RunConfig {
    std::uint64_t seed = 0;
    int threads = 1;
    std::filesystem::path out = "run";
    MeshSection mesh;
    DatasetConfig dataset{.per_setting = 16, .grid = 32};
    ScoreSection score;
    FvcnSection fvcn;
    SamplerOptions sample;
    ReconstructSection reconstruct;
    EvaluateSection evaluate;
    BenchSection bench;

    std::filesystem::path mesh_dir() const { return out / "mesh"; }
    std::filesystem::path dataset_dir() const { return out / "dataset"; }
    std::filesystem::path score_dir() const { return out / "score"; }
    std::filesystem::path fvcn_dir() const { return out / "fvcn"; }
    std::filesystem::path reconstruct_dir() const { return out / "reconstruct"; }
    std::filesystem::path evaluate_dir() const { return out / "evaluate"; }
    std::filesystem::path bench_dir() const { return out / "bench"; }
};

namespace detail {

// Reads one JSON object, remembering which keys were consumed so that
// anything left over can be reported as unknown.
class Reader {
public:
    Reader(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(where() + "expected an object");
    }

    bool has(const std::string& key) const { return j_.contains(key); }

    template <typename T>
    void read(const std::string& key, T& dst) {
        if (!j_.contains(key)) return;
        seen_.insert(key);
        const auto& v = j_.at(key);
        try {
            if constexpr (std::is_same_v<T, bool>) {
                if (!v.is_boolean()) throw ConfigError("expected a boolean");
            } else if constexpr (std::is_integral_v<T>) {
                if (!v.is_number_integer()) throw ConfigError("expected an integer");
                if constexpr (std::is_unsigned_v<T>)
                    if (!v.is_number_unsigned() && v.get<long long>() < 0) throw ConfigError("expected a non-negative integer");
            } else if constexpr (std::is_floating_point_v<T>) {
                if (!v.is_number()) throw ConfigError("expected a number");
            } else if constexpr (std::is_same_v<T, std::string>) {
                if (!v.is_string()) throw ConfigError("expected a string");
            }
            dst = v.get<T>();
        } catch (const ConfigError& e) {
            throw ConfigError(where(key) + e.what());
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(where(key) + e.what());
        }
    }

    Reader child(const std::string& key) {
        seen_.insert(key);
        return Reader(j_.at(key), path_.empty() ? key : path_ + "." + key);
    }

    const nlohmann::json& raw(const std::string& key) {
        seen_.insert(key);
        return j_.at(key);
    }

    void finish() const {
        for (const auto& [k, v] : j_.items())
            if (!seen_.count(k)) throw ConfigError(where(k) + "unknown key");
    }

    std::string where(const std::string& key = "") const {
        std::string p = path_;
        if (!key.empty()) p = p.empty() ? key : p + "." + key;
        return p.empty() ? "config: " : "config: " + p + ": ";
    }

private:
    const nlohmann::json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

inline void check(bool ok, const Reader& r, const std::string& key, const std::string& msg) {
    if (!ok) throw ConfigError(r.where(key) + msg);
}

// train.seed falls back to the global seed (plus a per-network offset).
inline void read_train(Reader r, TrainOptions& t, bool fvcn, std::optional<std::uint64_t>& seed) {
    r.read("lr", t.lr);
    r.read("batch", t.batch);
    r.read("epochs", t.epochs);
    r.read("max_steps", t.max_steps);
    r.read("eval_every", t.eval_every);
    if (r.has("seed")) {
        std::uint64_t s = 0;
        r.read("seed", s);
        seed = s;
    }
    if (fvcn) {
        r.read("val_fraction", t.val_fraction);
        r.read("patience", t.patience);
    } else {
        r.read("eval_batch", t.eval_batch);
    }
    r.finish();
    check(t.lr > 0.0, r, "lr", "must be positive");
    check(t.batch >= 1, r, "batch", "must be >= 1");
    check(t.epochs >= 1, r, "epochs", "must be >= 1");
    check(t.max_steps >= 0, r, "max_steps", "must be >= 0");
    check(t.eval_every >= 1, r, "eval_every", "must be >= 1");
    check(t.eval_batch >= 1, r, "eval_batch", "must be >= 1");
    check(t.val_fraction >= 0.0 && t.val_fraction < 1.0, r, "val_fraction", "must be in [0, 1)");
    check(t.patience >= 1, r, "patience", "must be >= 1");
}

inline void read_levels(Reader& r, const std::vector<int>& channels) {
    if (!r.has("levels")) return;
    int levels = 0;
    r.read("levels", levels);
    check(levels == static_cast<int>(channels.size()), r, "levels", "must equal the number of channel entries");
}

inline void check_channels(const Reader& r, const std::vector<int>& ch) {
    check(!ch.empty(), r, "channels", "must not be empty");
    for (int c : ch) check(c >= 1, r, "channels", "entries must be >= 1");
}

inline std::vector<std::string> read_methods(Reader& r, const std::string& key, std::vector<std::string> dflt) {
    r.read(key, dflt);
    for (const auto& m : dflt)
        check(std::find(all_methods().begin(), all_methods().end(), m) != all_methods().end(), r, key,
              "unknown method '" + m + "' (initial, cdm, vc_after, cdmvc)");
    check(!dflt.empty(), r, key, "must not be empty");
    return dflt;
}

} // namespace detail

// Validates the whole document before anything runs. Omitted keys keep
// their defaults; unknown keys and out-of-range values raise ConfigError.
inline RunConfig parse_config(const nlohmann::json& doc) {
    RunConfig c;
    detail::Reader root(doc, "");
    root.read("seed", c.seed);
    root.read("threads", c.threads);
    std::string out = c.out.string();
    root.read("out", out);
    c.out = out;
    detail::check(c.threads >= 1, root, "threads", "must be >= 1");

    if (root.has("mesh")) {
        auto r = root.child("mesh");
        r.read("radius", c.mesh.radius);
        r.read("refinement", c.mesh.refinement);
        r.read("electrodes", c.mesh.electrodes);
        r.read("coverage", c.mesh.coverage);
        r.finish();
        detail::check(c.mesh.radius > 0.0, r, "radius", "must be positive");
        detail::check(c.mesh.refinement >= 1, r, "refinement", "must be >= 1");
        detail::check(c.mesh.electrodes >= 4, r, "electrodes", "must be >= 4");
        detail::check(c.mesh.coverage > 0.0 && c.mesh.coverage < 1.0, r, "coverage", "must be in (0, 1)");
    }

    auto& d = c.dataset;
    if (root.has("dataset")) {
        auto r = root.child("dataset");
        if (r.has("settings")) {
            const auto& s = r.raw("settings");
            if (s.is_string() && s.get<std::string>() == "all") {
                d.settings = standard_settings();
            } else if (s.is_array()) {
                d.settings.clear();
                for (const auto& name : s) {
                    if (!name.is_string()) throw ConfigError(r.where("settings") + "expected setting names");
                    try {
                        d.settings.push_back(setting_from_name(name.get<std::string>()));
                    } catch (const std::exception& e) {
                        throw ConfigError(r.where("settings") + e.what());
                    }
                }
            } else {
                throw ConfigError(r.where("settings") + "expected \"all\" or a list of setting names");
            }
        }
        r.read("per_setting", d.per_setting);
        r.read("fine_refinement", d.fine_refinement);
        r.read("coarse_refinement", d.coarse_refinement);
        r.read("electrode_coverage", d.electrode_coverage);
        r.read("grid", d.grid);
        r.read("background_sigma", d.background_sigma);
        r.read("inclusion_sigma", d.inclusion_sigma);
        if (r.has("preimage")) {
            auto p = r.child("preimage");
            p.read("lambda", d.preimage.lambda);
            p.read("contact_impedance", d.preimage.contact_impedance);
            p.read("clamp_admissible", d.preimage.clamp_admissible);
            p.read("beta_smooth", d.preimage.pdipm.beta_smooth);
            p.read("mu0", d.preimage.pdipm.mu0);
            p.read("mu_decay", d.preimage.pdipm.mu_decay);
            p.read("max_outer", d.preimage.pdipm.max_outer);
            p.read("tol", d.preimage.pdipm.tol);
            p.read("idw_neighbours", d.preimage.idw.neighbours);
            p.read("idw_power", d.preimage.idw.power);
            p.finish();
            detail::check(d.preimage.lambda > 0.0, p, "lambda", "must be positive");
            detail::check(d.preimage.contact_impedance > 0.0, p, "contact_impedance", "must be positive");
            detail::check(d.preimage.pdipm.beta_smooth > 0.0, p, "beta_smooth", "must be positive");
            detail::check(d.preimage.pdipm.mu0 > 0.0, p, "mu0", "must be positive");
            detail::check(d.preimage.pdipm.mu_decay > 0.0 && d.preimage.pdipm.mu_decay < 1.0, p, "mu_decay",
                          "must be in (0, 1)");
            detail::check(d.preimage.pdipm.max_outer >= 1, p, "max_outer", "must be >= 1");
            detail::check(d.preimage.pdipm.tol > 0.0, p, "tol", "must be positive");
            detail::check(d.preimage.idw.neighbours >= 1, p, "idw_neighbours", "must be >= 1");
            detail::check(d.preimage.idw.power > 0.0, p, "idw_power", "must be positive");
        }
        r.finish();
        detail::check(!d.settings.empty(), r, "settings", "must not be empty");
        detail::check(d.per_setting >= 1, r, "per_setting", "must be >= 1");
        detail::check(d.coarse_refinement >= 1, r, "coarse_refinement", "must be >= 1");
        detail::check(d.fine_refinement > d.coarse_refinement, r, "fine_refinement", "must exceed coarse_refinement");
        detail::check(d.electrode_coverage > 0.0 && d.electrode_coverage < 1.0, r, "electrode_coverage",
                      "must be in (0, 1)");
        detail::check(d.grid >= 8, r, "grid", "must be >= 8");
        detail::check(d.background_sigma > 0.0, r, "background_sigma", "must be positive");
        detail::check(d.inclusion_sigma > 0.0, r, "inclusion_sigma", "must be positive");
    }

    std::optional<std::uint64_t> score_seed, fvcn_seed;
    if (root.has("train_score")) {
        auto r = root.child("train_score");
        if (r.has("arch")) {
            auto a = r.child("arch");
            a.read("channels", c.score.arch.channels);
            detail::read_levels(a, c.score.arch.channels);
            a.read("res_blocks", c.score.arch.res_blocks);
            a.read("groups", c.score.arch.groups);
            a.read("time_dim", c.score.arch.time_dim);
            a.finish();
            detail::check_channels(a, c.score.arch.channels);
            detail::check(c.score.arch.res_blocks >= 1, a, "res_blocks", "must be >= 1");
            detail::check(c.score.arch.groups >= 1, a, "groups", "must be >= 1");
            for (int ch : c.score.arch.channels)
                detail::check(ch % std::min(c.score.arch.groups, ch) == 0, a, "groups", "must divide every channel count");
            detail::check(c.score.arch.time_dim >= 2 && c.score.arch.time_dim % 2 == 0, a, "time_dim",
                          "must be even and >= 2");
        }
        if (r.has("train")) detail::read_train(r.child("train"), c.score.train, false, score_seed);
        if (r.has("schedule")) {
            auto s = r.child("schedule");
            s.read("T", c.score.T);
            s.read("s", c.score.s);
            s.finish();
            detail::check(c.score.T >= 2, s, "T", "must be >= 2");
            detail::check(c.score.s > 0.0, s, "s", "must be positive");
        }
        r.finish();
    }
    if (root.has("train_fvcn")) {
        auto r = root.child("train_fvcn");
        if (r.has("arch")) {
            auto a = r.child("arch");
            a.read("channels", c.fvcn.arch.channels);
            detail::read_levels(a, c.fvcn.arch.channels);
            a.read("hidden", c.fvcn.arch.hidden);
            a.finish();
            detail::check_channels(a, c.fvcn.arch.channels);
            detail::check(c.fvcn.arch.hidden >= 1, a, "hidden", "must be >= 1");
        }
        if (r.has("train")) detail::read_train(r.child("train"), c.fvcn.train, true, fvcn_seed);
        r.finish();
    }
    c.score.train.seed = score_seed.value_or(c.seed ^ 0x5c0e'0000ULL);
    c.fvcn.train.seed = fvcn_seed.value_or(c.seed ^ 0xf7c0'0000ULL);
    c.score.arch.image = d.grid;
    c.fvcn.arch.image = d.grid;
    if (d.grid % (1 << (c.score.arch.channels.size() - 1)) != 0)
        throw ConfigError("config: dataset.grid must be divisible by 2^(train_score.arch.levels - 1)");

    auto& so = c.sample;
    if (root.has("sample")) {
        auto r = root.child("sample");
        r.read("ddim_steps", so.ddim_steps);
        std::string eta = to_string(so.eta), assign = to_string(so.vc_assign), trigger = to_string(so.vc_trigger);
        r.read("eta", eta);
        r.read("vc_assign", assign);
        r.read("vc_trigger", trigger);
        r.read("vc_interval", so.vc_interval);
        r.read("vc_iters", so.vc_iters);
        r.read("vc_lr", so.vc_lr);
        r.read("clip_x0", so.clip_x0);
        r.finish();
        try {
            so.eta = parse_eta_mode(eta);
            so.vc_assign = parse_vc_assign(assign);
            so.vc_trigger = parse_vc_trigger(trigger);
        } catch (const ConfigError& e) {
            throw ConfigError(r.where() + e.what());
        }
        detail::check(so.ddim_steps >= 1 && so.ddim_steps <= c.score.T, r, "ddim_steps", "must be in [1, T]");
        detail::check(so.vc_interval >= 1, r, "vc_interval", "must be >= 1");
        detail::check(so.vc_iters >= 0, r, "vc_iters", "must be >= 0");
        detail::check(so.vc_lr > 0.0, r, "vc_lr", "must be positive");
        detail::check(so.clip_x0 >= 0.0, r, "clip_x0", "must be >= 0");
    }

    if (root.has("reconstruct")) {
        auto r = root.child("reconstruct");
        r.read("records", c.reconstruct.records);
        r.read("count", c.reconstruct.count);
        c.reconstruct.methods = detail::read_methods(r, "methods", c.reconstruct.methods);
        r.read("png", c.reconstruct.png);
        r.read("step_log", c.reconstruct.step_log);
        r.finish();
        detail::check(c.reconstruct.count >= 1, r, "count", "must be >= 1");
        const std::size_t total = d.settings.size() * static_cast<std::size_t>(d.per_setting);
        for (auto i : c.reconstruct.records)
            detail::check(i < total, r, "records", "index " + std::to_string(i) + " exceeds the dataset size");
    }

    if (root.has("evaluate")) {
        auto r = root.child("evaluate");
        r.read("noise_sweep", c.evaluate.noise_sweep);
        r.read("noise_db", c.evaluate.noise_db);
        r.read("noise_records", c.evaluate.noise_records);
        c.evaluate.noise_methods = detail::read_methods(r, "noise_methods", c.evaluate.noise_methods);
        r.read("psnr_max", c.evaluate.psnr_max);
        r.finish();
        detail::check(c.evaluate.noise_records >= 1, r, "noise_records", "must be >= 1");
        detail::check(c.evaluate.psnr_max > 0.0, r, "psnr_max", "must be positive");
    }

    if (root.has("bench")) {
        auto r = root.child("bench");
        r.read("records", c.bench.records);
        r.read("repeats", c.bench.repeats);
        r.finish();
        detail::check(c.bench.records >= 1, r, "records", "must be >= 1");
        detail::check(c.bench.repeats >= 1, r, "repeats", "must be >= 1");
    }
    root.finish();

    d.seed = c.seed;
    d.threads = c.threads;
    return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path.string());
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("config: " + path.string() + ": " + e.what());
    }
    return parse_config(doc);
}

// Overrides from the command line, applied after parsing. The derived seeds
// follow a new global seed unless the file pinned them.
struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
    std::optional<std::filesystem::path> out;
};

inline RunConfig apply_overrides(const nlohmann::json& doc, const Overrides& o) {
    nlohmann::json d = doc.is_null() ? nlohmann::json::object() : doc;
    if (!d.is_object()) throw ConfigError("config: top level must be an object");
    if (o.seed) d["seed"] = *o.seed;
    if (o.threads) d["threads"] = *o.threads;
    if (o.out) d["out"] = o.out->string();
    return parse_config(d);
}

// Everything a command's outputs depend on, for manifests.
inline nlohmann::json to_json(const RunConfig& c) {
    nlohmann::json settings = nlohmann::json::array();
    for (const auto& s : c.dataset.settings) settings.push_back(s.name());
    return {{"seed", c.seed},
            {"mesh",
             {{"radius", c.mesh.radius},
              {"refinement", c.mesh.refinement},
              {"electrodes", c.mesh.electrodes},
              {"coverage", c.mesh.coverage}}},
            {"dataset", dataset_config_json(c.dataset)},
            {"train_score",
             {{"arch", to_json(c.score.arch)}, {"train", to_json(c.score.train)}, {"schedule", {{"T", c.score.T}, {"s", c.score.s}}}}},
            {"train_fvcn", {{"arch", to_json(c.fvcn.arch)}, {"train", to_json(c.fvcn.train)}}},
            {"sample", to_json(c.sample)}};
}

} // namespace eitdiff::pipeline
