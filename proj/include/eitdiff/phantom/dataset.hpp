#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "eitdiff/core/binary_io.hpp"
#include "eitdiff/core/error.hpp"
#include "eitdiff/core/parallel.hpp"
#include "eitdiff/core/rng.hpp"
#include "eitdiff/fem/forward.hpp"
#include "eitdiff/fem/mesh.hpp"
#include "eitdiff/inverse/preimage.hpp"
#include "eitdiff/phantom/raster.hpp"
#include "eitdiff/phantom/shapes.hpp"

namespace eitdiff {

inline constexpr int dataset_schema_version = 1;

struct DatasetConfig {
    std::vector<Setting> settings = standard_settings();
    int per_setting = 200;
    std::uint64_t seed = 0;
    int fine_refinement = 8;
    int coarse_refinement = 3;
    double electrode_coverage = 0.5;
    int grid = 64;
    double background_sigma = 0.6;
    double inclusion_sigma = 0.003;
    PreimageOptions preimage;
    int threads = 1;
};

struct DatasetRecord {
    std::size_t index = 0;
    std::uint64_t seed = 0;
    Setting setting;
    Phantom phantom;
    PixelImage sigma_true;
    PixelImage initial;
    MeasurementFrame voltage;
};

// Everything that is shared between records: meshes, the fine forward solver
// with its homogeneous frame, and the coarse pre-imager.
class RecordFactory {
public:
    explicit RecordFactory(const DatasetConfig& cfg)
        : cfg_(cfg), fine_(build_disk_mesh(1.0, cfg.fine_refinement, 16, cfg.electrode_coverage)),
          coarse_(build_disk_mesh(1.0, cfg.coarse_refinement, 16, cfg.electrode_coverage)),
          protocol_(StimulationProtocol::adjacent()),
          solver_(fine_, protocol_, cfg.preimage.contact_impedance),
          homogeneous_(solver_.forward(ConductivityField::uniform(fine_.element_count(), cfg.background_sigma))),
          preimager_(coarse_, protocol_, with_grid(cfg)) {
        require(cfg.per_setting >= 1, "dataset: per_setting must be >= 1");
        require(!cfg.settings.empty(), "dataset: no settings selected");
        require(cfg.fine_refinement > cfg.coarse_refinement, "dataset: the forward mesh must be finer than the inversion mesh");
    }

    std::size_t record_count() const { return cfg_.settings.size() * static_cast<std::size_t>(cfg_.per_setting); }
    const Mesh& fine_mesh() const { return fine_; }
    const Mesh& coarse_mesh() const { return coarse_; }
    const StimulationProtocol& protocol() const { return protocol_; }
    const Preimager& preimager() const { return preimager_; }
    const ForwardSolver& forward_solver() const { return solver_; }

    Setting setting_of(std::size_t index) const {
        return cfg_.settings[index / static_cast<std::size_t>(cfg_.per_setting)];
    }

    // Time-difference frame of a phantom against the homogeneous background.
    MeasurementFrame voltage_of(const Phantom& p) const {
        return time_difference(solver_.forward(phantom_to_field(p, fine_)), homogeneous_);
    }

    DatasetRecord make(std::size_t index) const {
        DatasetRecord rec;
        rec.index = index;
        rec.seed = record_seed(cfg_.seed, index);
        rec.setting = setting_of(index);
        Rng rng = make_rng(rec.seed);
        rec.phantom = sample_phantom(rec.setting, rng);
        rec.phantom.background_sigma = cfg_.background_sigma;
        rec.phantom.inclusion_sigma = cfg_.inclusion_sigma;
        rec.voltage = voltage_of(rec.phantom);
        rec.sigma_true = rasterize_truth(rec.phantom, cfg_.grid);
        rec.initial = preimager_(rec.voltage);
        return rec;
    }

private:
    static PreimageOptions with_grid(const DatasetConfig& cfg) {
        PreimageOptions o = cfg.preimage;
        o.grid = cfg.grid;
        o.background_sigma = cfg.background_sigma;
        return o;
    }

    DatasetConfig cfg_;
    Mesh fine_;
    Mesh coarse_;
    StimulationProtocol protocol_;
    ForwardSolver solver_;
    MeasurementFrame homogeneous_;
    Preimager preimager_;
};

inline nlohmann::json dataset_config_json(const DatasetConfig& cfg) {
    nlohmann::json settings = nlohmann::json::array();
    for (const auto& s : cfg.settings) settings.push_back(s.name());
    return {{"settings", settings},
            {"per_setting", cfg.per_setting},
            {"seed", cfg.seed},
            {"fine_refinement", cfg.fine_refinement},
            {"coarse_refinement", cfg.coarse_refinement},
            {"electrode_coverage", cfg.electrode_coverage},
            {"grid", cfg.grid},
            {"background_sigma", cfg.background_sigma},
            {"inclusion_sigma", cfg.inclusion_sigma},
            {"contact_impedance", cfg.preimage.contact_impedance},
            {"lambda", cfg.preimage.lambda},
            {"clamp_admissible", cfg.preimage.clamp_admissible}};
}

// Writes manifest.json, sigma_true.f32, initial.f32, voltage.f32 and
// phantoms.jsonl. Records are produced in blocks (parallel inside a block)
// and appended in index order, so the bytes do not depend on `threads`.
// If anything fails, the manifest is left with "complete": false and the
// number of records that reached disk.
inline nlohmann::json generate_dataset(const DatasetConfig& cfg, const std::filesystem::path& dir,
                                       const std::function<void(std::size_t, std::size_t)>& progress = {}) {
    const RecordFactory factory(cfg);
    const std::size_t total = factory.record_count();
    const std::size_t m = factory.protocol().measurement_count();
    std::filesystem::create_directories(dir);

    nlohmann::json manifest = {{"format", "eitdiff-dataset"},
                               {"schema_version", dataset_schema_version},
                               {"complete", false},
                               {"records", total},
                               {"records_written", 0},
                               {"grid", cfg.grid},
                               {"measurements", m},
                               {"base_seed", cfg.seed},
                               {"record_seed_rule", "base_seed xor record_index"},
                               {"config", dataset_config_json(cfg)},
                               {"files",
                                {{"sigma_true", "sigma_true.f32"},
                                 {"initial", "initial.f32"},
                                 {"voltage", "voltage.f32"},
                                 {"phantoms", "phantoms.jsonl"}}}};
    nlohmann::json partition = nlohmann::json::array();
    for (std::size_t s = 0; s < cfg.settings.size(); ++s)
        partition.push_back({{"setting", cfg.settings[s].name()},
                             {"first", s * static_cast<std::size_t>(cfg.per_setting)},
                             {"count", cfg.per_setting}});
    manifest["partition"] = partition;
    io::write_json(dir / "manifest.json", manifest);

    std::size_t written = 0;
    try {
        std::ofstream truth_out(dir / "sigma_true.f32", std::ios::binary | std::ios::trunc);
        std::ofstream init_out(dir / "initial.f32", std::ios::binary | std::ios::trunc);
        std::ofstream volt_out(dir / "voltage.f32", std::ios::binary | std::ios::trunc);
        std::ofstream meta_out(dir / "phantoms.jsonl", std::ios::trunc);
        if (!truth_out || !init_out || !volt_out || !meta_out) throw IoError("cannot create dataset files in " + dir.string());

        std::vector<double> sum(m, 0.0), sumsq(m, 0.0);
        const std::size_t block = 64;
        std::vector<DatasetRecord> batch;
        for (std::size_t start = 0; start < total; start += block) {
            const std::size_t stop = std::min(total, start + block);
            batch.assign(stop - start, {});
            parallel_for(start, stop, cfg.threads, [&](std::size_t i) { batch[i - start] = factory.make(i); });
            for (const auto& rec : batch) {
                io::append_raw<float>(truth_out, io::to_f32(rec.sigma_true.values));
                io::append_raw<float>(init_out, io::to_f32(rec.initial.values));
                const auto v32 = io::to_f32(rec.voltage.values);
                io::append_raw<float>(volt_out, v32);
                // statistics over the stored (float) values
                for (std::size_t k = 0; k < m; ++k) {
                    sum[k] += v32[k];
                    sumsq[k] += static_cast<double>(v32[k]) * v32[k];
                }
                nlohmann::json meta = {{"index", rec.index}, {"seed", rec.seed}, {"setting", rec.setting.name()},
                                       {"phantom", to_json(rec.phantom)}};
                meta_out << meta.dump() << '\n';
                if (!meta_out) throw IoError("write failed: phantoms.jsonl");
                ++written;
            }
            if (progress) progress(written, total);
        }
        truth_out.close();
        init_out.close();
        volt_out.close();
        meta_out.close();

        std::vector<double> mean(m), stdev(m);
        for (std::size_t k = 0; k < m; ++k) {
            mean[k] = sum[k] / static_cast<double>(total);
            const double var = std::max(0.0, sumsq[k] / static_cast<double>(total) - mean[k] * mean[k]);
            stdev[k] = std::max(std::sqrt(var), 1e-12);
        }
        manifest["normalization"] = {{"image_scale", cfg.background_sigma},
                                     {"voltage_mean", mean},
                                     {"voltage_std", stdev},
                                     {"truth_range", cfg.background_sigma - cfg.inclusion_sigma}};
        manifest["complete"] = true;
        manifest["records_written"] = written;
        io::write_json(dir / "manifest.json", manifest);
    } catch (const std::exception& e) {
        manifest["records_written"] = written;
        manifest["error"] = e.what();
        try {
            io::write_json(dir / "manifest.json", manifest);
        } catch (...) {
        }
        throw;
    }
    return manifest;
}

// A dataset loaded into memory (float storage, as on disk).
struct Dataset {
    nlohmann::json manifest;
    int grid = 64;
    std::size_t measurements = 208;
    std::vector<float> sigma_true;
    std::vector<float> initial;
    std::vector<float> voltage;
    std::vector<nlohmann::json> phantoms;

    std::size_t size() const { return phantoms.size(); }
    std::size_t pixels() const { return static_cast<std::size_t>(grid) * grid; }

    std::span<const float> truth_of(std::size_t i) const { return {sigma_true.data() + i * pixels(), pixels()}; }
    std::span<const float> initial_of(std::size_t i) const { return {initial.data() + i * pixels(), pixels()}; }
    std::span<const float> voltage_of(std::size_t i) const {
        return {voltage.data() + i * measurements, measurements};
    }

    PixelImage truth_image(std::size_t i) const { return to_image(truth_of(i)); }
    PixelImage initial_image(std::size_t i) const { return to_image(initial_of(i)); }
    MeasurementFrame voltage_frame(std::size_t i) const {
        const auto v = voltage_of(i);
        return {{v.begin(), v.end()}, FrameKind::time_difference};
    }
    Phantom phantom(std::size_t i) const { return phantom_from_json(phantoms[i].at("phantom")); }
    std::string setting(std::size_t i) const { return phantoms[i].at("setting").get<std::string>(); }

private:
    PixelImage to_image(std::span<const float> v) const {
        PixelImage img(grid);
        std::copy(v.begin(), v.end(), img.values.begin());
        return img;
    }
};

inline Dataset load_dataset(const std::filesystem::path& dir) {
    Dataset d;
    d.manifest = io::read_json(dir / "manifest.json");
    if (d.manifest.value("format", "") != "eitdiff-dataset") throw IoError(dir.string() + ": not a dataset directory");
    if (!d.manifest.value("complete", false)) throw IoError(dir.string() + ": dataset is incomplete (generation aborted)");
    d.grid = d.manifest.at("grid").get<int>();
    d.measurements = d.manifest.at("measurements").get<std::size_t>();
    const auto n = d.manifest.at("records").get<std::size_t>();
    d.sigma_true = io::read_raw<float>(dir / "sigma_true.f32");
    d.initial = io::read_raw<float>(dir / "initial.f32");
    d.voltage = io::read_raw<float>(dir / "voltage.f32");
    std::ifstream meta(dir / "phantoms.jsonl");
    for (std::string line; std::getline(meta, line);)
        if (!line.empty()) d.phantoms.push_back(nlohmann::json::parse(line));
    if (d.sigma_true.size() != n * d.pixels() || d.initial.size() != n * d.pixels() ||
        d.voltage.size() != n * d.measurements || d.phantoms.size() != n)
        throw IoError(dir.string() + ": file sizes do not match the manifest");
    return d;
}

} // namespace eitdiff
