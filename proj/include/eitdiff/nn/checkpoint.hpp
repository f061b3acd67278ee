#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "eitdiff/core/binary_io.hpp"
#include "eitdiff/core/error.hpp"
#include "eitdiff/nn/adam.hpp"
#include "eitdiff/nn/tensor.hpp"

namespace eitdiff::nn {

inline constexpr int checkpoint_version = 1;

// manifest.json lists parameter names and shapes in storage order;
// params.f32 is the concatenation of all values; optimizer.f32 (optional)
// holds the Adam moments. `meta` carries the architecture, normalization
// statistics and anything else the owning model wants to keep.
inline void save_checkpoint(const std::filesystem::path& dir, const std::string& kind, const ParamList<float>& params,
                            const nlohmann::json& meta, const Adam<float>* optimizer = nullptr) {
    std::filesystem::create_directories(dir);
    nlohmann::json entries = nlohmann::json::array();
    std::vector<float> flat;
    for (const auto* p : params) {
        entries.push_back({{"name", p->name}, {"shape", p->value.shape}, {"offset", flat.size()}});
        flat.insert(flat.end(), p->value.data.begin(), p->value.data.end());
    }
    io::write_raw<float>(dir / "params.f32", flat);
    nlohmann::json manifest = {{"format", "eitdiff-checkpoint"},
                               {"version", checkpoint_version},
                               {"kind", kind},
                               {"params", entries},
                               {"param_count", flat.size()},
                               {"optimizer", optimizer != nullptr},
                               {"meta", meta}};
    if (optimizer) {
        io::write_raw<float>(dir / "optimizer.f32", optimizer->state());
        manifest["optimizer_step"] = optimizer->step_count();
    } else {
        std::filesystem::remove(dir / "optimizer.f32");
    }
    io::write_json(dir / "manifest.json", manifest);
}

inline nlohmann::json read_checkpoint_manifest(const std::filesystem::path& dir, const std::string& kind) {
    auto manifest = io::read_json(dir / "manifest.json");
    if (manifest.value("format", "") != "eitdiff-checkpoint")
        throw IoError(dir.string() + ": not a checkpoint directory");
    if (manifest.value("kind", "") != kind)
        throw IoError(dir.string() + ": checkpoint holds a " + manifest.value("kind", "?") + ", expected " + kind);
    return manifest;
}

// Fills the values of `params` (which must match names and shapes in order).
inline void load_params(const std::filesystem::path& dir, const nlohmann::json& manifest, const ParamList<float>& params,
                        Adam<float>* optimizer = nullptr) {
    const auto& entries = manifest.at("params");
    if (entries.size() != params.size())
        throw IoError(dir.string() + ": checkpoint has " + std::to_string(entries.size()) + " tensors, model has " +
                      std::to_string(params.size()));
    const auto flat = io::read_raw<float>(dir / "params.f32");
    if (flat.size() != manifest.at("param_count").get<std::size_t>())
        throw IoError(dir.string() + ": params.f32 size does not match the manifest");
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& p = *params[k];
        const auto name = entries[k].at("name").get<std::string>();
        const auto shape = entries[k].at("shape").get<std::vector<int>>();
        if (name != p.name || shape != p.value.shape)
            throw IoError(dir.string() + ": tensor " + std::to_string(k) + " is " + name + shape_string(shape) +
                          ", model expects " + p.name + shape_string(p.value.shape));
        const auto off = entries[k].at("offset").get<std::size_t>();
        std::copy(flat.begin() + static_cast<std::ptrdiff_t>(off),
                  flat.begin() + static_cast<std::ptrdiff_t>(off + p.value.numel()), p.value.data.begin());
    }
    if (optimizer && manifest.value("optimizer", false))
        optimizer->load_state(io::read_raw<float>(dir / "optimizer.f32"), manifest.at("optimizer_step").get<long>());
}

} // namespace eitdiff::nn
