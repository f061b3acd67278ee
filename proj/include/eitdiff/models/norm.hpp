#pragma once

#include <cmath>
#include <span>
#include <vector>

#include <json.hpp>

#include "eitdiff/core/error.hpp"

namespace eitdiff {

// Maps physical quantities to network units: images are divided by
// image_scale (so an inclusion sits near -1), voltages are standardized per
// measurement with corpus statistics.
struct NormStats {
    double image_scale = 0.6;
    std::vector<double> voltage_mean;
    std::vector<double> voltage_std;

    void validate() const {
        require(image_scale > 0.0, "norm stats: image scale must be positive");
        require(voltage_mean.size() == voltage_std.size(), "norm stats: mean/std length mismatch");
        for (double s : voltage_std) require(s > 0.0, "norm stats: voltage std entries must be positive");
    }

    std::vector<float> normalize_voltage(std::span<const double> v) const {
        require(v.size() == voltage_mean.size(), "norm stats: voltage length mismatch");
        std::vector<float> out(v.size());
        for (std::size_t k = 0; k < v.size(); ++k)
            out[k] = static_cast<float>((v[k] - voltage_mean[k]) / voltage_std[k]);
        return out;
    }

    std::vector<float> normalize_voltage(std::span<const float> v) const {
        std::vector<double> d(v.begin(), v.end());
        return normalize_voltage(std::span<const double>(d));
    }

    std::vector<double> denormalize_voltage(std::span<const float> v) const {
        require(v.size() == voltage_mean.size(), "norm stats: voltage length mismatch");
        std::vector<double> out(v.size());
        for (std::size_t k = 0; k < v.size(); ++k) out[k] = v[k] * voltage_std[k] + voltage_mean[k];
        return out;
    }
};

inline nlohmann::json to_json(const NormStats& s) {
    return {{"image_scale", s.image_scale}, {"voltage_mean", s.voltage_mean}, {"voltage_std", s.voltage_std}};
}

inline NormStats norm_from_json(const nlohmann::json& j) {
    NormStats s;
    s.image_scale = j.at("image_scale").get<double>();
    s.voltage_mean = j.at("voltage_mean").get<std::vector<double>>();
    s.voltage_std = j.at("voltage_std").get<std::vector<double>>();
    s.validate();
    return s;
}

} // namespace eitdiff
