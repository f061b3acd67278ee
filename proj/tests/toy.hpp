#pragma once

#include <cmath>

#include "eitdiff/core/rng.hpp"
#include "eitdiff/phantom/dataset.hpp"

// Small in-memory corpora for training and sampling tests: disks on a coarse
// grid with a voltage-like vector that depends smoothly on the image.
namespace toy {

inline eitdiff::Dataset make_dataset(int records, int grid, int measurements, std::uint64_t seed,
                                     bool identical = false) {
    using namespace eitdiff;
    Dataset ds;
    ds.grid = grid;
    ds.measurements = static_cast<std::size_t>(measurements);
    Rng rng = make_rng(seed);
    const std::size_t px = ds.pixels();
    std::vector<double> sum(ds.measurements, 0.0), sumsq(ds.measurements, 0.0);
    double cx = 0.3, cy = -0.2, rad = 0.35;
    for (int r = 0; r < records; ++r) {
        if (!identical || r == 0) {
            cx = uniform(rng, -0.5, 0.5);
            cy = uniform(rng, -0.5, 0.5);
            rad = uniform(rng, 0.2, 0.4);
        }
        PixelImage img(grid);
        for (int i = 0; i < grid; ++i)
            for (int j = 0; j < grid; ++j) {
                const auto p = img.pixel_center(i, j);
                if ((p[0] - cx) * (p[0] - cx) + (p[1] - cy) * (p[1] - cy) < rad * rad) img.at(i, j) = -0.597;
            }
        for (double v : img.values) ds.sigma_true.push_back(static_cast<float>(v));
        for (std::size_t i = 0; i < px; ++i) ds.initial.push_back(static_cast<float>(0.5 * img.values[i]));
        for (int k = 0; k < measurements; ++k) {
            const double ang = 2.0 * 3.14159265358979 * k / measurements;
            const double v = -1e-3 * rad * rad * (1.0 + cx * std::cos(ang) + cy * std::sin(ang));
            ds.voltage.push_back(static_cast<float>(v));
            sum[static_cast<std::size_t>(k)] += v;
            sumsq[static_cast<std::size_t>(k)] += v * v;
        }
        ds.phantoms.push_back({{"index", r}, {"seed", 0}, {"setting", "toy"}, {"phantom", nullptr}});
    }
    std::vector<double> mean(ds.measurements), sd(ds.measurements);
    for (std::size_t k = 0; k < ds.measurements; ++k) {
        mean[k] = sum[k] / records;
        sd[k] = std::max(std::sqrt(std::max(0.0, sumsq[k] / records - mean[k] * mean[k])), 1e-4);
    }
    ds.manifest = {{"format", "eitdiff-dataset"},
                   {"records", records},
                   {"partition", {{{"setting", "toy"}, {"first", 0}, {"count", records}}}},
                   {"normalization", {{"image_scale", 0.6}, {"voltage_mean", mean}, {"voltage_std", sd}}}};
    return ds;
}

} // namespace toy
