#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "eitdiff/core/error.hpp"
#include "eitdiff/fem/mesh.hpp"
#include "eitdiff/phantom/shapes.hpp"

namespace eitdiff {

// Square raster over [-R, R]^2. Row 0 is the top (y = +R); pixels whose
// centre lies outside the disk are held at exactly zero.
struct PixelImage {
    int size = 64;
    double radius = 1.0;
    std::vector<double> values;

    PixelImage() = default;
    explicit PixelImage(int n, double r = 1.0) : size(n), radius(r), values(static_cast<std::size_t>(n) * n, 0.0) {}

    double& at(int row, int col) { return values[static_cast<std::size_t>(row) * size + col]; }
    double at(int row, int col) const { return values[static_cast<std::size_t>(row) * size + col]; }

    Point2 pixel_center(int row, int col) const {
        const double h = 2.0 * radius / size;
        return {-radius + (col + 0.5) * h, radius - (row + 0.5) * h};
    }

    bool in_disk(int row, int col) const {
        const auto p = pixel_center(row, col);
        return p[0] * p[0] + p[1] * p[1] <= radius * radius;
    }

    std::vector<std::uint8_t> mask() const {
        std::vector<std::uint8_t> m(values.size());
        for (int r = 0; r < size; ++r)
            for (int c = 0; c < size; ++c) m[static_cast<std::size_t>(r) * size + c] = in_disk(r, c) ? 1 : 0;
        return m;
    }

    void apply_mask() {
        for (int r = 0; r < size; ++r)
            for (int c = 0; c < size; ++c)
                if (!in_disk(r, c)) at(r, c) = 0.0;
    }
};

// Ground-truth label: inclusion minus background inside shapes, 0 elsewhere.
inline PixelImage rasterize_truth(const Phantom& phantom, int grid, double radius = 1.0) {
    require(grid >= 8, "rasterize_truth: grid must be >= 8");
    PixelImage img(grid, radius);
    const ShapeSet set(phantom.shapes);
    const double delta = phantom.contrast();
    for (int r = 0; r < grid; ++r) {
        for (int c = 0; c < grid; ++c) {
            if (img.in_disk(r, c) && set.contains(img.pixel_center(r, c))) img.at(r, c) = delta;
        }
    }
    return img;
}

enum class IdwSites { elements, nodes };

struct IdwOptions {
    int neighbours = 4;
    double power = 2.0;
};

// Inverse-distance weighting from scattered sites (element centroids or mesh
// nodes) onto a pixel grid. Neighbour lists and weights are computed once per
// (mesh, grid), so repeated rasterizations reduce to a sparse mat-vec.
class IdwInterpolator {
public:
    IdwInterpolator(const Mesh& mesh, int grid, IdwSites sites = IdwSites::elements, IdwOptions opts = {})
        : grid_(grid), radius_(mesh.radius), sites_(sites), opts_(opts) {
        require(grid >= 8, "rasterize_idw: grid must be >= 8");
        require(opts.neighbours >= 1, "rasterize_idw: need at least one neighbour");
        const std::vector<Point2> pts = sites == IdwSites::elements ? mesh.centroids() : mesh.nodes;
        site_count_ = pts.size();
        require(site_count_ >= static_cast<std::size_t>(opts.neighbours), "rasterize_idw: fewer sites than neighbours");
        build(pts);
    }

    std::size_t site_count() const { return site_count_; }
    int grid() const { return grid_; }

    PixelImage apply(std::span<const double> values) const {
        require(values.size() == site_count_, "rasterize_idw: value count does not match the interpolation sites");
        PixelImage img(grid_, radius_);
        const auto k = static_cast<std::size_t>(opts_.neighbours);
        for (std::size_t p = 0; p < pixels_.size(); ++p) {
            double acc = 0.0;
            for (std::size_t j = 0; j < k; ++j) acc += weights_[p * k + j] * values[index_[p * k + j]];
            img.values[pixels_[p]] = acc;
        }
        return img;
    }

private:
    void build(const std::vector<Point2>& pts) {
        const int cells = std::max(1, static_cast<int>(std::sqrt(static_cast<double>(pts.size()) / 2.0)));
        const double cell_size = 2.0 * radius_ / cells;
        auto cell_of = [&](double v) { return std::clamp(static_cast<int>((v + radius_) / cell_size), 0, cells - 1); };
        std::vector<std::vector<std::uint32_t>> buckets(static_cast<std::size_t>(cells) * cells);
        for (std::uint32_t i = 0; i < pts.size(); ++i)
            buckets[static_cast<std::size_t>(cell_of(pts[i][1])) * cells + cell_of(pts[i][0])].push_back(i);

        const auto k = static_cast<std::size_t>(opts_.neighbours);
        PixelImage probe(grid_, radius_);
        std::vector<std::pair<double, std::uint32_t>> found;
        for (int r = 0; r < grid_; ++r) {
            for (int c = 0; c < grid_; ++c) {
                if (!probe.in_disk(r, c)) continue;
                const Point2 q = probe.pixel_center(r, c);
                const int cx = cell_of(q[0]), cy = cell_of(q[1]);

                // grow the search ring until the k-th distance is certified
                found.clear();
                for (int ring = 0;; ++ring) {
                    for (int y = cy - ring; y <= cy + ring; ++y) {
                        for (int x = cx - ring; x <= cx + ring; ++x) {
                            if (std::max(std::abs(x - cx), std::abs(y - cy)) != ring) continue;
                            if (x < 0 || y < 0 || x >= cells || y >= cells) continue;
                            for (auto i : buckets[static_cast<std::size_t>(y) * cells + x])
                                found.emplace_back(std::hypot(pts[i][0] - q[0], pts[i][1] - q[1]), i);
                        }
                    }
                    if (found.size() >= k) {
                        std::partial_sort(found.begin(), found.begin() + static_cast<std::ptrdiff_t>(k), found.end());
                        if (found[k - 1].first <= ring * cell_size || ring >= cells) break;
                    } else if (ring >= cells) {
                        break;
                    }
                }
                std::partial_sort(found.begin(), found.begin() + static_cast<std::ptrdiff_t>(k), found.end());

                pixels_.push_back(static_cast<std::size_t>(r) * grid_ + c);
                if (found[0].first < 1e-12 * radius_) {
                    for (std::size_t j = 0; j < k; ++j) {
                        index_.push_back(found[j].second);
                        weights_.push_back(j == 0 ? 1.0 : 0.0);
                    }
                    continue;
                }
                double total = 0.0;
                for (std::size_t j = 0; j < k; ++j) total += std::pow(found[j].first, -opts_.power);
                for (std::size_t j = 0; j < k; ++j) {
                    index_.push_back(found[j].second);
                    weights_.push_back(std::pow(found[j].first, -opts_.power) / total);
                }
            }
        }
    }

    int grid_;
    double radius_;
    IdwSites sites_;
    IdwOptions opts_;
    std::size_t site_count_ = 0;
    std::vector<std::size_t> pixels_;
    std::vector<std::uint32_t> index_;
    std::vector<double> weights_;
};

inline PixelImage rasterize_idw(std::span<const double> values, const Mesh& mesh, int grid,
                                IdwSites sites = IdwSites::elements, IdwOptions opts = {}) {
    return IdwInterpolator(mesh, grid, sites, opts).apply(values);
}

} // namespace eitdiff
