#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include <Eigen/Sparse>

#include "eitdiff/core/error.hpp"
#include "eitdiff/fem/mesh.hpp"

namespace eitdiff {

// Anisotropic total variation over a neighbour graph. Each undirected
// neighbour pair appears once.
struct TVOperator {
    struct Link {
        std::uint32_t a;
        std::uint32_t b;
        double weight;
    };

    std::size_t unknowns = 0;
    std::vector<Link> links;

    // Signed difference matrix L: (L x)_k = x[a_k] - x[b_k].
    Eigen::SparseMatrix<double> difference_matrix() const {
        std::vector<Eigen::Triplet<double>> trips;
        trips.reserve(links.size() * 2);
        for (std::size_t k = 0; k < links.size(); ++k) {
            trips.emplace_back(static_cast<int>(k), static_cast<int>(links[k].a), 1.0);
            trips.emplace_back(static_cast<int>(k), static_cast<int>(links[k].b), -1.0);
        }
        Eigen::SparseMatrix<double> l(static_cast<Eigen::Index>(links.size()), static_cast<Eigen::Index>(unknowns));
        l.setFromTriplets(trips.begin(), trips.end());
        return l;
    }

    Eigen::VectorXd weights() const {
        Eigen::VectorXd w(static_cast<Eigen::Index>(links.size()));
        for (std::size_t k = 0; k < links.size(); ++k) w(static_cast<Eigen::Index>(k)) = links[k].weight;
        return w;
    }
};

// Elements sharing an edge, weighted by the shared edge length.
inline TVOperator tv_operator(const Mesh& mesh) {
    std::map<std::pair<std::uint32_t, std::uint32_t>, std::uint32_t> first_owner;
    TVOperator op;
    op.unknowns = mesh.element_count();
    for (std::uint32_t e = 0; e < mesh.element_count(); ++e) {
        const auto& t = mesh.elements[e];
        for (int k = 0; k < 3; ++k) {
            auto key = std::minmax(t[k], t[(k + 1) % 3]);
            auto [it, inserted] = first_owner.emplace(std::pair{key.first, key.second}, e);
            if (!inserted) {
                const auto& p = mesh.nodes[key.first];
                const auto& q = mesh.nodes[key.second];
                op.links.push_back({it->second, e, std::hypot(q[0] - p[0], q[1] - p[1])});
            }
        }
    }
    return op;
}

// 4-neighbourhood on an n x n pixel grid with unit weights. When a mask is
// given, only links between two masked-in pixels are kept.
inline TVOperator tv_operator_grid(int n, std::span<const std::uint8_t> mask = {}) {
    require(mask.empty() || mask.size() == static_cast<std::size_t>(n) * n, "tv_operator_grid: mask size mismatch");
    TVOperator op;
    op.unknowns = static_cast<std::size_t>(n) * n;
    auto on = [&](int r, int c) { return mask.empty() || mask[static_cast<std::size_t>(r) * n + c] != 0; };
    for (int r = 0; r < n; ++r) {
        for (int c = 0; c < n; ++c) {
            const auto i = static_cast<std::uint32_t>(r * n + c);
            if (!on(r, c)) continue;
            if (c + 1 < n && on(r, c + 1)) op.links.push_back({i, i + 1, 1.0});
            if (r + 1 < n && on(r + 1, c)) op.links.push_back({i, static_cast<std::uint32_t>(i + n), 1.0});
        }
    }
    return op;
}

inline double tv_value(std::span<const double> field, const TVOperator& op) {
    require(field.size() == op.unknowns, "tv_value: field size does not match the operator");
    double acc = 0.0;
    for (const auto& l : op.links) acc += l.weight * std::abs(field[l.a] - field[l.b]);
    return acc;
}

} // namespace eitdiff
