#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include <json.hpp>

#include "eitdiff/core/binary_io.hpp"
#include "eitdiff/core/error.hpp"

namespace eitdiff {

using Point2 = std::array<double, 2>;
using Triangle = std::array<std::uint32_t, 3>;
using Edge = std::array<std::uint32_t, 2>;

// Triangulated disk with boundary electrodes. Immutable once built.
struct Mesh {
    double radius = 1.0;
    std::vector<Point2> nodes;
    std::vector<Triangle> elements;          // counter-clockwise
    std::vector<std::vector<Edge>> electrodes; // boundary edges per electrode, CCW from angle 0
    std::vector<double> element_areas;
    std::vector<std::uint32_t> boundary_loop; // boundary nodes in CCW order

    std::size_t node_count() const { return nodes.size(); }
    std::size_t element_count() const { return elements.size(); }
    std::size_t electrode_count() const { return electrodes.size(); }

    Point2 centroid(std::size_t e) const {
        const auto& t = elements[e];
        return {(nodes[t[0]][0] + nodes[t[1]][0] + nodes[t[2]][0]) / 3.0,
                (nodes[t[0]][1] + nodes[t[1]][1] + nodes[t[2]][1]) / 3.0};
    }

    std::vector<Point2> centroids() const {
        std::vector<Point2> out(element_count());
        for (std::size_t e = 0; e < out.size(); ++e) out[e] = centroid(e);
        return out;
    }

    double total_area() const {
        double a = 0.0;
        for (double v : element_areas) a += v;
        return a;
    }

    // Number of distinct undirected edges.
    std::size_t edge_count() const;
};

inline double signed_area(const Point2& a, const Point2& b, const Point2& c) {
    return 0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]));
}

inline std::size_t Mesh::edge_count() const {
    std::vector<std::uint64_t> keys;
    keys.reserve(elements.size() * 3);
    for (const auto& t : elements) {
        for (int k = 0; k < 3; ++k) {
            std::uint64_t a = t[k], b = t[(k + 1) % 3];
            if (a > b) std::swap(a, b);
            keys.push_back((a << 32) | b);
        }
    }
    std::sort(keys.begin(), keys.end());
    return static_cast<std::size_t>(std::unique(keys.begin(), keys.end()) - keys.begin());
}

namespace detail {

// Stitches two concentric node rows spanning the same angular sector.
// Each row lists node ids with their local angles, including the closing node
// at the sector's upper bound.
inline void zip_rows(const std::vector<std::uint32_t>& inner, const std::vector<double>& inner_phi,
                     const std::vector<std::uint32_t>& outer, const std::vector<double>& outer_phi,
                     std::vector<Triangle>& out) {
    std::size_t i = 0, k = 0;
    const std::size_t ni = inner.size() - 1, no = outer.size() - 1;
    while (i < ni || k < no) {
        const bool advance_outer = (i == ni) || (k < no && outer_phi[k + 1] <= inner_phi[i + 1]);
        if (advance_outer) {
            out.push_back({inner[i], outer[k], outer[k + 1]});
            ++k;
        } else {
            out.push_back({inner[i], outer[k], inner[i + 1]});
            ++i;
        }
    }
}

} // namespace detail

// Structured radial/angular disk mesh. The sector pattern around each
// electrode is built once and replicated, so the connectivity is exactly
// n_electrodes-fold rotationally symmetric. refinement r gives 2r rings.
inline Mesh build_disk_mesh(double radius = 1.0, int refinement = 3, int n_electrodes = 16,
                            double electrode_coverage = 0.5) {
    require(radius > 0.0, "build_disk_mesh: radius must be positive");
    require(refinement >= 1, "build_disk_mesh: refinement must be >= 1");
    require(n_electrodes >= 3, "build_disk_mesh: need at least 3 electrodes");
    require(electrode_coverage > 0.0 && electrode_coverage < 1.0,
            "build_disk_mesh: electrode coverage must lie in (0, 1)");

    const int rings = 2 * refinement;
    const auto sectors = static_cast<std::uint32_t>(n_electrodes);
    const double half = std::numbers::pi / n_electrodes;

    const int seg_electrode = std::max(1, static_cast<int>(std::lround(electrode_coverage * rings)));
    const int seg_gap = std::max(1, static_cast<int>(std::lround((1.0 - electrode_coverage) * rings / 2.0)));

    // Local angles of one sector's nodes on each ring, measured from the
    // sector centre (electrode centre); each sector spans [-half, half).
    std::vector<std::vector<double>> ring_phi(rings + 1);
    for (int j = 1; j < rings; ++j) {
        for (int i = 0; i < j; ++i) ring_phi[j].push_back(-half + 2.0 * half * i / j);
    }
    {
        auto& b = ring_phi[rings];
        const double gap = (1.0 - electrode_coverage) * half;
        const double width = 2.0 * electrode_coverage * half;
        for (int k = 0; k < seg_gap; ++k) b.push_back(-half + gap * k / seg_gap);
        for (int k = 0; k < seg_electrode; ++k) b.push_back(-electrode_coverage * half + width * k / seg_electrode);
        for (int k = 0; k < seg_gap; ++k) b.push_back(electrode_coverage * half + gap * k / seg_gap);
    }

    Mesh mesh;
    mesh.radius = radius;
    mesh.nodes.push_back({0.0, 0.0});
    std::vector<std::uint32_t> ring_offset(rings + 1, 0);
    for (int j = 1; j <= rings; ++j) {
        ring_offset[j] = static_cast<std::uint32_t>(mesh.nodes.size());
        const double r = radius * j / rings;
        for (std::uint32_t s = 0; s < sectors; ++s) {
            for (double phi : ring_phi[j]) {
                const double theta = 2.0 * std::numbers::pi * s / n_electrodes + phi;
                mesh.nodes.push_back({r * std::cos(theta), r * std::sin(theta)});
            }
        }
    }

    auto row = [&](int j, std::uint32_t s, std::vector<std::uint32_t>& ids, std::vector<double>& phi) {
        ids.clear();
        phi.clear();
        const auto per = static_cast<std::uint32_t>(ring_phi[j].size());
        for (std::uint32_t i = 0; i < per; ++i) {
            ids.push_back(ring_offset[j] + s * per + i);
            phi.push_back(ring_phi[j][i]);
        }
        ids.push_back(ring_offset[j] + ((s + 1) % sectors) * per);
        phi.push_back(half);
    };

    std::vector<std::uint32_t> inner, outer;
    std::vector<double> inner_phi, outer_phi;
    for (std::uint32_t s = 0; s < sectors; ++s) {
        row(1, s, outer, outer_phi);
        for (std::size_t k = 0; k + 1 < outer.size(); ++k) mesh.elements.push_back({0, outer[k], outer[k + 1]});
        for (int j = 1; j < rings; ++j) {
            row(j, s, inner, inner_phi);
            row(j + 1, s, outer, outer_phi);
            detail::zip_rows(inner, inner_phi, outer, outer_phi, mesh.elements);
        }
    }

    mesh.element_areas.resize(mesh.elements.size());
    for (std::size_t e = 0; e < mesh.elements.size(); ++e) {
        const auto& t = mesh.elements[e];
        const double a = signed_area(mesh.nodes[t[0]], mesh.nodes[t[1]], mesh.nodes[t[2]]);
        if (!(a > 1e-14 * radius * radius)) {
            throw GenerationError("build_disk_mesh: element " + std::to_string(e) +
                                  " is degenerate or clockwise (signed area " + std::to_string(a) + ")");
        }
        mesh.element_areas[e] = a;
    }

    const auto per_boundary = static_cast<std::uint32_t>(ring_phi[rings].size());
    const std::uint32_t boundary_nodes = per_boundary * sectors;
    for (std::uint32_t i = 0; i < boundary_nodes; ++i) mesh.boundary_loop.push_back(ring_offset[rings] + i);
    mesh.electrodes.resize(sectors);
    for (std::uint32_t s = 0; s < sectors; ++s) {
        for (int k = 0; k < seg_electrode; ++k) {
            const std::uint32_t local = s * per_boundary + static_cast<std::uint32_t>(seg_gap + k);
            mesh.electrodes[s].push_back(
                {ring_offset[rings] + local, ring_offset[rings] + (local + 1) % boundary_nodes});
        }
    }
    return mesh;
}

// Maps element e to the element occupying its position after a rotation by
// 2*pi*steps/E (E = electrode count). Found by centroid matching, so it does
// not depend on how elements are numbered.
inline std::vector<std::uint32_t> element_rotation_map(const Mesh& mesh, int steps = 1) {
    const double angle = 2.0 * std::numbers::pi * steps / static_cast<double>(mesh.electrode_count());
    const double c = std::cos(angle), s = std::sin(angle);
    const auto cents = mesh.centroids();

    // bucket centroids on a uniform grid for lookup
    const int cells = std::max(4, static_cast<int>(std::sqrt(static_cast<double>(cents.size()))));
    auto cell_of = [&](double v) {
        return std::clamp(static_cast<int>((v / mesh.radius + 1.0) * 0.5 * cells), 0, cells - 1);
    };
    std::vector<std::vector<std::uint32_t>> grid(static_cast<std::size_t>(cells * cells));
    for (std::uint32_t e = 0; e < cents.size(); ++e)
        grid[cell_of(cents[e][1]) * cells + cell_of(cents[e][0])].push_back(e);

    std::vector<std::uint32_t> map(cents.size());
    const double tol = 1e-9 * mesh.radius;
    for (std::uint32_t e = 0; e < cents.size(); ++e) {
        const Point2 p{c * cents[e][0] - s * cents[e][1], s * cents[e][0] + c * cents[e][1]};
        const int cx = cell_of(p[0]), cy = cell_of(p[1]);
        bool found = false;
        for (int dy = -1; dy <= 1 && !found; ++dy) {
            for (int dx = -1; dx <= 1 && !found; ++dx) {
                const int x = cx + dx, y = cy + dy;
                if (x < 0 || y < 0 || x >= cells || y >= cells) continue;
                for (std::uint32_t f : grid[y * cells + x]) {
                    if (std::hypot(cents[f][0] - p[0], cents[f][1] - p[1]) < tol) {
                        map[e] = f;
                        found = true;
                        break;
                    }
                }
            }
        }
        if (!found) throw ContractError("element_rotation_map: mesh is not symmetric under the rotation");
    }
    return map;
}

// Manifest (JSON) plus nodes.f64 (x,y interleaved) and elements.u32, row-major.
inline void save_mesh(const Mesh& mesh, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::vector<double> coords;
    coords.reserve(mesh.nodes.size() * 2);
    for (const auto& p : mesh.nodes) coords.insert(coords.end(), {p[0], p[1]});
    std::vector<std::uint32_t> tris;
    tris.reserve(mesh.elements.size() * 3);
    for (const auto& t : mesh.elements) tris.insert(tris.end(), t.begin(), t.end());

    nlohmann::json electrodes = nlohmann::json::array();
    for (const auto& segs : mesh.electrodes) {
        nlohmann::json list = nlohmann::json::array();
        for (const auto& e : segs) list.push_back({e[0], e[1]});
        electrodes.push_back(list);
    }
    const nlohmann::json manifest = {
        {"format", "eitdiff-mesh"},
        {"version", 1},
        {"radius", mesh.radius},
        {"node_count", mesh.nodes.size()},
        {"element_count", mesh.elements.size()},
        {"electrode_count", mesh.electrodes.size()},
        {"electrode_segments", electrodes},
        {"boundary_loop", mesh.boundary_loop},
        {"nodes_file", "nodes.f64"},
        {"elements_file", "elements.u32"},
    };
    io::write_raw<double>(dir / "nodes.f64", coords);
    io::write_raw<std::uint32_t>(dir / "elements.u32", tris);
    io::write_json(dir / "manifest.json", manifest);
}

inline Mesh load_mesh(const std::filesystem::path& dir) {
    const auto manifest = io::read_json(dir / "manifest.json");
    if (manifest.value("format", "") != "eitdiff-mesh") throw IoError(dir.string() + ": not a mesh manifest");
    const auto coords = io::read_raw<double>(dir / manifest.at("nodes_file").get<std::string>());
    const auto tris = io::read_raw<std::uint32_t>(dir / manifest.at("elements_file").get<std::string>());
    const auto n_nodes = manifest.at("node_count").get<std::size_t>();
    const auto n_elems = manifest.at("element_count").get<std::size_t>();
    if (coords.size() != 2 * n_nodes || tris.size() != 3 * n_elems)
        throw IoError(dir.string() + ": binary sizes disagree with manifest");

    Mesh mesh;
    mesh.radius = manifest.at("radius").get<double>();
    for (std::size_t i = 0; i < n_nodes; ++i) mesh.nodes.push_back({coords[2 * i], coords[2 * i + 1]});
    for (std::size_t e = 0; e < n_elems; ++e) {
        const Triangle t{tris[3 * e], tris[3 * e + 1], tris[3 * e + 2]};
        for (auto v : t)
            if (v >= n_nodes) throw IoError(dir.string() + ": element references missing node");
        mesh.elements.push_back(t);
        const double a = signed_area(mesh.nodes[t[0]], mesh.nodes[t[1]], mesh.nodes[t[2]]);
        if (!(a > 0.0)) throw IoError(dir.string() + ": element " + std::to_string(e) + " has non-positive area");
        mesh.element_areas.push_back(a);
    }
    for (const auto& list : manifest.at("electrode_segments")) {
        std::vector<Edge> segs;
        for (const auto& e : list) segs.push_back({e.at(0).get<std::uint32_t>(), e.at(1).get<std::uint32_t>()});
        mesh.electrodes.push_back(std::move(segs));
    }
    mesh.boundary_loop = manifest.at("boundary_loop").get<std::vector<std::uint32_t>>();
    return mesh;
}

} // namespace eitdiff
