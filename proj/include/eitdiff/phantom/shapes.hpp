#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "eitdiff/core/error.hpp"
#include "eitdiff/core/rng.hpp"
#include "eitdiff/fem/forward.hpp"
#include "eitdiff/fem/mesh.hpp"

namespace eitdiff {

enum class ShapeFamily { circle, triangle, square, star5, l_shape, t_shape, v_shape };

inline std::string_view family_name(ShapeFamily f) {
    switch (f) {
    case ShapeFamily::circle: return "circle";
    case ShapeFamily::triangle: return "triangle";
    case ShapeFamily::square: return "square";
    case ShapeFamily::star5: return "star5";
    case ShapeFamily::l_shape: return "L";
    case ShapeFamily::t_shape: return "T";
    case ShapeFamily::v_shape: return "V";
    }
    return "?";
}

inline ShapeFamily family_from_name(std::string_view name) {
    for (auto f : {ShapeFamily::circle, ShapeFamily::triangle, ShapeFamily::square, ShapeFamily::star5,
                   ShapeFamily::l_shape, ShapeFamily::t_shape, ShapeFamily::v_shape}) {
        if (family_name(f) == name) return f;
    }
    throw ContractError("unknown shape family '" + std::string(name) + "'");
}

inline bool is_concave(ShapeFamily f) {
    return f == ShapeFamily::star5 || f == ShapeFamily::l_shape || f == ShapeFamily::t_shape ||
           f == ShapeFamily::v_shape;
}

// Rotation period of the canonical outline; sampled rotations are uniform on [0, period).
inline double rotation_period(ShapeFamily f) {
    switch (f) {
    case ShapeFamily::circle: return 2.0 * std::numbers::pi;
    case ShapeFamily::triangle: return 2.0 * std::numbers::pi / 3.0;
    case ShapeFamily::square: return std::numbers::pi / 2.0;
    case ShapeFamily::star5: return 2.0 * std::numbers::pi / 5.0;
    default: return 2.0 * std::numbers::pi;
    }
}

// Canonical outline with circumradius 1 about the origin.
inline std::vector<Point2> canonical_outline(ShapeFamily f) {
    std::vector<Point2> pts;
    auto regular = [&](int n, double start) {
        for (int k = 0; k < n; ++k) {
            const double a = start + 2.0 * std::numbers::pi * k / n;
            pts.push_back({std::cos(a), std::sin(a)});
        }
    };
    auto normalized = [&](std::vector<Point2> raw) {
        double r = 0.0;
        for (const auto& p : raw) r = std::max(r, std::hypot(p[0], p[1]));
        for (auto& p : raw) p = {p[0] / r, p[1] / r};
        return raw;
    };
    switch (f) {
    case ShapeFamily::circle: break;
    case ShapeFamily::triangle: regular(3, std::numbers::pi / 2.0); break;
    case ShapeFamily::square: regular(4, std::numbers::pi / 4.0); break;
    case ShapeFamily::star5:
        for (int k = 0; k < 10; ++k) {
            const double a = std::numbers::pi / 2.0 + std::numbers::pi * k / 5.0;
            const double r = (k % 2 == 0) ? 1.0 : 0.382;
            pts.push_back({r * std::cos(a), r * std::sin(a)});
        }
        break;
    case ShapeFamily::l_shape:
        pts = normalized({{-1, -1}, {1, -1}, {1, -0.4}, {-0.4, -0.4}, {-0.4, 1}, {-1, 1}});
        break;
    case ShapeFamily::t_shape:
        pts = normalized({{-1, 1}, {1, 1}, {1, 0.4}, {0.3, 0.4}, {0.3, -1}, {-0.3, -1}, {-0.3, 0.4}, {-1, 0.4}});
        break;
    case ShapeFamily::v_shape:
        pts = normalized({{-1, 1}, {-0.5, 1}, {0, -0.2}, {0.5, 1}, {1, 1}, {0.25, -1}, {-0.25, -1}});
        break;
    }
    return pts;
}

inline bool point_in_polygon(const std::vector<Point2>& poly, const Point2& p) {
    bool inside = false;
    for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
        const auto& a = poly[i];
        const auto& b = poly[j];
        if ((a[1] > p[1]) != (b[1] > p[1])) {
            const double x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if (p[0] < x) inside = !inside;
        }
    }
    return inside;
}

struct Shape {
    ShapeFamily family = ShapeFamily::circle;
    Point2 center{0.0, 0.0};
    double scale = 0.2; // circumradius
    double rotation = 0.0;

    // Outline in domain coordinates (empty for circles).
    std::vector<Point2> outline() const {
        auto pts = canonical_outline(family);
        const double c = std::cos(rotation), s = std::sin(rotation);
        for (auto& p : pts) {
            p = {center[0] + scale * (c * p[0] - s * p[1]), center[1] + scale * (s * p[0] + c * p[1])};
        }
        return pts;
    }

    bool contains(const Point2& p) const {
        if (family == ShapeFamily::circle) return std::hypot(p[0] - center[0], p[1] - center[1]) <= scale;
        return point_in_polygon(outline(), p);
    }
};

// Point-in-shape tests against precomputed outlines.
class ShapeSet {
public:
    explicit ShapeSet(const std::vector<Shape>& shapes) : shapes_(shapes) {
        for (const auto& s : shapes_) outlines_.push_back(s.outline());
    }

    bool contains(const Point2& p) const {
        for (std::size_t i = 0; i < shapes_.size(); ++i) {
            const auto& s = shapes_[i];
            if (std::hypot(p[0] - s.center[0], p[1] - s.center[1]) > s.scale) continue;
            if (s.family == ShapeFamily::circle || point_in_polygon(outlines_[i], p)) return true;
        }
        return false;
    }

private:
    std::vector<Shape> shapes_;
    std::vector<std::vector<Point2>> outlines_;
};

struct Phantom {
    std::vector<Shape> shapes;
    double background_sigma = 0.6;
    double inclusion_sigma = 0.003;

    double contrast() const { return inclusion_sigma - background_sigma; }
};

// One of the generator configurations: a family and how many inclusions.
struct Setting {
    ShapeFamily family = ShapeFamily::circle;
    int count = 2;

    std::string name() const { return std::string(family_name(family)) + "_" + std::to_string(count); }
    bool operator==(const Setting&) const = default;
};

// Circles, triangles and squares with 2-4 inclusions, then the four concave
// families with a single inclusion.
inline std::vector<Setting> standard_settings() {
    std::vector<Setting> out;
    for (auto f : {ShapeFamily::circle, ShapeFamily::triangle, ShapeFamily::square})
        for (int n = 2; n <= 4; ++n) out.push_back({f, n});
    for (auto f : {ShapeFamily::star5, ShapeFamily::l_shape, ShapeFamily::t_shape, ShapeFamily::v_shape})
        out.push_back({f, 1});
    return out;
}

inline Setting setting_from_name(std::string_view name) {
    for (const auto& s : standard_settings())
        if (s.name() == name) return s;
    throw ContractError("unknown setting '" + std::string(name) + "'");
}

struct PhantomLimits {
    double margin = 0.05;   // fraction of the domain radius kept clear at the boundary
    double separation = 0.02;
    int max_attempts = 2000;
};

inline Phantom sample_phantom(const Setting& setting, Rng& rng, double radius = 1.0,
                              const PhantomLimits& limits = {}) {
    const auto allowed = standard_settings();
    require(std::find(allowed.begin(), allowed.end(), setting) != allowed.end(),
            "sample_phantom: '" + setting.name() + "' is not a supported setting");

    double smin = 0.0, smax = 0.0;
    if (is_concave(setting.family)) {
        smin = 0.30;
        smax = 0.50;
    } else {
        smin = 0.10;
        smax = setting.count == 2 ? 0.26 : (setting.count == 3 ? 0.22 : 0.19);
    }
    const double limit = radius * (1.0 - limits.margin);

    Phantom phantom;
    int attempts = 0;
    while (static_cast<int>(phantom.shapes.size()) < setting.count) {
        if (++attempts > limits.max_attempts) {
            throw GenerationError("sample_phantom: could not place " + std::to_string(setting.count) + " x " +
                                  setting.name() + " within the retry budget");
        }
        Shape s;
        s.family = setting.family;
        s.scale = radius * uniform(rng, smin, smax);
        const double reach = limit - s.scale;
        const double r = reach * std::sqrt(uniform(rng, 0.0, 1.0));
        const double a = uniform(rng, 0.0, 2.0 * std::numbers::pi);
        s.center = {r * std::cos(a), r * std::sin(a)};
        s.rotation = setting.family == ShapeFamily::circle ? 0.0 : uniform(rng, 0.0, rotation_period(setting.family));

        bool clear = true;
        for (const auto& other : phantom.shapes) {
            const double d = std::hypot(s.center[0] - other.center[0], s.center[1] - other.center[1]);
            if (d < s.scale + other.scale + limits.separation * radius) {
                clear = false;
                break;
            }
        }
        if (clear) phantom.shapes.push_back(s);
    }
    return phantom;
}

// Element value is the inclusion conductivity when its centroid lies in any shape.
inline ConductivityField phantom_to_field(const Phantom& phantom, const Mesh& mesh) {
    ConductivityField field = ConductivityField::uniform(mesh.element_count(), phantom.background_sigma);
    const ShapeSet set(phantom.shapes);
    for (std::size_t e = 0; e < mesh.element_count(); ++e) {
        if (set.contains(mesh.centroid(e))) field.values[e] = phantom.inclusion_sigma;
    }
    return field;
}

inline nlohmann::json to_json(const Phantom& p) {
    nlohmann::json shapes = nlohmann::json::array();
    for (const auto& s : p.shapes) {
        shapes.push_back({{"family", family_name(s.family)},
                          {"center", {s.center[0], s.center[1]}},
                          {"scale", s.scale},
                          {"rotation", s.rotation}});
    }
    return {{"background_sigma", p.background_sigma}, {"inclusion_sigma", p.inclusion_sigma}, {"shapes", shapes}};
}

inline Phantom phantom_from_json(const nlohmann::json& j) {
    Phantom p;
    p.background_sigma = j.at("background_sigma").get<double>();
    p.inclusion_sigma = j.at("inclusion_sigma").get<double>();
    for (const auto& s : j.at("shapes")) {
        Shape shape;
        shape.family = family_from_name(s.at("family").get<std::string>());
        shape.center = {s.at("center").at(0).get<double>(), s.at("center").at(1).get<double>()};
        shape.scale = s.at("scale").get<double>();
        shape.rotation = s.at("rotation").get<double>();
        p.shapes.push_back(shape);
    }
    return p;
}

} // namespace eitdiff
