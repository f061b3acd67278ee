#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <set>

#include "eitdiff/core/rng.hpp"
#include "eitdiff/fem/forward.hpp"
#include "eitdiff/fem/mesh.hpp"
#include "eitdiff/inverse/pdipm.hpp"
#include "eitdiff/inverse/preimage.hpp"
#include "eitdiff/inverse/tv.hpp"
#include "eitdiff/phantom/raster.hpp"
#include "eitdiff/phantom/shapes.hpp"

using namespace eitdiff;

namespace {

struct Fixture {
    Mesh fine = build_disk_mesh(1.0, 6, 16, 0.5);
    Mesh coarse = build_disk_mesh(1.0, 3, 16, 0.5);
    StimulationProtocol protocol = StimulationProtocol::adjacent();
    ForwardSolver fine_solver{fine, protocol};
    MeasurementFrame homogeneous = fine_solver.forward(ConductivityField::uniform(fine.element_count(), 0.6));
    Preimager pre{coarse, protocol};

    MeasurementFrame frame(const Phantom& p) const {
        return time_difference(fine_solver.forward(phantom_to_field(p, fine)), homogeneous);
    }
};

const Fixture& fixture() {
    static const Fixture f;
    return f;
}

Phantom disk(double x, double y, double r) {
    Phantom p;
    p.shapes.push_back({ShapeFamily::circle, {x, y}, r, 0.0});
    return p;
}

Eigen::VectorXd as_vector(const MeasurementFrame& f) {
    return Eigen::Map<const Eigen::VectorXd>(f.values.data(), static_cast<Eigen::Index>(f.size()));
}

// Area-weighted centroid of the conductivity drop.
Point2 drop_centroid(const Mesh& mesh, const Eigen::VectorXd& ds) {
    double wx = 0.0, wy = 0.0, w = 0.0;
    for (std::size_t e = 0; e < mesh.element_count(); ++e) {
        const double weight = mesh.element_areas[e] * std::max(0.0, -ds(static_cast<Eigen::Index>(e)));
        const auto c = mesh.centroid(e);
        wx += weight * c[0];
        wy += weight * c[1];
        w += weight;
    }
    return {wx / w, wy / w};
}

double l1_in_disk(const PixelImage& a, const PixelImage& b) {
    double acc = 0.0;
    for (int r = 0; r < a.size; ++r)
        for (int c = 0; c < a.size; ++c)
            if (a.in_disk(r, c)) acc += std::abs(a.at(r, c) - b.at(r, c));
    return acc;
}

} // namespace

TEST(TV, ConstantFieldIsZero) {
    const auto op = tv_operator(fixture().coarse);
    const std::vector<double> field(op.unknowns, 3.7);
    EXPECT_EQ(tv_value(field, op), 0.0);
    const auto grid = tv_operator_grid(16);
    EXPECT_EQ(tv_value(std::vector<double>(256, -1.5), grid), 0.0);
}

TEST(TV, LinksAreUniqueInteriorEdges) {
    const Mesh& mesh = fixture().coarse;
    const auto op = tv_operator(mesh);
    // every interior edge is shared by exactly two elements
    const std::size_t interior = mesh.edge_count() - mesh.boundary_loop.size();
    EXPECT_EQ(op.links.size(), interior);
    std::set<std::pair<std::uint32_t, std::uint32_t>> seen;
    for (const auto& l : op.links) {
        EXPECT_TRUE(seen.insert(std::minmax(l.a, l.b)).second);
        EXPECT_GT(l.weight, 0.0);
    }
}

TEST(TV, NegationInvariant) {
    const auto op = tv_operator(fixture().coarse);
    Rng rng = make_rng(4);
    std::vector<double> f(op.unknowns), g(op.unknowns);
    for (std::size_t i = 0; i < f.size(); ++i) {
        f[i] = uniform(rng, -1.0, 1.0);
        g[i] = -f[i];
    }
    EXPECT_EQ(tv_value(f, op), tv_value(g, op));
}

TEST(TV, FourElementHandSum) {
    // Unit square split into four triangles around its centre.
    Mesh mesh;
    mesh.nodes = {{0, 0}, {1, 0}, {1, 1}, {0, 1}, {0.5, 0.5}};
    mesh.elements = {{0, 1, 4}, {1, 2, 4}, {2, 3, 4}, {3, 0, 4}};
    const auto op = tv_operator(mesh);
    ASSERT_EQ(op.links.size(), 4u);
    const std::vector<double> f{0.3, -1.2, 2.0, 0.5};
    const double spoke = std::sqrt(0.5);
    const double expected = spoke * (std::abs(0.3 + 1.2) + std::abs(-1.2 - 2.0) + std::abs(2.0 - 0.5) +
                                     std::abs(0.5 - 0.3));
    EXPECT_NEAR(tv_value(f, op), expected, 1e-14);
}

TEST(TV, GridNeighbourCountAndMask) {
    EXPECT_EQ(tv_operator_grid(5).links.size(), 2u * 5 * 4);
    const PixelImage img(16);
    const auto mask = img.mask();
    const auto op = tv_operator_grid(16, mask);
    for (const auto& l : op.links) {
        EXPECT_TRUE(mask[l.a]);
        EXPECT_TRUE(mask[l.b]);
    }
}

TEST(Pdipm, ZeroDataGivesZero) {
    const auto& f = fixture();
    const auto res = pdipm_solve(f.pre.jacobian(), Eigen::VectorXd::Zero(208), f.pre.tv(), 1.0);
    EXPECT_EQ(res.sigma.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Pdipm, HugeLambdaGivesConstant) {
    const auto& f = fixture();
    const Eigen::VectorXd b = as_vector(f.frame(disk(0.3, -0.2, 0.25)));
    const double scale = (f.pre.jacobian().transpose() * b).cwiseAbs().maxCoeff();
    PdipmSolver solver(f.pre.jacobian(), f.pre.tv());
    const auto res = solver.solve(b, 1e6 * scale);
    EXPECT_LT(res.sigma.maxCoeff() - res.sigma.minCoeff(), 1e-6);
}

TEST(Pdipm, MeritNeverIncreasesAndDualStaysFeasible) {
    const auto& f = fixture();
    for (const auto& p : {disk(0.0, 0.0, 0.3), disk(0.5, 0.3, 0.2)}) {
        const auto res = f.pre.solve_elements(f.frame(p));
        ASSERT_GE(res.merit.size(), 2u);
        for (std::size_t i = 1; i < res.merit.size(); ++i)
            EXPECT_LE(res.merit[i], res.merit[i - 1] * (1.0 + 1e-12)) << "iteration " << i;
        for (double d : res.dual_max) EXPECT_LE(d, 1.0);
        for (std::size_t i = 1; i < res.mu.size(); ++i) EXPECT_LT(res.mu[i], res.mu[i - 1]);
        EXPECT_LE(res.merit.back(), res.merit.front());
    }
}

TEST(Pdipm, CentredDiskCentroid) {
    const auto& f = fixture();
    const auto res = f.pre.solve_elements(f.frame(disk(0.0, 0.0, 0.3)));
    const auto c = drop_centroid(f.coarse, res.sigma);
    EXPECT_LT(std::hypot(c[0], c[1]), 0.1);
}

TEST(Pdipm, OffCentreDiskCentroid) {
    const auto& f = fixture();
    const auto res = f.pre.solve_elements(f.frame(disk(0.4, -0.25, 0.2)));
    const auto c = drop_centroid(f.coarse, res.sigma);
    EXPECT_LT(std::hypot(c[0] - 0.4, c[1] + 0.25), 0.1);
}

TEST(Preimage, ZeroFrameGivesZeroImage) {
    const auto& f = fixture();
    const MeasurementFrame zero{std::vector<double>(208, 0.0), FrameKind::time_difference};
    const auto img = f.pre(zero);
    for (double v : img.values) EXPECT_EQ(v, 0.0);
}

TEST(Preimage, Deterministic) {
    const auto& f = fixture();
    const auto v = f.frame(disk(-0.2, 0.4, 0.25));
    EXPECT_EQ(f.pre(v).values, f.pre(v).values);
}

TEST(Preimage, BeatsZeroImage) {
    const auto& f = fixture();
    const Phantom p = disk(0.25, 0.3, 0.25);
    const auto truth = rasterize_truth(p, 64);
    const auto img = f.pre(f.frame(p));
    const PixelImage zero(64);
    EXPECT_LT(l1_in_disk(img, truth), l1_in_disk(zero, truth));
    for (double v : img.values) EXPECT_TRUE(std::isfinite(v));
}

TEST(Preimage, RejectsAbsoluteFrames) {
    const auto& f = fixture();
    const MeasurementFrame absolute{std::vector<double>(208, 1.0), FrameKind::absolute};
    EXPECT_THROW(f.pre(absolute), ContractError);
}

TEST(Preimage, RotatingTheFrameRotatesTheReconstruction) {
    // Rotating the phantom by one electrode pitch shifts drive and measurement
    // indices by one; on the symmetric inversion mesh the element solution
    // must follow the element rotation map.
    const auto& f = fixture();
    const auto v = f.frame(disk(0.35, 0.1, 0.2));
    MeasurementFrame rotated = v;
    for (std::size_t r = 0; r < f.protocol.rows.size(); ++r) {
        const auto [d, m] = f.protocol.rows[r];
        rotated.values[static_cast<std::size_t>(f.protocol.row_index((d + 1) % 16, (m + 1) % 16))] = v.values[r];
    }
    const auto a = f.pre.solve_elements(v).sigma;
    const auto b = f.pre.solve_elements(rotated).sigma;
    const auto map = element_rotation_map(f.coarse, 1);
    const double scale = a.cwiseAbs().maxCoeff();
    double worst = 0.0;
    for (std::size_t e = 0; e < map.size(); ++e)
        worst = std::max(worst, std::abs(a(static_cast<Eigen::Index>(e)) - b(static_cast<Eigen::Index>(map[e]))));
    EXPECT_LT(worst, 1e-6 * scale);
}
