#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

#include "eitdiff/fem/forward.hpp"
#include "eitdiff/fem/mesh.hpp"

using namespace eitdiff;

namespace {

double max_abs(const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

} // namespace

TEST(Mesh, ElectrodeCentresFollowSectors) {
    const Mesh mesh = build_disk_mesh(1.0, 1, 16, 0.5);
    ASSERT_EQ(mesh.electrode_count(), 16u);
    for (std::size_t k = 0; k < 16; ++k) {
        const auto& segs = mesh.electrodes[k];
        const auto& a = mesh.nodes[segs.front()[0]];
        const auto& b = mesh.nodes[segs.back()[1]];
        const double start = std::atan2(a[1], a[0]);
        const double end = std::atan2(b[1], b[0]);
        double mid = std::atan2(std::sin(start) + std::sin(end), std::cos(start) + std::cos(end));
        const double expected = 2.0 * std::numbers::pi * static_cast<double>(k) / 16.0;
        double diff = std::remainder(mid - expected, 2.0 * std::numbers::pi);
        EXPECT_NEAR(diff, 0.0, 1e-12) << "electrode " << k;
        // covered arc is half of the sector
        const double arc = std::remainder(end - start, 2.0 * std::numbers::pi);
        EXPECT_NEAR(arc, 0.5 * 2.0 * std::numbers::pi / 16.0, 1e-12);
    }
}

TEST(Mesh, AreaConvergesToDisk) {
    const Mesh mesh = build_disk_mesh(1.0, 3, 16, 0.5);
    EXPECT_NEAR(mesh.total_area(), std::numbers::pi, 0.01 * std::numbers::pi);
    const Mesh fine = build_disk_mesh(1.0, 6, 16, 0.5);
    EXPECT_LT(std::abs(fine.total_area() - std::numbers::pi), std::abs(mesh.total_area() - std::numbers::pi));
}

TEST(Mesh, InvariantsHoldAcrossParameters) {
    for (int refinement : {1, 2, 3, 5, 8}) {
        for (double coverage : {0.2, 0.5, 0.8}) {
            const Mesh mesh = build_disk_mesh(1.0, refinement, 16, coverage);
            for (double a : mesh.element_areas) ASSERT_GT(a, 0.0);
            const auto v = static_cast<long>(mesh.node_count());
            const auto e = static_cast<long>(mesh.edge_count());
            const auto f = static_cast<long>(mesh.element_count());
            EXPECT_EQ(v - e + f, 1) << "refinement " << refinement << " coverage " << coverage;
            // boundary edges are exactly the edges used by one triangle; the
            // boundary loop has the same count
            EXPECT_EQ(2 * e - 3 * f, static_cast<long>(mesh.boundary_loop.size()));
        }
    }
}

TEST(Mesh, ElectrodesDisjointAndOrdered) {
    const Mesh mesh = build_disk_mesh(1.0, 4, 16, 0.6);
    std::vector<int> owner(mesh.node_count(), -1);
    double previous = -1.0;
    for (std::size_t l = 0; l < mesh.electrode_count(); ++l) {
        for (const auto& edge : mesh.electrodes[l]) {
            for (auto n : edge) {
                ASSERT_TRUE(owner[n] == -1 || owner[n] == static_cast<int>(l)) << "node shared by electrodes";
                owner[n] = static_cast<int>(l);
            }
        }
        const auto& p = mesh.nodes[mesh.electrodes[l].front()[0]];
        double angle = std::atan2(p[1], p[0]) + std::numbers::pi / 16.0;
        if (angle < 0) angle += 2.0 * std::numbers::pi;
        EXPECT_GT(angle, previous);
        previous = angle;
    }
}

TEST(Mesh, RotationMapIsPermutation) {
    const Mesh mesh = build_disk_mesh(1.0, 3, 16, 0.5);
    const auto map = element_rotation_map(mesh, 1);
    std::vector<int> seen(map.size(), 0);
    for (auto m : map) seen[m]++;
    for (int s : seen) EXPECT_EQ(s, 1);
    // 16 single-step rotations are the identity
    std::vector<std::uint32_t> composed(map.size());
    for (std::size_t e = 0; e < map.size(); ++e) {
        std::uint32_t f = static_cast<std::uint32_t>(e);
        for (int k = 0; k < 16; ++k) f = map[f];
        composed[e] = f;
    }
    for (std::size_t e = 0; e < map.size(); ++e) EXPECT_EQ(composed[e], e);
}

TEST(Mesh, SaveLoadPreservesGeometry) {
    const Mesh mesh = build_disk_mesh(1.0, 2, 16, 0.5);
    const auto dir = std::filesystem::temp_directory_path() / "eitdiff_mesh_roundtrip";
    std::filesystem::remove_all(dir);
    save_mesh(mesh, dir);
    const Mesh back = load_mesh(dir);
    EXPECT_EQ(back.nodes, mesh.nodes);
    EXPECT_EQ(back.elements, mesh.elements);
    EXPECT_EQ(back.electrodes, mesh.electrodes);
    EXPECT_EQ(back.boundary_loop, mesh.boundary_loop);
    EXPECT_EQ(std::filesystem::file_size(dir / "nodes.f64"), mesh.node_count() * 16);
    EXPECT_EQ(std::filesystem::file_size(dir / "elements.u32"), mesh.element_count() * 12);
}

TEST(Mesh, RejectsBadParameters) {
    EXPECT_THROW(build_disk_mesh(0.0, 3, 16, 0.5), ContractError);
    EXPECT_THROW(build_disk_mesh(1.0, 0, 16, 0.5), ContractError);
    EXPECT_THROW(build_disk_mesh(1.0, 3, 16, 1.0), ContractError);
    EXPECT_THROW(build_disk_mesh(1.0, 3, 16, 0.0), ContractError);
}

class ForwardTest : public ::testing::Test {
protected:
    Mesh mesh = build_disk_mesh(1.0, 3, 16, 0.5);
    StimulationProtocol protocol = StimulationProtocol::adjacent(16, 0.01);
    ForwardSolver solver{mesh, protocol, 1e-2};
    ConductivityField homogeneous = ConductivityField::uniform(mesh.element_count(), 0.6);
};

TEST_F(ForwardTest, ProtocolHas208Rows) {
    EXPECT_EQ(protocol.measurement_count(), 208u);
    for (int d = 0; d < 16; ++d) {
        int count = 0;
        for (const auto& r : protocol.rows) count += r.drive == d;
        EXPECT_EQ(count, 13);
    }
}

TEST_F(ForwardTest, HomogeneousFrameIsRotationInvariant) {
    const auto frame = solver.forward(homogeneous);
    ASSERT_EQ(frame.size(), 208u);
    const double scale = max_abs(frame.values);
    for (int k = 1; k < 16; ++k) {
        for (const auto& r : protocol.rows) {
            if (r.drive != 0) continue;
            const int a = protocol.row_index(0, r.measure);
            const int b = protocol.row_index(k, (r.measure + k) % 16);
            ASSERT_GE(b, 0);
            EXPECT_NEAR(frame.values[a], frame.values[b], 1e-10 * scale);
        }
    }
}

TEST_F(ForwardTest, Reciprocity) {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(0.3, 1.2);
    ConductivityField sigma{std::vector<double>(mesh.element_count())};
    for (auto& v : sigma.values) v = u(rng);
    const auto frame = solver.forward(sigma);
    for (std::size_t i = 0; i < protocol.rows.size(); ++i) {
        const auto [d, m] = protocol.rows[i];
        const int j = protocol.row_index(m, d);
        ASSERT_GE(j, 0);
        EXPECT_LT(std::abs(frame.values[i] - frame.values[j]), 1e-8 * std::abs(frame.values[i]));
    }
}

TEST_F(ForwardTest, CurrentConservation) {
    const auto sol = solver.solve(homogeneous);
    const auto residual = solver.residual_currents(homogeneous, sol);
    for (Eigen::Index d = 0; d < residual.cols(); ++d) {
        EXPECT_LT(std::abs(residual.col(d).sum()), 1e-10 * protocol.drive_current);
        EXPECT_LT(residual.col(d).cwiseAbs().maxCoeff(), 1e-10 * protocol.drive_current);
    }
}

TEST_F(ForwardTest, ConductivityScalingDividesVoltages) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.2, 1.0);
    ConductivityField sigma{std::vector<double>(mesh.element_count())};
    for (auto& v : sigma.values) v = u(rng);
    const double c = 3.7;
    ConductivityField scaled = sigma;
    for (auto& v : scaled.values) v *= c;
    const auto base = solver.measure(solver.solve(sigma, 1e-2));
    const auto out = solver.measure(solver.solve(scaled, 1e-2 / c));
    for (std::size_t i = 0; i < base.size(); ++i) EXPECT_NEAR(out.values[i] * c, base.values[i], 1e-12 * max_abs(base.values));
}

TEST_F(ForwardTest, RefinementConvergence) {
    const Mesh fine = build_disk_mesh(1.0, 5, 16, 0.5);
    const auto coarse_frame = solver.forward(homogeneous);
    const auto fine_frame =
        solve_forward(fine, ConductivityField::uniform(fine.element_count(), 0.6), protocol, 1e-2);
    for (std::size_t i = 0; i < coarse_frame.size(); ++i) {
        EXPECT_LT(std::abs(coarse_frame.values[i] - fine_frame.values[i]), 0.02 * std::abs(fine_frame.values[i]))
            << "row " << i;
    }
}

TEST_F(ForwardTest, TimeDifference) {
    const auto v = solver.forward(homogeneous);
    const auto zero = time_difference(v, v);
    EXPECT_EQ(zero.kind, FrameKind::time_difference);
    for (double x : zero.values) EXPECT_EQ(x, 0.0);

    MeasurementFrame shifted = v;
    std::vector<double> u(v.size());
    for (std::size_t i = 0; i < u.size(); ++i) u[i] = std::sin(0.3 * static_cast<double>(i));
    for (std::size_t i = 0; i < u.size(); ++i) shifted.values[i] += 0.25 * u[i];
    const auto diff = time_difference(shifted, v);
    for (std::size_t i = 0; i < u.size(); ++i) EXPECT_NEAR(diff.values[i], 0.25 * u[i], 1e-12);

    ConductivityField inclusion = homogeneous;
    for (std::size_t e = 0; e < mesh.element_count(); ++e) {
        const auto c = mesh.centroid(e);
        if (std::hypot(c[0] - 0.3, c[1]) < 0.25) inclusion.values[e] = 0.003;
    }
    const auto v2 = solver.forward(inclusion);
    const auto td = time_difference(v2, v);
    double norm = 0.0;
    for (std::size_t i = 0; i < td.size(); ++i) {
        EXPECT_EQ(td.values[i], v2.values[i] - v.values[i]);
        norm += td.values[i] * td.values[i];
    }
    EXPECT_GT(norm, 0.0);

    MeasurementFrame short_frame{std::vector<double>(10)};
    EXPECT_THROW(time_difference(short_frame, v), ContractError);
    EXPECT_THROW(time_difference(td, v), ContractError);
}

TEST_F(ForwardTest, ErrorPaths) {
    EXPECT_THROW(solver.forward(ConductivityField::uniform(5, 0.6)), ContractError);
    ConductivityField zeroed = homogeneous;
    zeroed.values[3] = 0.0;
    EXPECT_THROW(solver.forward(zeroed), NumericalError);
    EXPECT_THROW(ForwardSolver(mesh, protocol, 0.0), ContractError);
}

TEST_F(ForwardTest, JacobianMatchesFiniteDifferences) {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0.4, 0.9);
    ConductivityField sigma{std::vector<double>(mesh.element_count())};
    for (auto& v : sigma.values) v = u(rng);
    const Eigen::MatrixXd jac = solver.jacobian(sigma);
    ASSERT_EQ(jac.rows(), 208);
    ASSERT_EQ(jac.cols(), static_cast<Eigen::Index>(mesh.element_count()));

    std::uniform_int_distribution<std::size_t> pick(0, mesh.element_count() - 1);
    int checked = 0;
    for (int k = 0; k < 8; ++k) {
        const std::size_t e = pick(rng);
        const double h = 1e-6 * sigma.values[e];
        ConductivityField plus = sigma, minus = sigma;
        plus.values[e] += h;
        minus.values[e] -= h;
        const auto fp = solver.forward(plus);
        const auto fm = solver.forward(minus);
        const double col_scale = jac.col(static_cast<Eigen::Index>(e)).cwiseAbs().maxCoeff();
        for (std::size_t r = 0; r < fp.size(); ++r) {
            const double fd = (fp.values[r] - fm.values[r]) / (2.0 * h);
            const double adj = jac(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(e));
            EXPECT_LT(std::abs(fd - adj), 1e-3 * std::max(std::abs(adj), 1e-3 * col_scale)) << "row " << r << " elem " << e;
            ++checked;
        }
    }
    EXPECT_GE(checked, 100);
}

TEST_F(ForwardTest, JacobianRotationalSymmetry) {
    const Eigen::MatrixXd jac = solver.jacobian(homogeneous);
    const auto rot = element_rotation_map(mesh, 1);
    const double scale = jac.cwiseAbs().maxCoeff();
    for (std::size_t e = 0; e < mesh.element_count(); e += 7) {
        for (std::size_t r = 0; r < protocol.rows.size(); ++r) {
            const auto [d, m] = protocol.rows[r];
            const int rr = protocol.row_index((d + 1) % 16, (m + 1) % 16);
            EXPECT_NEAR(jac(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(e)),
                        jac(rr, static_cast<Eigen::Index>(rot[e])), 1e-9 * scale);
        }
    }
}

TEST_F(ForwardTest, JacobianLinearizationIsFirstOrder) {
    const Eigen::MatrixXd jac = solver.jacobian(homogeneous);
    const auto base = solver.forward(homogeneous);
    auto relative_residual = [&](double c) {
        ConductivityField shifted = homogeneous;
        for (auto& v : shifted.values) v += c;
        const auto f = solver.forward(shifted);
        const Eigen::VectorXd predicted = jac * Eigen::VectorXd::Constant(jac.cols(), c);
        double num = 0.0, den = 0.0;
        for (std::size_t r = 0; r < f.size(); ++r) {
            const double actual = f.values[r] - base.values[r];
            num += std::pow(actual - predicted(static_cast<Eigen::Index>(r)), 2);
            den += actual * actual;
        }
        return std::sqrt(num / den);
    };
    const double r1 = relative_residual(1e-2);
    const double r2 = relative_residual(1e-3);
    const double r3 = relative_residual(1e-4);
    EXPECT_LT(r2, 0.2 * r1);
    EXPECT_LT(r3, 0.2 * r2);
    EXPECT_GT(r2, 0.05 * r1);
}
