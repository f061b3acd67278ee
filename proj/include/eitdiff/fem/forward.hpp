#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "eitdiff/core/error.hpp"
#include "eitdiff/fem/mesh.hpp"

namespace eitdiff {

struct ConductivityField {
    std::vector<double> values; // S/m, one per element

    static ConductivityField uniform(std::size_t n, double sigma) { return {std::vector<double>(n, sigma)}; }
    std::size_t size() const { return values.size(); }
};

enum class FrameKind { absolute, time_difference };

struct MeasurementFrame {
    std::vector<double> values; // volts
    FrameKind kind = FrameKind::absolute;

    std::size_t size() const { return values.size(); }
};

// Adjacent drive / adjacent measurement. Pairs sharing an electrode with the
// active drive are skipped, leaving E-3 measurements per drive.
struct StimulationProtocol {
    struct Row {
        int drive;
        int measure;
    };

    int n_electrodes = 16;
    double drive_current = 0.01; // amperes
    std::vector<Row> rows;       // drive-major, measurement index ascending

    static StimulationProtocol adjacent(int n_electrodes = 16, double drive_current = 0.01) {
        require(n_electrodes >= 4, "adjacent protocol needs at least 4 electrodes");
        StimulationProtocol p;
        p.n_electrodes = n_electrodes;
        p.drive_current = drive_current;
        for (int d = 0; d < n_electrodes; ++d) {
            for (int m = 0; m < n_electrodes; ++m) {
                const bool shares = m == d || (m + 1) % n_electrodes == d || m == (d + 1) % n_electrodes;
                if (!shares) p.rows.push_back({d, m});
            }
        }
        return p;
    }

    std::size_t measurement_count() const { return rows.size(); }
    int drive_count() const { return n_electrodes; }

    // Row index of (drive, measure), or -1 when excluded.
    int row_index(int drive, int measure) const {
        for (std::size_t i = 0; i < rows.size(); ++i)
            if (rows[i].drive == drive && rows[i].measure == measure) return static_cast<int>(i);
        return -1;
    }
};

inline MeasurementFrame time_difference(const MeasurementFrame& v2, const MeasurementFrame& v1) {
    require(v2.size() == v1.size(), "time_difference: frame lengths differ");
    require(v2.kind == FrameKind::absolute && v1.kind == FrameKind::absolute,
            "time_difference: both frames must be absolute");
    MeasurementFrame out{std::vector<double>(v2.size()), FrameKind::time_difference};
    for (std::size_t i = 0; i < v2.size(); ++i) out.values[i] = v2.values[i] - v1.values[i];
    return out;
}

// Potentials for every drive pattern: column d is drive d (current +I into
// electrode d, -I out of electrode d+1).
struct ForwardSolution {
    Eigen::MatrixXd node_potentials;      // nodes x drives
    Eigen::MatrixXd electrode_potentials; // electrodes x drives
};

// Complete electrode model on linear triangles. The node at index 0 is
// grounded; all remaining node and electrode potentials are unknowns.
// Holds only immutable precomputed geometry, so one instance can serve
// concurrent solves.
class ForwardSolver {
public:
    ForwardSolver(const Mesh& mesh, StimulationProtocol protocol, double contact_impedance = 1e-2)
        : mesh_(mesh), protocol_(std::move(protocol)), contact_impedance_(contact_impedance) {
        require(contact_impedance > 0.0, "ForwardSolver: contact impedance must be positive");
        require(static_cast<int>(mesh.electrode_count()) == protocol_.n_electrodes,
                "ForwardSolver: protocol electrode count differs from mesh");
        precompute_element_matrices();
    }

    const Mesh& mesh() const { return mesh_; }
    const StimulationProtocol& protocol() const { return protocol_; }
    double contact_impedance() const { return contact_impedance_; }

    std::size_t unknown_count() const { return mesh_.node_count() - 1 + mesh_.electrode_count(); }

    // Full (ungrounded) system matrix for the given conductivity and contact
    // impedance; the grounded system drops row/column 0.
    Eigen::SparseMatrix<double> assemble_full(const ConductivityField& sigma, double contact_impedance) const {
        check_field(sigma);
        const std::size_t nn = mesh_.node_count();
        const std::size_t n = nn + mesh_.electrode_count();
        std::vector<Eigen::Triplet<double>> trips;
        trips.reserve(mesh_.element_count() * 9 + mesh_.electrode_count() * 16);
        for (std::size_t e = 0; e < mesh_.element_count(); ++e) {
            const auto& t = mesh_.elements[e];
            const auto& s = shape_[e];
            for (int a = 0; a < 3; ++a)
                for (int b = 0; b < 3; ++b) trips.emplace_back(t[a], t[b], sigma.values[e] * s(a, b));
        }
        const double zi = 1.0 / contact_impedance;
        for (std::size_t l = 0; l < mesh_.electrode_count(); ++l) {
            const auto el = static_cast<int>(nn + l);
            for (const auto& edge : mesh_.electrodes[l]) {
                const auto& p = mesh_.nodes[edge[0]];
                const auto& q = mesh_.nodes[edge[1]];
                const double h = std::hypot(q[0] - p[0], q[1] - p[1]);
                trips.emplace_back(edge[0], edge[0], zi * h / 3.0);
                trips.emplace_back(edge[1], edge[1], zi * h / 3.0);
                trips.emplace_back(edge[0], edge[1], zi * h / 6.0);
                trips.emplace_back(edge[1], edge[0], zi * h / 6.0);
                trips.emplace_back(edge[0], el, -zi * h / 2.0);
                trips.emplace_back(el, edge[0], -zi * h / 2.0);
                trips.emplace_back(edge[1], el, -zi * h / 2.0);
                trips.emplace_back(el, edge[1], -zi * h / 2.0);
                trips.emplace_back(el, el, zi * h);
            }
        }
        Eigen::SparseMatrix<double> a(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
        a.setFromTriplets(trips.begin(), trips.end());
        return a;
    }

    // Right-hand sides of the full system, one column per drive.
    Eigen::MatrixXd drive_currents() const {
        const std::size_t nn = mesh_.node_count();
        const int ne = protocol_.n_electrodes;
        Eigen::MatrixXd b = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(nn + ne), ne);
        for (int d = 0; d < ne; ++d) {
            b(static_cast<Eigen::Index>(nn + d), d) = protocol_.drive_current;
            b(static_cast<Eigen::Index>(nn + (d + 1) % ne), d) = -protocol_.drive_current;
        }
        return b;
    }

    ForwardSolution solve(const ConductivityField& sigma) const { return solve(sigma, contact_impedance_); }

    // One factorization, back-substituted for all drives.
    ForwardSolution solve(const ConductivityField& sigma, double contact_impedance) const {
        require(contact_impedance > 0.0, "solve_forward: contact impedance must be positive");
        check_field(sigma);
        for (double v : sigma.values) {
            if (!(v > 0.0) || !std::isfinite(v)) throw NumericalError("solve_forward: conductivity must be positive and finite");
        }
        const Eigen::SparseMatrix<double> full = assemble_full(sigma, contact_impedance);
        const Eigen::Index n = full.rows() - 1;
        const Eigen::SparseMatrix<double> grounded = full.bottomRightCorner(n, n);

        Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt;
        ldlt.compute(grounded);
        if (ldlt.info() != Eigen::Success) throw NumericalError("solve_forward: factorization failed");
        const Eigen::MatrixXd rhs = drive_currents().bottomRows(n);
        const Eigen::MatrixXd x = ldlt.solve(rhs);
        if (ldlt.info() != Eigen::Success || !x.allFinite()) throw NumericalError("solve_forward: singular system");

        const auto nn = static_cast<Eigen::Index>(mesh_.node_count());
        ForwardSolution sol;
        sol.node_potentials = Eigen::MatrixXd::Zero(nn, x.cols());
        sol.node_potentials.bottomRows(nn - 1) = x.topRows(nn - 1);
        sol.electrode_potentials = x.bottomRows(static_cast<Eigen::Index>(mesh_.electrode_count()));
        return sol;
    }

    MeasurementFrame measure(const ForwardSolution& sol) const {
        MeasurementFrame frame{std::vector<double>(protocol_.measurement_count()), FrameKind::absolute};
        const int ne = protocol_.n_electrodes;
        for (std::size_t r = 0; r < protocol_.rows.size(); ++r) {
            const auto [d, m] = protocol_.rows[r];
            frame.values[r] = sol.electrode_potentials(m, d) - sol.electrode_potentials((m + 1) % ne, d);
        }
        return frame;
    }

    MeasurementFrame forward(const ConductivityField& sigma) const { return measure(solve(sigma)); }

    // Residual A_full x - b of the ungrounded system, per drive. Its entries
    // are the unbalanced nodal/electrode currents; entry 0 is the current
    // leaking into the ground node.
    Eigen::MatrixXd residual_currents(const ConductivityField& sigma, const ForwardSolution& sol) const {
        const Eigen::SparseMatrix<double> full = assemble_full(sigma, contact_impedance_);
        Eigen::MatrixXd x(full.rows(), sol.node_potentials.cols());
        x.topRows(sol.node_potentials.rows()) = sol.node_potentials;
        x.bottomRows(sol.electrode_potentials.rows()) = sol.electrode_potentials;
        return full * x - drive_currents();
    }

    // Sensitivity dV/dsigma by the adjoint identity: the field for a unit
    // current in measurement pattern m is the drive-m solution divided by I.
    Eigen::MatrixXd jacobian(const ConductivityField& sigma) const {
        const ForwardSolution sol = solve(sigma);
        const auto& u = sol.node_potentials;
        const double inv_i = 1.0 / protocol_.drive_current;
        Eigen::MatrixXd jac(static_cast<Eigen::Index>(protocol_.measurement_count()),
                            static_cast<Eigen::Index>(mesh_.element_count()));
        Eigen::Matrix<double, 3, Eigen::Dynamic> local_u(3, u.cols());
        Eigen::Matrix<double, 3, Eigen::Dynamic> grad_u(3, u.cols());
        for (std::size_t e = 0; e < mesh_.element_count(); ++e) {
            const auto& t = mesh_.elements[e];
            for (int a = 0; a < 3; ++a) local_u.row(a) = u.row(t[a]);
            grad_u.noalias() = shape_[e] * local_u;
            for (std::size_t r = 0; r < protocol_.rows.size(); ++r) {
                const auto [d, m] = protocol_.rows[r];
                jac(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(e)) =
                    -inv_i * local_u.col(m).dot(grad_u.col(d));
            }
        }
        return jac;
    }

private:
    void check_field(const ConductivityField& sigma) const {
        require(sigma.size() == mesh_.element_count(), "conductivity field has " + std::to_string(sigma.size()) +
                                                            " values, mesh has " +
                                                            std::to_string(mesh_.element_count()) + " elements");
    }

    // Per-element stiffness for unit conductivity: (b b^T + c c^T) / (4A).
    void precompute_element_matrices() {
        shape_.resize(mesh_.element_count());
        for (std::size_t e = 0; e < mesh_.element_count(); ++e) {
            const auto& t = mesh_.elements[e];
            const auto& p0 = mesh_.nodes[t[0]];
            const auto& p1 = mesh_.nodes[t[1]];
            const auto& p2 = mesh_.nodes[t[2]];
            const Eigen::Vector3d b(p1[1] - p2[1], p2[1] - p0[1], p0[1] - p1[1]);
            const Eigen::Vector3d c(p2[0] - p1[0], p0[0] - p2[0], p1[0] - p0[0]);
            shape_[e] = (b * b.transpose() + c * c.transpose()) / (4.0 * mesh_.element_areas[e]);
        }
    }

    Mesh mesh_;
    StimulationProtocol protocol_;
    double contact_impedance_;
    std::vector<Eigen::Matrix3d> shape_;
};

inline MeasurementFrame solve_forward(const Mesh& mesh, const ConductivityField& sigma,
                                      const StimulationProtocol& protocol, double contact_impedance = 1e-2) {
    return ForwardSolver(mesh, protocol, contact_impedance).forward(sigma);
}

inline Eigen::MatrixXd jacobian(const Mesh& mesh, const ConductivityField& sigma,
                                const StimulationProtocol& protocol, double contact_impedance = 1e-2) {
    return ForwardSolver(mesh, protocol, contact_impedance).jacobian(sigma);
}

} // namespace eitdiff
