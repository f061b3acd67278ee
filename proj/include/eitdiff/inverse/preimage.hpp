#pragma once

#include <memory>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "eitdiff/core/error.hpp"
#include "eitdiff/fem/forward.hpp"
#include "eitdiff/fem/mesh.hpp"
#include "eitdiff/inverse/pdipm.hpp"
#include "eitdiff/inverse/tv.hpp"
#include "eitdiff/phantom/raster.hpp"

namespace eitdiff {

struct PreimageOptions {
    double background_sigma = 0.6;
    double contact_impedance = 1e-2;
    double lambda = 1e-3; // relative: the TV weight is lambda * |J^T b|_inf
    bool clamp_admissible = true; // project delta onto [-background, inf) before rasterizing
    int grid = 64;
    PdipmOptions pdipm;
    IdwOptions idw;
};

// Initial reconstruction: one-step linearization about the homogeneous
// background on the coarse inversion mesh, TV-regularized PDIPM, then IDW
// rasterization. Everything that depends only on the mesh is precomputed,
// so a Preimager is cheap to reuse and safe to share across threads.
class Preimager {
public:
    Preimager(const Mesh& coarse, const StimulationProtocol& protocol, PreimageOptions opts = {})
        : mesh_(coarse), opts_(opts), tv_(tv_operator(coarse)), idw_(coarse, opts.grid, IdwSites::elements, opts.idw) {
        require(opts.lambda > 0.0, "preimage: lambda must be positive");
        const ForwardSolver solver(coarse, protocol, opts.contact_impedance);
        jacobian_ = solver.jacobian(ConductivityField::uniform(coarse.element_count(), opts.background_sigma));
        solver_ = std::make_unique<PdipmSolver>(jacobian_, tv_);
    }

    const Eigen::MatrixXd& jacobian() const { return jacobian_; }
    const TVOperator& tv() const { return tv_; }
    const Mesh& mesh() const { return mesh_; }
    const PreimageOptions& options() const { return opts_; }

    double absolute_lambda(const Eigen::VectorXd& b) const {
        return opts_.lambda * (jacobian_.transpose() * b).cwiseAbs().maxCoeff();
    }

    // Per-element conductivity change on the coarse mesh.
    PdipmResult solve_elements(const MeasurementFrame& v) const {
        require(v.kind == FrameKind::time_difference, "preimage: frame must be a time-difference frame");
        require(v.size() == static_cast<std::size_t>(jacobian_.rows()), "preimage: frame length does not match protocol");
        const Eigen::VectorXd b = Eigen::Map<const Eigen::VectorXd>(v.values.data(), static_cast<Eigen::Index>(v.size()));
        const double lambda = absolute_lambda(b);
        if (lambda == 0.0) {
            PdipmResult zero;
            zero.sigma = Eigen::VectorXd::Zero(jacobian_.cols());
            zero.dual = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(tv_.links.size()));
            zero.merit.push_back(0.0);
            zero.converged = true;
            return zero;
        }
        return solver_->solve(b, lambda, opts_.pdipm);
    }

    PixelImage rasterize(const Eigen::VectorXd& elements) const {
        return idw_.apply(std::span<const double>(elements.data(), static_cast<std::size_t>(elements.size())));
    }

    // A linearization about the background overshoots strongly insulating
    // inclusions; values below -background would be negative conductivity.
    Eigen::VectorXd admissible(Eigen::VectorXd elements) const {
        if (opts_.clamp_admissible) elements = elements.cwiseMax(-opts_.background_sigma);
        return elements;
    }

    PixelImage operator()(const MeasurementFrame& v) const {
        return rasterize(admissible(solve_elements(v).sigma));
    }

private:
    Mesh mesh_;
    PreimageOptions opts_;
    TVOperator tv_;
    IdwInterpolator idw_;
    Eigen::MatrixXd jacobian_;
    std::unique_ptr<PdipmSolver> solver_;
};

inline PixelImage preimage(const MeasurementFrame& v, const Mesh& coarse, const StimulationProtocol& protocol,
                           const PreimageOptions& opts = {}) {
    return Preimager(coarse, protocol, opts)(v);
}

} // namespace eitdiff
