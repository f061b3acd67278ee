#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "eitdiff/core/error.hpp"
#include "eitdiff/inverse/tv.hpp"

namespace eitdiff {

struct PdipmOptions {
    double beta_smooth = 1e-8; // floor of the |.| smoothing, sqrt(x^2 + beta)
    double mu0 = 1e-2;         // initial barrier weight on the dual box |x| <= 1
    double mu_decay = 0.5;
    int max_outer = 40;
    double tol = 1e-6; // gap relative to the starting merit, stationarity relative to |J^T b|_inf
};

struct PdipmResult {
    Eigen::VectorXd sigma;
    Eigen::VectorXd dual;
    std::vector<double> merit;    // merit after each outer iteration, merit[0] at the start
    std::vector<double> dual_max; // max |x| after each iteration
    std::vector<double> mu;       // barrier weight used by each iteration
    double gap = 0.0;          // primal-dual gap at return
    double stationarity = 0.0; // |KKT residual|_inf / |J^T b|_inf at return
    int iterations = 0;
    bool converged = false;
};

// Minimizes 1/2 |J s - b|^2 + lambda TV(s) by primal-dual interior-point
// Newton iterations on the TV dual. The dual variables x live in the box
// |x| <= 1; the barrier weight mu perturbs complementarity as
// x_k sqrt(y_k^2 + mu^2) = y_k with y = L s, and mu is reduced geometrically.
// Primal steps are backtracked on the exact merit, dual steps use the
// fraction-to-boundary rule.
class PdipmSolver {
public:
    // jtj = J^T J may be passed in when the same J is reused across solves.
    PdipmSolver(const Eigen::MatrixXd& j, const TVOperator& tv, Eigen::MatrixXd jtj = {})
        : j_(j), l_(tv.difference_matrix()), w_(tv.weights()) {
        require(static_cast<std::size_t>(j.cols()) == tv.unknowns, "pdipm: Jacobian columns do not match TV unknowns");
        jtj_ = jtj.size() == 0 ? Eigen::MatrixXd(j.transpose() * j) : std::move(jtj);
    }

    double merit(const Eigen::VectorXd& sigma, const Eigen::VectorXd& b, double lambda) const {
        const Eigen::VectorXd r = j_ * sigma - b;
        const Eigen::VectorXd y = l_ * sigma;
        return 0.5 * r.squaredNorm() + lambda * w_.dot(y.cwiseAbs());
    }

    PdipmResult solve(const Eigen::VectorXd& b, double lambda, const PdipmOptions& opts = {}) const {
        require(b.size() == j_.rows(), "pdipm: measurement length does not match the Jacobian");
        require(lambda > 0.0, "pdipm: lambda must be positive");
        require(opts.mu0 > 0.0 && opts.mu_decay > 0.0 && opts.mu_decay < 1.0, "pdipm: invalid barrier schedule");

        const Eigen::Index n = j_.cols();
        const Eigen::Index m = l_.rows();
        PdipmResult out;
        out.sigma = Eigen::VectorXd::Zero(n);
        out.dual = Eigen::VectorXd::Zero(m);
        const Eigen::VectorXd jtb = j_.transpose() * b;
        double current = merit(out.sigma, b, lambda);
        out.merit.push_back(current);
        if (jtb.cwiseAbs().maxCoeff() == 0.0) {
            out.converged = true;
            return out;
        }
        const double grad_scale = jtb.cwiseAbs().maxCoeff();
        const Eigen::SparseMatrix<double> lt = l_.transpose();

        double mu = opts.mu0;
        for (int it = 0; it < opts.max_outer; ++it) {
            const double beta = std::max(mu * mu, opts.beta_smooth);
            auto& sigma = out.sigma;
            auto& x = out.dual;

            const Eigen::VectorXd y = l_ * sigma;
            const Eigen::VectorXd eta = (y.array().square() + beta).sqrt();
            const Eigen::VectorXd f1 = jtj_ * sigma - jtb + lambda * (lt * w_.cwiseProduct(x));
            const Eigen::VectorXd f2 = eta.cwiseProduct(x) - y;

            // Reduced Newton system after eliminating dx.
            const Eigen::VectorXd couple =
                (w_.array() * (1.0 - x.array() * y.array() / eta.array()) / eta.array()).matrix();
            Eigen::MatrixXd h = jtj_;
            add_weighted_laplacian(h, lambda * couple);
            const Eigen::VectorXd rhs = -f1 + lambda * (lt * (w_.cwiseProduct(f2).cwiseQuotient(eta)));

            const Eigen::VectorXd ds = newton_step(h, rhs);
            const Eigen::VectorXd dx =
                ((-f2).array() + (1.0 - x.array() * y.array() / eta.array()) * (l_ * ds).array()) / eta.array();

            // primal: halve until the exact merit does not increase
            double step = 1.0;
            double trial = merit(sigma + step * ds, b, lambda);
            int halvings = 0;
            while (!(trial <= current) && halvings < 40) {
                step *= 0.5;
                trial = merit(sigma + step * ds, b, lambda);
                ++halvings;
            }
            if (!(trial <= current)) {
                step = 0.0;
                trial = current;
            }

            // dual: fraction to the boundary of the unit box
            double t_max = 1.0;
            for (Eigen::Index k = 0; k < m; ++k) {
                if (dx(k) > 0.0) t_max = std::min(t_max, (1.0 - x(k)) / dx(k));
                else if (dx(k) < 0.0) t_max = std::min(t_max, (-1.0 - x(k)) / dx(k));
            }
            const double dual_step = t_max >= 1.0 ? 1.0 : 0.99 * t_max;

            sigma += step * ds;
            x = (x + dual_step * dx).cwiseMax(-1.0).cwiseMin(1.0);
            current = trial;
            out.merit.push_back(current);
            out.dual_max.push_back(x.cwiseAbs().maxCoeff());
            out.mu.push_back(mu);
            out.iterations = it + 1;

            const Eigen::VectorXd y_new = l_ * sigma;
            const double gap = lambda * (w_.array() * (y_new.array().abs() - x.array() * y_new.array())).sum();
            const Eigen::VectorXd stationarity = jtj_ * sigma - jtb + lambda * (lt * w_.cwiseProduct(x));
            out.gap = gap;
            out.stationarity = stationarity.cwiseAbs().maxCoeff() / grad_scale;
            const bool floor_reached = mu * mu <= opts.beta_smooth;
            if (floor_reached && gap <= opts.tol * out.merit.front() &&
                stationarity.cwiseAbs().maxCoeff() <= opts.tol * grad_scale) {
                out.converged = true;
                break;
            }
            mu *= opts.mu_decay;
        }
        return out;
    }

private:
    void add_weighted_laplacian(Eigen::MatrixXd& h, const Eigen::VectorXd& d) const {
        const Eigen::SparseMatrix<double> ltdl = l_.transpose() * d.asDiagonal() * l_;
        for (int k = 0; k < ltdl.outerSize(); ++k)
            for (Eigen::SparseMatrix<double>::InnerIterator it(ltdl, k); it; ++it) h(it.row(), it.col()) += it.value();
    }

    // H is SPD whenever |x| <= 1 (every coupling weight is positive), so
    // Cholesky is tried first; LDLT with growing diagonal damping is the fallback.
    Eigen::VectorXd newton_step(Eigen::MatrixXd& h, const Eigen::VectorXd& rhs) const {
        {
            Eigen::LLT<Eigen::MatrixXd> llt(h);
            if (llt.info() == Eigen::Success) {
                Eigen::VectorXd ds = llt.solve(rhs);
                if (ds.allFinite()) return ds;
            }
        }
        double damping = 0.0;
        const double diag_scale = h.diagonal().cwiseAbs().maxCoeff();
        for (int attempt = 0; attempt < 6; ++attempt) {
            if (damping > 0.0) h.diagonal().array() += damping * diag_scale;
            Eigen::LDLT<Eigen::MatrixXd> ldlt(h);
            if (ldlt.info() == Eigen::Success) {
                Eigen::VectorXd ds = ldlt.solve(rhs);
                if (ds.allFinite()) return ds;
            }
            damping = damping == 0.0 ? 1e-12 : damping * 100.0;
        }
        throw NumericalError("pdipm: Newton step stayed non-finite after damping");
    }

    Eigen::MatrixXd j_;
    Eigen::SparseMatrix<double> l_;
    Eigen::VectorXd w_;
    Eigen::MatrixXd jtj_;
};

inline PdipmResult pdipm_solve(const Eigen::MatrixXd& j, const Eigen::VectorXd& b, const TVOperator& tv,
                               double lambda, const PdipmOptions& opts = {}) {
    return PdipmSolver(j, tv).solve(b, lambda, opts);
}

} // namespace eitdiff
