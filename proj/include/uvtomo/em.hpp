#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include <Eigen/Eigenvalues>

#include "error.hpp"
#include "fb_basis.hpp"
#include "spectral.hpp"
#include "types.hpp"

namespace uvtomo {

struct EmConfig {
    int max_iter = 100;
    double tol_loglik = 1e-10;   // stop when the relative log-likelihood increase falls below
    double pinv_cutoff = 1e-10;  // relative eigenvalue cutoff when whitening the noise covariance
    // M-step cutoff. Much looser than the whitening one: near-null directions of the normal
    // matrix otherwise soak up the slice-model mismatch and the amplitude runs away.
    double mstep_cutoff = 1e-3;
    std::uint64_t seed = 0;

    void validate() const {
        if (max_iter < 1) throw ConfigError("EmConfig: max_iter must be >= 1");
        if (!(pinv_cutoff > 0.0 && pinv_cutoff < 1.0)) throw ConfigError("EmConfig: pinv_cutoff must be in (0, 1)");
        if (!(mstep_cutoff > 0.0 && mstep_cutoff < 1.0)) throw ConfigError("EmConfig: mstep_cutoff must be in (0, 1)");
    }
};

/// pi(phi_l | yhat_i): rows are records, columns grid angles; row-stochastic.
struct Responsibilities {
    MatrixXd pi;
};

/// Likelihood machinery for the spectral batch, whitened once by the pseudo-inverse
/// square root of the per-tilt noise block: Sigma^+ = V L^-1 V^*, whitener L^{-1/2} V^*.
class EmProblem {
public:
    EmProblem(const SpectralBatch& batch, const NoiseModel& noise, const BasisSpec& spec, int n_theta,
              double pinv_cutoff = 1e-10)
        : orders_(spec.orders()), n_theta_(n_theta) {
        if (n_theta < 1) throw DomainError("EmProblem: n_theta must be >= 1");
        if (noise.record_length() != batch.record_length()) throw DomainError("EmProblem: noise does not match batch");
        if (!(noise.sigma2 > 0.0)) throw DomainError("EmProblem: likelihood needs sigma2 > 0");

        Eigen::SelfAdjointEigenSolver<MatrixXc> eig(noise.block);
        const VectorXd& lam = eig.eigenvalues();
        const double lmax = lam.maxCoeff();
        std::vector<Index> keep;
        for (Index i = 0; i < lam.size(); ++i)
            if (lam[i] > pinv_cutoff * lmax) keep.push_back(i);
        const Index r = static_cast<Index>(keep.size());
        const Index nx = noise.block.rows();
        MatrixXc whiten(r, nx);
        for (Index i = 0; i < r; ++i)
            whiten.row(i) = eig.eigenvectors().col(keep[static_cast<std::size_t>(i)]).adjoint() / std::sqrt(lam[keep[static_cast<std::size_t>(i)]]);

        const int T = batch.tilts();
        const MatrixXc psi = eval_tilt_matrix(spec, radial_matrix(spec, batch.quad), batch.K, batch.alpha);
        psi_.resize(T * r, spec.size());
        data_.resize(batch.N(), T * r);
        for (int t = 0; t < T; ++t) {
            psi_.middleRows(t * r, r) = whiten * psi.middleRows(t * nx, nx);
            if (batch.N() > 0) data_.middleCols(t * r, r) = batch.yhat.middleCols(t * nx, nx) * whiten.transpose();
        }
        gram_ = psi_.adjoint() * psi_;
        gram_ = 0.5 * (gram_ + gram_.adjoint()).eval();
        data_norms_ = data_.rowwise().squaredNorm();
        steer_.resize(spec.size(), n_theta);
        for (int l = 0; l < n_theta; ++l)
            for (Index u = 0; u < spec.size(); ++u)
                steer_(u, l) = unit_phase(kTwoPi * static_cast<double>((static_cast<long long>(orders_[u]) * l % n_theta + n_theta) % n_theta) / n_theta);
    }

    int N() const { return static_cast<int>(data_.rows()); }
    int n_theta() const { return n_theta_; }
    Index size() const { return psi_.cols(); }
    const MatrixXc& steer() const { return steer_; }

    /// r(i, l) = (yhat_i - Psi_l a)^* Sigma^+ (yhat_i - Psi_l a), with Psi_l = Psi diag(e^{i k phi_l}).
    MatrixXd residuals(const VectorXc& a) const {
        const MatrixXc EA = steer_.array().colwise() * a.array();
        const MatrixXc models = psi_ * EA;                     // whitened Psi_l a per column
        const VectorXd model_norms = models.colwise().squaredNorm().transpose();
        const MatrixXd cross = (data_.conjugate() * models).real();
        MatrixXd r = (-2.0 * cross).colwise() + data_norms_;
        r.rowwise() += model_norms.transpose();
        return r.cwiseMax(0.0);
    }

    /// Rows of log(p_l) - r_il / 2, or -inf where p_l = 0.
    MatrixXd log_terms(const VectorXc& a, const VectorXd& p) const {
        MatrixXd lt = -0.5 * residuals(a);
        for (int l = 0; l < n_theta_; ++l) {
            const double lp = p[l] > 0.0 ? std::log(p[l]) : -std::numeric_limits<double>::infinity();
            lt.col(l).array() += lp;
        }
        return lt;
    }

    /// Normal matrix sum_l w_l Psi_l^* Sigma^+ Psi_l = gram o Hw, Hw[u,v] = sum_l w_l e^{i (k_v - k_u) phi_l}.
    MatrixXc weighted_gram(const VectorXd& w) const {
        const MatrixXc Hw = steer_.conjugate() * w.cast<cplx>().asDiagonal() * steer_.transpose();
        return gram_.cwiseProduct(Hw);
    }

    /// sum_l diag(conj e_l) Psi^* Sigma^+ (sum_i pi_il yhat_i).
    VectorXc weighted_data(const MatrixXd& pi) const {
        const MatrixXc S = data_.transpose() * pi.cast<cplx>();  // (T r) x n_theta
        const MatrixXc PS = psi_.adjoint() * S;                   // n_a x n_theta
        return steer_.conjugate().cwiseProduct(PS).rowwise().sum();
    }

private:
    Eigen::VectorXi orders_;
    int n_theta_;
    MatrixXc psi_;   // whitened tilt matrix
    RowMatrixXc data_;  // whitened records
    MatrixXc gram_;
    VectorXd data_norms_;
    MatrixXc steer_;
};

namespace detail {

inline void check_distribution(const VectorXd& p, int n_theta) {
    if (p.size() != n_theta) throw DomainError("EM: p has the wrong length");
    if (!p.allFinite() || p.minCoeff() < 0.0) throw DomainError("EM: p must be finite and non-negative");
    if (!(p.sum() > 0.0)) throw DomainError("EM: p has zero total mass");
}

inline double row_logsumexp(const MatrixXd& lt, Index i) {
    const double m = lt.row(i).maxCoeff();
    if (!std::isfinite(m)) return m;
    return m + std::log((lt.row(i).array() - m).exp().sum());
}

}  // namespace detail

/// sum_i ln sum_l p_l exp(-r_il / 2); the constant normalization ln Z is dropped.
inline double log_marginal_likelihood(const EmProblem& prob, const VectorXc& a, const VectorXd& p) {
    detail::check_distribution(p, prob.n_theta());
    const MatrixXd lt = prob.log_terms(a, p / p.sum());
    double acc = 0.0;
    for (Index i = 0; i < lt.rows(); ++i) acc += detail::row_logsumexp(lt, i);
    return acc;
}

inline Responsibilities e_step(const EmProblem& prob, const VectorXc& a, const VectorXd& p) {
    detail::check_distribution(p, prob.n_theta());
    const MatrixXd lt = prob.log_terms(a, p / p.sum());
    Responsibilities r;
    r.pi.resize(lt.rows(), lt.cols());
    for (Index i = 0; i < lt.rows(); ++i) {
        const double m = lt.row(i).maxCoeff();
        r.pi.row(i) = (lt.row(i).array() - m).exp();
        r.pi.row(i) /= r.pi.row(i).sum();
    }
    return r;
}

struct EmEstimate {
    VectorXc a;
    VectorXd p;
};

/// p_l = column means of pi; a from the pseudo-inverse of the weighted normal equations.
/// With `prev`, directions below the cutoff keep their previous value instead of being zeroed,
/// so the step maximizes over an affine subspace through prev and the likelihood cannot drop.
inline EmEstimate m_step(const EmProblem& prob, const Responsibilities& resp, double pinv_cutoff = 1e-10,
                         const VectorXc* prev = nullptr) {
    if (resp.pi.rows() != prob.N() || resp.pi.cols() != prob.n_theta())
        throw DomainError("m_step: responsibilities do not match the batch");
    const VectorXd w = resp.pi.colwise().sum().transpose();
    if (!(w.sum() > 0.0)) throw DomainError("m_step: all-zero responsibilities");

    EmEstimate est;
    est.p = w / static_cast<double>(prob.N());
    est.p /= est.p.sum();

    MatrixXc normal = prob.weighted_gram(w);
    normal = 0.5 * (normal + normal.adjoint()).eval();
    VectorXc rhs = prob.weighted_data(resp.pi);
    if (prev) {
        if (prev->size() != prob.size()) throw DomainError("m_step: previous coefficients have the wrong length");
        rhs -= normal * *prev;
    }
    Eigen::SelfAdjointEigenSolver<MatrixXc> eig(normal);
    const VectorXd& lam = eig.eigenvalues();
    const double lmax = lam.cwiseAbs().maxCoeff();
    VectorXc coef = eig.eigenvectors().adjoint() * rhs;
    for (Index i = 0; i < lam.size(); ++i) coef[i] = lam[i] > pinv_cutoff * lmax ? coef[i] / lam[i] : cplx(0.0);
    est.a = eig.eigenvectors() * coef;
    if (prev) est.a += *prev;
    return est;
}

struct EmResult {
    VectorXc a;
    VectorXd p;
    std::vector<double> loglik;  // after each iteration
    double initial_loglik = 0.0;
    bool converged = false;
};

/// Alternates e_step / m_step from (a0, p0) until max_iter or the relative increase of the
/// log marginal likelihood drops below tol_loglik.
inline EmResult run_em(const EmProblem& prob, const VectorXc& a0, const VectorXd& p0, const EmConfig& cfg) {
    cfg.validate();
    if (a0.size() != prob.size()) throw DomainError("run_em: initial coefficients have the wrong length");
    detail::check_distribution(p0, prob.n_theta());

    EmResult res;
    res.a = a0;
    res.p = p0 / p0.sum();
    double prev = log_marginal_likelihood(prob, res.a, res.p);
    res.initial_loglik = prev;
    if (!std::isfinite(prev)) throw SolverError("EM initial likelihood is not finite", 0);
    for (int t = 1; t <= cfg.max_iter; ++t) {
        const auto resp = e_step(prob, res.a, res.p);
        auto est = m_step(prob, resp, cfg.mstep_cutoff, &res.a);
        res.a = std::move(est.a);
        res.p = std::move(est.p);
        const double ll = log_marginal_likelihood(prob, res.a, res.p);
        res.loglik.push_back(ll);
        if (!std::isfinite(ll)) throw SolverError("EM likelihood is not finite", t, res.loglik);
        if (std::abs(ll - prev) <= cfg.tol_loglik * std::max(1.0, std::abs(prev))) {
            res.converged = true;
            break;
        }
        prev = ll;
    }
    return res;
}

}  // namespace uvtomo
