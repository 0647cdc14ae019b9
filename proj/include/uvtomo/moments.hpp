#pragma once

#include <cmath>
#include <sstream>
#include <vector>

#include "error.hpp"
#include "fb_basis.hpp"
#include "sim.hpp"
#include "spectral.hpp"
#include "types.hpp"

namespace uvtomo {

/// Fourier coefficients phat[m] = sum_l p[l] e^{-i 2 pi m l / n_theta}, |m| <= m_max.
/// With this sign, sum_l p[l] e^{i k phi_l} = phat[-k].
class PHat {
public:
    PHat() = default;
    PHat(int m_max, std::vector<cplx> values) : m_max_(m_max), values_(std::move(values)) {}

    int m_max() const { return m_max_; }
    cplx operator[](int m) const {
        if (std::abs(m) > m_max_) throw DomainError("PHat: frequency outside the computed range");
        return values_[static_cast<std::size_t>(m + m_max_)];
    }

private:
    int m_max_ = 0;
    std::vector<cplx> values_;
};

inline void check_aliasing(int n_theta, int k_max) {
    if (n_theta <= 4 * k_max) {
        std::ostringstream msg;
        msg << "n_theta = " << n_theta << " <= 4 k_max = " << 4 * k_max
            << ": Fourier coefficients of p alias (phat[m] = phat[m mod n_theta])";
        warn(msg.str());
    }
}

inline PHat p_fourier(const VectorXd& p, int m_max, bool warn_aliasing = true) {
    if (m_max < 0) throw DomainError("p_fourier: m_max must be >= 0");
    const auto n = p.size();
    if (warn_aliasing && n <= 2 * m_max) {
        std::ostringstream msg;
        msg << "p_fourier: m_max = " << m_max << " aliases on n_theta = " << n;
        warn(msg.str());
    }
    std::vector<cplx> v(static_cast<std::size_t>(2 * m_max + 1));
    for (int m = -m_max; m <= m_max; ++m) {
        cplx acc = 0.0;
        for (Index l = 0; l < n; ++l) {
            // Reduce m l mod n first so large products keep full phase accuracy.
            const long long r = ((static_cast<long long>(m) * l) % n + n) % n;
            acc += p[l] * unit_phase(-kTwoPi * static_cast<double>(r) / static_cast<double>(n));
        }
        v[static_cast<std::size_t>(m + m_max)] = acc;
    }
    return PHat(m_max, std::move(v));
}

inline PHat p_fourier(const ViewDistribution& p, int m_max, bool warn_aliasing = true) {
    return p_fourier(p.p, m_max, warn_aliasing);
}

/// g(phat)_u = phat[-k_u].
inline VectorXc g_vector(const BasisSpec& spec, const PHat& phat) {
    VectorXc g(spec.size());
    for (Index u = 0; u < spec.size(); ++u) g[u] = phat[-spec[u].k];
    return g;
}

/// H(phat)[u, v] = phat[k_v - k_u]; Hermitian for real p.
inline MatrixXc h_matrix(const BasisSpec& spec, const PHat& phat) {
    MatrixXc H(spec.size(), spec.size());
    for (Index v = 0; v < spec.size(); ++v)
        for (Index u = 0; u < spec.size(); ++u) H(u, v) = phat[spec[v].k - spec[u].k];
    return H;
}

/// mu = Psi (a o g(phat)).
inline VectorXc analytic_first_moment(const FBCoeffs& a, const PHat& phat, const MatrixXc& psi) {
    if (psi.cols() != a.size()) throw DomainError("analytic_first_moment: dimension mismatch");
    return psi * a.values.cwiseProduct(g_vector(*a.spec, phat));
}

/// C = Psi (a a^* o H(phat)) Psi^*.
inline MatrixXc analytic_second_moment(const FBCoeffs& a, const PHat& phat, const MatrixXc& psi) {
    if (psi.cols() != a.size()) throw DomainError("analytic_second_moment: dimension mismatch");
    const MatrixXc X = (a.values * a.values.adjoint()).cwiseProduct(h_matrix(*a.spec, phat));
    const MatrixXc tmp = psi * X;
    return tmp * psi.adjoint();
}

/// D_w diagonal sqrt(w_j xi_j), tiled over 2K+1 tilts.
inline VectorXd tilt_weights(const QuadratureGrid& quad, int K) {
    const Index nx = quad.size();
    VectorXd d(static_cast<Index>(2 * K + 1) * nx);
    for (int t = 0; t < 2 * K + 1; ++t)
        for (Index j = 0; j < nx; ++j) d[t * nx + j] = std::sqrt(quad.weights[j] * quad.nodes[j]);
    return d;
}

/// First and second moment features of the spectral tilt series.
struct MomentFeatures {
    VectorXc mu;
    MatrixXc C;
    long long N = 0;  // records averaged; 0 for population moments
    VectorXd dw;      // D_w diagonal
    int K = 0;

    Index length() const { return mu.size(); }

    VectorXc weighted_mu() const { return dw.cast<cplx>().cwiseProduct(mu); }
    MatrixXc weighted_C() const { return dw.cast<cplx>().asDiagonal() * C * dw.cast<cplx>().asDiagonal(); }
};

inline MomentFeatures analytic_moments(const FBCoeffs& a, const ViewDistribution& p, const MatrixXc& psi,
                                       const QuadratureGrid& quad, int K) {
    const PHat phat = p_fourier(p, 2 * a.spec->k_max(), false);
    MomentFeatures f;
    f.mu = analytic_first_moment(a, phat, psi);
    f.C = analytic_second_moment(a, phat, psi);
    f.C = 0.5 * (f.C + f.C.adjoint()).eval();
    f.dw = tilt_weights(quad, K);
    f.K = K;
    return f;
}

/// mu~ = mean of records, C~ = mean outer product minus Sigma, Hermitian-symmetrized.
/// Records are accumulated in fixed blocks so the result does not depend on scheduling.
inline MomentFeatures empirical_moments(const SpectralBatch& batch, const NoiseModel& noise) {
    if (batch.N() < 1) throw DomainError("empirical_moments: empty batch");
    const Index M = batch.record_length();
    if (noise.record_length() != M) throw DomainError("empirical_moments: noise model does not match batch");

    constexpr Index kBlock = 2048;
    VectorXc sum = VectorXc::Zero(M);
    MatrixXc outer = MatrixXc::Zero(M, M);
    for (Index start = 0; start < batch.N(); start += kBlock) {
        const Index rows = std::min(kBlock, static_cast<Index>(batch.N()) - start);
        const auto Y = batch.yhat.middleRows(start, rows);
        sum += Y.colwise().sum().transpose();
        // sum_i y_i y_i^* = Y^T conj(Y).
        outer.noalias() += Y.transpose() * Y.conjugate();
    }
    const double inv = 1.0 / batch.N();
    MomentFeatures f;
    f.N = batch.N();
    f.K = batch.K;
    f.dw = tilt_weights(batch.quad, batch.K);
    f.mu = sum * inv;
    f.C = outer * inv - noise.full();
    f.C = 0.5 * (f.C + f.C.adjoint()).eval();
    return f;
}

/// ||mu||_w^2 = sum_{j,kappa} |mu[j;kappa]|^2 xi_j w_j.
inline double weighted_norm_sq(const VectorXc& mu, const QuadratureGrid& quad) {
    const Index nx = quad.size();
    double acc = 0.0;
    for (Index r = 0; r < mu.size(); ++r) {
        const Index j = r % nx;
        acc += std::norm(mu[r]) * quad.nodes[j] * quad.weights[j];
    }
    return acc;
}

/// ||C||_W^2 = sum |C[j1;k1, j2;k2]|^2 xi_j1 xi_j2 w_j1 w_j2.
inline double weighted_frobenius_sq(const MatrixXc& C, const QuadratureGrid& quad) {
    const Index nx = quad.size();
    double acc = 0.0;
    for (Index c = 0; c < C.cols(); ++c) {
        const double wc = quad.nodes[c % nx] * quad.weights[c % nx];
        for (Index r = 0; r < C.rows(); ++r) acc += std::norm(C(r, c)) * wc * quad.nodes[r % nx] * quad.weights[r % nx];
    }
    return acc;
}

struct MomentResiduals {
    VectorXc first;
    MatrixXc second;
    double objective = 0.0;
};

/// Residuals of the weighted moment fit with pre-weighted operator and data:
/// objective = l1/2 ||Psi_w (a o g) - mu_w||^2 + l2/2 ||Psi_w (a a^* o H) Psi_w^* - C_w||_F^2.
inline MomentResiduals moment_residuals(const FBCoeffs& a, const PHat& phat, const MatrixXc& psi_w,
                                        const VectorXc& mu_w, const MatrixXc& C_w, double lambda1,
                                        double lambda2) {
    MomentResiduals r;
    r.first = analytic_first_moment(a, phat, psi_w) - mu_w;
    r.second = analytic_second_moment(a, phat, psi_w) - C_w;
    r.objective = 0.5 * lambda1 * r.first.squaredNorm() + 0.5 * lambda2 * r.second.squaredNorm();
    return r;
}

inline MomentResiduals moment_residuals(const FBCoeffs& a, const PHat& phat, const MatrixXc& psi_w,
                                        const MomentFeatures& features, double lambda1, double lambda2) {
    return moment_residuals(a, phat, psi_w, features.weighted_mu(), features.weighted_C(), lambda1, lambda2);
}

}  // namespace uvtomo
