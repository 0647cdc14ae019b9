#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <sstream>
#include <vector>

#include <Eigen/Eigenvalues>

#include "error.hpp"
#include "fb_basis.hpp"
#include "moments.hpp"
#include "rng.hpp"
#include "types.hpp"

namespace uvtomo {

struct AdmmConfig {
    double lambda1 = 1.0;
    double lambda2 = 0.5;
    double rho = 1.0;
    int max_iter = 500;
    double tol_primal = -1.0;  // negative: 1e-6 sqrt(n_a)
    double tol_change = 1e-10;  // relative to the data energy
    std::uint64_t seed = 0;

    void validate() const {
        if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0)) throw ConfigError("AdmmConfig: lambdas must be >= 0");
        if (!(rho > 0.0)) throw ConfigError("AdmmConfig: rho must be > 0");
        if (max_iter < 1) throw ConfigError("AdmmConfig: max_iter must be >= 1");
    }
};

struct AdmmRecord {
    int iter = 0;
    double objective = 0.0;  // weighted moment fit at (a, p)
    double primal = 0.0;     // ||a - z||
    double lagrangian = 0.0;
};

struct AdmmState {
    VectorXc a, z, s;
    VectorXd p;
    int iter = 0;
    std::vector<AdmmRecord> history;
};

/// Weighted moment-fitting problem in the coefficient domain.
///
/// With B = Psi_w, everything the solver needs reduces to n_a x n_a quantities:
/// W = B^* B, T = B^* C_w B and b = B^* mu_w. For X = (a z^*) o H,
/// ||B X B^* - C_w||^2 = tr(X^* W X W) - 2 Re <X, T> + ||C_w||^2.
class MomentProblem {
public:
    MomentProblem(const BasisSpec& spec, const MatrixXc& psi_w, const VectorXc& mu_w, const MatrixXc& C_w,
                  int n_theta)
        : orders_(spec.orders()), k_max_(spec.k_max()), n_theta_(n_theta) {
        if (n_theta < 1) throw DomainError("MomentProblem: n_theta must be >= 1");
        if (psi_w.rows() != mu_w.size() || C_w.rows() != mu_w.size() || C_w.cols() != mu_w.size() ||
            psi_w.cols() != spec.size())
            throw DomainError("MomentProblem: dimension mismatch");
        if (!mu_w.allFinite() || !C_w.allFinite()) throw DomainError("MomentProblem: non-finite features");
        W_ = psi_w.adjoint() * psi_w;
        W_ = 0.5 * (W_ + W_.adjoint()).eval();
        const MatrixXc CB = C_w * psi_w;
        T_ = psi_w.adjoint() * CB;
        T_ = 0.5 * (T_ + T_.adjoint()).eval();
        b_ = psi_w.adjoint() * mu_w;
        mu_energy_ = mu_w.squaredNorm();
        C_energy_ = C_w.squaredNorm();
        C_trace_ = C_w.trace().real();
        steer_.resize(spec.size(), n_theta);
        for (int l = 0; l < n_theta; ++l)
            for (Index u = 0; u < spec.size(); ++u)
                steer_(u, l) = unit_phase(kTwoPi * static_cast<double>((static_cast<long long>(orders_[u]) * l % n_theta + n_theta) % n_theta) / n_theta);
    }

    /// Weights the tilt matrix and features by D_w and builds the problem.
    static MomentProblem build(const BasisSpec& spec, const QuadratureGrid& quad, double alpha,
                               const MomentFeatures& features, int n_theta) {
        const MatrixXc psi = eval_tilt_matrix(spec, quad, features.K, alpha);
        check_aliasing(n_theta, spec.k_max());
        const auto D = features.dw.cast<cplx>().asDiagonal();
        return MomentProblem(spec, D * psi, features.weighted_mu(), features.weighted_C(), n_theta);
    }

    Index size() const { return W_.rows(); }
    int n_theta() const { return n_theta_; }
    int k_max() const { return k_max_; }
    const Eigen::VectorXi& orders() const { return orders_; }
    const MatrixXc& gram() const { return W_; }
    const MatrixXc& sandwich() const { return T_; }
    const VectorXc& projected_mean() const { return b_; }
    /// steer(u, l) = e^{i k_u phi_l}.
    const MatrixXc& steer() const { return steer_; }
    double mu_energy() const { return mu_energy_; }
    double C_energy() const { return C_energy_; }
    double C_trace() const { return C_trace_; }
    double data_energy() const { return mu_energy_ + C_energy_; }

    PHat phat(const VectorXd& p) const { return p_fourier(p, 2 * k_max_, false); }

    VectorXc g(const PHat& ph) const {
        VectorXc out(size());
        for (Index u = 0; u < size(); ++u) out[u] = ph[-orders_[u]];
        return out;
    }

    MatrixXc H(const PHat& ph) const {
        MatrixXc out(size(), size());
        for (Index v = 0; v < size(); ++v)
            for (Index u = 0; u < size(); ++u) out(u, v) = ph[orders_[v] - orders_[u]];
        return out;
    }

    /// ||Psi_w (x o g) - mu_w||^2.
    double first_term(const VectorXc& x, const VectorXc& g) const {
        const VectorXc v = x.cwiseProduct(g);
        return std::max(0.0, (v.dot(W_ * v)).real() - 2.0 * v.dot(b_).real() + mu_energy_);
    }

    /// ||Psi_w ((a z^*) o H) Psi_w^* - C_w||_F^2.
    double second_term(const VectorXc& a, const VectorXc& z, const MatrixXc& H) const {
        const MatrixXc X = (a * z.adjoint()).cwiseProduct(H);
        const MatrixXc WX = W_ * X;
        const MatrixXc XW = X * W_;
        const double quad = (WX.adjoint().cwiseProduct(XW.transpose())).sum().real();
        const double cross = X.cwiseProduct(T_.conjugate()).sum().real();
        return std::max(0.0, quad - 2.0 * cross + C_energy_);
    }

private:
    Eigen::VectorXi orders_;
    int k_max_;
    int n_theta_;
    MatrixXc W_, T_;
    VectorXc b_;
    MatrixXc steer_;
    double mu_energy_ = 0.0, C_energy_ = 0.0, C_trace_ = 0.0;
};

/// Weighted moment objective at (a, p) with a single copy of a.
inline double moment_objective(const MomentProblem& prob, const VectorXc& a, const VectorXd& p,
                               const AdmmConfig& cfg) {
    const PHat ph = prob.phat(p);
    return 0.5 * cfg.lambda1 * prob.first_term(a, prob.g(ph)) + 0.5 * cfg.lambda2 * prob.second_term(a, a, prob.H(ph));
}

/// L(a, z, p; s) with the scaled dual: l1/2 ||A1 a - mu||^2 + l1/2 ||A1 z - mu||^2
/// + l2/2 ||A2(z) a - c||^2 + rho/2 ||a - z + s||^2.
inline double augmented_lagrangian(const AdmmState& st, const MomentProblem& prob, const AdmmConfig& cfg) {
    const PHat ph = prob.phat(st.p);
    const VectorXc g = prob.g(ph);
    return 0.5 * cfg.lambda1 * (prob.first_term(st.a, g) + prob.first_term(st.z, g)) +
           0.5 * cfg.lambda2 * prob.second_term(st.a, st.z, prob.H(ph)) +
           0.5 * cfg.rho * (st.a - st.z + st.s).squaredNorm();
}

namespace detail {

// argmin_x l1/2 ||B (x o g) - mu||^2 + l2/2 ||B diag(x) G B^* - C||^2 + rho/2 ||x - target||^2.
//
// Normal matrix: l1 diag(conj g) W diag(g) + l2 W o (G W G^*)^T + rho I.
// Right side:    l1 conj(g) o b + l2 rowsum(T o conj(G)) + rho target.
inline VectorXc solve_block(const MomentProblem& prob, const VectorXc& g, const MatrixXc& G, const VectorXc& target,
                            const AdmmConfig& cfg, int iter) {
    const MatrixXc& W = prob.gram();
    const MatrixXc GW = G * W;
    const MatrixXc Q = GW * G.adjoint();
    MatrixXc normal = cfg.lambda2 * W.cwiseProduct(Q.transpose());
    normal += cfg.lambda1 * (g.conjugate().asDiagonal() * W * g.asDiagonal());
    normal.diagonal().array() += cfg.rho;
    normal = 0.5 * (normal + normal.adjoint()).eval();

    VectorXc rhs = cfg.lambda1 * g.conjugate().cwiseProduct(prob.projected_mean());
    rhs += cfg.lambda2 * prob.sandwich().cwiseProduct(G.conjugate()).rowwise().sum();
    rhs += cfg.rho * target;

    Eigen::LLT<MatrixXc> llt(normal);
    VectorXc x;
    if (llt.info() == Eigen::Success) {
        x = llt.solve(rhs);
    } else {
        x = normal.ldlt().solve(rhs);
    }
    if (!x.allFinite()) throw SolverError("ADMM block solve produced non-finite values", iter);
    return x;
}

}  // namespace detail

/// Exact minimizer of L over a with (z, p, s) fixed.
inline VectorXc update_a(const AdmmState& st, const MomentProblem& prob, const AdmmConfig& cfg) {
    const PHat ph = prob.phat(st.p);
    const MatrixXc G = prob.H(ph) * st.z.conjugate().asDiagonal();
    return detail::solve_block(prob, prob.g(ph), G, st.z - st.s, cfg, st.iter);
}

/// Exact minimizer of L over z with (a, p, s) fixed. The second-moment model is
/// anti-linear in z; since C_w is Hermitian its residual norm equals that of the
/// adjoint model B diag(z) H diag(conj a) B^*, which is linear in z.
inline VectorXc update_z(const AdmmState& st, const MomentProblem& prob, const AdmmConfig& cfg) {
    const PHat ph = prob.phat(st.p);
    const MatrixXc G = prob.H(ph) * st.a.conjugate().asDiagonal();
    return detail::solve_block(prob, prob.g(ph), G, st.a + st.s, cfg, st.iter);
}

struct PUpdate {
    VectorXd p;
    bool rank_deficient = false;
};

/// Equality-constrained least squares over real p (sum p = 1, sign unconstrained).
///
/// Per grid angle, u_l = B (e_l o a) and v_l = B (e_l o z) with e_l = e^{i k phi_l}; the
/// models are sum p_l u_l, sum p_l v_l and sum p_l u_l v_l^*. The constraint is removed
/// by writing p = 1/n + d with d orthogonal to the all-ones vector.
inline PUpdate update_p_detailed(const AdmmState& st, const MomentProblem& prob, const AdmmConfig& cfg) {
    const int n = prob.n_theta();
    const MatrixXc EA = prob.steer().array().colwise() * st.a.array();
    const MatrixXc EZ = prob.steer().array().colwise() * st.z.array();
    const MatrixXc& W = prob.gram();
    const MatrixXc Ua = EA.adjoint() * (W * EA);
    const MatrixXc Vz = EZ.adjoint() * (W * EZ);
    MatrixXd G = (cfg.lambda1 * (Ua + Vz) + cfg.lambda2 * Ua.cwiseProduct(Vz.conjugate())).real();
    G = 0.5 * (G + G.transpose()).eval();

    const VectorXc TEZ_diag = (EA.adjoint() * (prob.sandwich() * EZ)).diagonal();
    const VectorXd r = (cfg.lambda1 * (EA.adjoint() * prob.projected_mean() + EZ.adjoint() * prob.projected_mean()) +
                        cfg.lambda2 * TEZ_diag)
                           .real();

    const VectorXd p0 = VectorXd::Constant(n, 1.0 / n);
    const MatrixXd P = MatrixXd::Identity(n, n) - MatrixXd::Constant(n, n, 1.0 / n);
    MatrixXd PGP = P * G * P;
    PGP = 0.5 * (PGP + PGP.transpose()).eval();
    const VectorXd rhs = P * (r - G * p0);

    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(PGP);
    const VectorXd& lam = eig.eigenvalues();
    const double lmax = std::max(lam.cwiseAbs().maxCoeff(), 0.0);
    const double cutoff = 1e-12 * lmax;
    VectorXd coef = eig.eigenvectors().transpose() * rhs;
    int kept = 0;
    for (Index i = 0; i < n; ++i) {
        if (lam[i] > cutoff && lmax > 0.0) {
            coef[i] /= lam[i];
            ++kept;
        } else {
            coef[i] = 0.0;
        }
    }
    VectorXd d = P * (eig.eigenvectors() * coef);
    PUpdate out;
    out.p = p0 + d;
    // Re-center against rounding so the affine constraint holds to machine precision.
    out.p.array() += (1.0 - out.p.sum()) / n;
    out.rank_deficient = kept < n - 1;
    if (!out.p.allFinite()) throw SolverError("ADMM p-update produced non-finite values", st.iter);
    return out;
}

inline VectorXd update_p(const AdmmState& st, const MomentProblem& prob, const AdmmConfig& cfg) {
    return update_p_detailed(st, prob, cfg).p;
}

/// Euclidean projection onto the probability simplex (sort-and-threshold).
inline VectorXd project_to_simplex(const VectorXd& v) {
    const Index n = v.size();
    std::vector<double> u(v.data(), v.data() + n);
    std::sort(u.begin(), u.end(), std::greater<>());
    double cum = 0.0, theta = 0.0;
    for (Index j = 0; j < n; ++j) {
        cum += u[static_cast<std::size_t>(j)];
        const double t = (cum - 1.0) / static_cast<double>(j + 1);
        if (u[static_cast<std::size_t>(j)] - t > 0.0) theta = t;
    }
    VectorXd out = (v.array() - theta).cwiseMax(0.0);
    const double s = out.sum();
    if (s > 0.0) out /= s;
    return out;
}

/// Random start: a, z i.i.d. complex Gaussian whose energy matches the data, p uniform
/// plus seeded noise, projected to the simplex, s = 0.
inline AdmmState random_init(const MomentProblem& prob, std::uint64_t seed) {
    CounterRng rng(substream_key(seed, 0, 0xADD1));
    std::normal_distribution<double> gauss;
    const Index n = prob.size();
    const int nt = prob.n_theta();

    AdmmState st;
    st.p.resize(nt);
    for (int l = 0; l < nt; ++l) st.p[l] = (1.0 + 0.5 * gauss(rng)) / nt;
    st.p = project_to_simplex(st.p);

    // E tr(B (a a^* o H) B^*) = var * tr(W) since H has unit diagonal.
    double var = 0.0;
    const double trW = prob.gram().trace().real();
    if (prob.C_trace() > 0.0 && trW > 0.0) {
        var = prob.C_trace() / trW;
    } else {
        const VectorXc g = prob.g(prob.phat(st.p));
        const double denom = (g.cwiseAbs2().array() * prob.gram().diagonal().real().array()).sum();
        if (denom > 0.0) var = prob.mu_energy() / denom;
    }
    const double sd = std::sqrt(var / 2.0);
    st.a.resize(n);
    st.z.resize(n);
    for (Index u = 0; u < n; ++u) st.a[u] = sd * cplx(gauss(rng), gauss(rng));
    for (Index u = 0; u < n; ++u) st.z[u] = sd * cplx(gauss(rng), gauss(rng));
    st.s = VectorXc::Zero(n);
    return st;
}

struct AdmmResult {
    VectorXc a;               // (a + z) / 2 at exit
    VectorXd p_relaxed;       // p as iterated (may have negative entries)
    VectorXd p;               // simplex projection of p_relaxed
    std::vector<AdmmRecord> history;
    AdmmState final_state;
    bool converged = false;
    bool degenerate = false;  // recovered object is (numerically) zero
    bool rank_deficient_p = false;
};

/// Alternates exact a-, z- and p-block minimizations with the scaled dual ascent
/// s <- s + a - z until max_iter or (||a - z|| <= tol_primal and |dL| <= tol_change).
inline AdmmResult run_admm(const MomentProblem& prob, const AdmmConfig& cfg, std::optional<AdmmState> init = {}) {
    cfg.validate();
    AdmmState st = init ? std::move(*init) : random_init(prob, cfg.seed);
    if (st.a.size() != prob.size() || st.z.size() != prob.size() || st.p.size() != prob.n_theta())
        throw DomainError("run_admm: initial state does not match the problem");
    if (st.s.size() != prob.size()) st.s = VectorXc::Zero(prob.size());

    const double tol_primal = cfg.tol_primal > 0.0 ? cfg.tol_primal : 1e-6 * std::sqrt(static_cast<double>(prob.size()));
    const double energy = std::max(prob.data_energy(), 1e-300);
    double prev_L = augmented_lagrangian(st, prob, cfg);

    AdmmResult res;
    auto trace = [&res] {
        std::vector<double> t;
        for (const auto& h : res.history) t.push_back(h.objective);
        return t;
    };
    for (int t = 1; t <= cfg.max_iter; ++t) {
        st.iter = t;
        try {
            st.a = update_a(st, prob, cfg);
            st.z = update_z(st, prob, cfg);
            auto pu = update_p_detailed(st, prob, cfg);
            st.p = std::move(pu.p);
            if (pu.rank_deficient && !res.rank_deficient_p) {
                res.rank_deficient_p = true;
                warn("ADMM p-update system is rank deficient; using the minimum-norm solution");
            }
        } catch (const SolverError& e) {
            throw SolverError(e.what(), t, trace());
        }
        st.s += st.a - st.z;

        AdmmRecord rec;
        rec.iter = t;
        rec.objective = moment_objective(prob, st.a, st.p, cfg);
        rec.primal = (st.a - st.z).norm();
        rec.lagrangian = augmented_lagrangian(st, prob, cfg);
        res.history.push_back(rec);
        if (!std::isfinite(rec.objective) || !std::isfinite(rec.lagrangian) || rec.objective > 1e12 * std::max(1.0, energy))
            throw SolverError("ADMM diverged", t, trace());

        const bool small_change = std::abs(rec.lagrangian - prev_L) <= cfg.tol_change * energy;
        prev_L = rec.lagrangian;
        if (rec.primal <= tol_primal && small_change) {
            res.converged = true;
            break;
        }
    }
    res.a = 0.5 * (st.a + st.z);
    res.p_relaxed = st.p;
    res.p = project_to_simplex(st.p);
    res.degenerate = res.a.norm() <= 1e-12 * std::sqrt(energy);
    res.final_state = std::move(st);
    return res;
}

}  // namespace uvtomo
