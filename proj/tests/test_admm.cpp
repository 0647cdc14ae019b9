#include <cmath>
#include <random>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include <uvtomo/admm.hpp>
#include <uvtomo/eval.hpp>

using namespace uvtomo;

namespace {

VectorXc gaussian(Index n, std::uint64_t seed, double sd = 1.0) {
    CounterRng rng(seed);
    std::normal_distribution<double> g;
    VectorXc v(n);
    for (Index u = 0; u < n; ++u) v[u] = sd * cplx(g(rng), g(rng));
    return v;
}

// Small clean problem with an unaliased angle grid.
struct Small {
    std::shared_ptr<const BasisSpec> spec = std::make_shared<const BasisSpec>(build_basis_spec(0.3, 8));
    QuadratureGrid quad;
    int K = 1;
    double alpha = 0.05;
    int n_theta = 29;  // 4 k_max + 1: unaliased, and every Fourier mode of p is observed
    FBCoeffs a;
    ViewDistribution p;
    MomentFeatures features;
    MatrixXc psi_w;

    explicit Small(int nodes = 10) : quad(build_quadrature(0.3, nodes)) {
        a = random_phantom(spec, 2.0, 21);
        p = two_bump_distribution(n_theta, 1.0, 3.0, 3.5, 6.0, 0.6, 0.2);
        const MatrixXc psi = eval_tilt_matrix(*spec, quad, K, alpha);
        features = analytic_moments(a, p, psi, quad, K);
        psi_w = features.dw.cast<cplx>().asDiagonal() * psi;
    }
    MomentProblem problem() const { return MomentProblem::build(*spec, quad, alpha, features, n_theta); }
};

// Explicit residual stack whose squared norm is the augmented Lagrangian.
VectorXd residual_stack(const Small& s, const AdmmState& st, const AdmmConfig& cfg) {
    const auto ph = p_fourier(st.p, 2 * s.spec->k_max(), false);
    const VectorXc g = g_vector(*s.spec, ph);
    const MatrixXc H = h_matrix(*s.spec, ph);
    const VectorXc mu = s.features.weighted_mu();
    const MatrixXc C = s.features.weighted_C();
    const VectorXc r1 = std::sqrt(cfg.lambda1 / 2) * (s.psi_w * st.a.cwiseProduct(g) - mu);
    const VectorXc r2 = std::sqrt(cfg.lambda1 / 2) * (s.psi_w * st.z.cwiseProduct(g) - mu);
    const MatrixXc X = (st.a * st.z.adjoint()).cwiseProduct(H);
    const MatrixXc R3 = std::sqrt(cfg.lambda2 / 2) * (s.psi_w * X * s.psi_w.adjoint() - C);
    const VectorXc r4 = std::sqrt(cfg.rho / 2) * (st.a - st.z + st.s);
    const Index n = r1.size() * 2 + R3.size() + r4.size();
    VectorXc all(n);
    all << r1, r2, Eigen::Map<const VectorXc>(R3.data(), R3.size()), r4;
    VectorXd out(2 * n);
    out << all.real(), all.imag();
    return out;
}

enum class Block { A, Z };

// The residual stack is affine in the real parametrization of a single block, so the
// exact block minimizer comes from an explicit real least-squares solve.
VectorXc explicit_block_min(const Small& s, AdmmState st, const AdmmConfig& cfg, Block which) {
    VectorXc& x = which == Block::A ? st.a : st.z;
    const Index n = x.size();
    x.setZero();
    const VectorXd r0 = residual_stack(s, st, cfg);
    MatrixXd J(r0.size(), 2 * n);
    for (Index i = 0; i < 2 * n; ++i) {
        x.setZero();
        x[i % n] = i < n ? cplx(1, 0) : cplx(0, 1);
        J.col(i) = residual_stack(s, st, cfg) - r0;
    }
    const VectorXd t = J.colPivHouseholderQr().solve(-r0);
    VectorXc out(n);
    for (Index u = 0; u < n; ++u) out[u] = cplx(t[u], t[u + n]);
    return out;
}

AdmmState state(VectorXc a, VectorXc z, VectorXc s, VectorXd p) {
    AdmmState st;
    st.a = std::move(a);
    st.z = std::move(z);
    st.s = std::move(s);
    st.p = std::move(p);
    return st;
}

AdmmState random_state(const MomentProblem& prob, std::uint64_t seed) {
    AdmmState st = random_init(prob, seed);
    st.s = gaussian(prob.size(), seed + 7, 0.1);
    return st;
}

}  // namespace

TEST(Admm, ConfigValidation) {
    AdmmConfig c;
    EXPECT_NO_THROW(c.validate());
    c.rho = 0.0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = AdmmConfig{};
    c.lambda2 = -1;
    EXPECT_THROW(c.validate(), ConfigError);
    c = AdmmConfig{};
    c.max_iter = 0;
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Admm, LagrangianZeroAtTruth) {
    Small s;
    const auto prob = s.problem();
    AdmmConfig cfg;
    AdmmState st = state(s.a.values, s.a.values, VectorXc::Zero(s.a.size()), s.p.p);
    EXPECT_LT(augmented_lagrangian(st, prob, cfg), 1e-12 * prob.data_energy());
    EXPECT_LT(moment_objective(prob, s.a.values, s.p.p, cfg), 1e-12 * prob.data_energy());
    double prev = augmented_lagrangian(st, prob, cfg);
    const VectorXc dir = gaussian(s.a.size(), 3);
    for (double t : {0.1, 0.2, 0.4}) {
        AdmmState moved = st;
        moved.s = t * dir;  // only the penalty term moves
        const double L = augmented_lagrangian(moved, prob, cfg);
        EXPECT_GT(L, prev);
        prev = L;
    }
}

TEST(Admm, ReducedObjectiveMatchesExplicit) {
    Small s;
    const auto prob = s.problem();
    AdmmConfig cfg;
    const AdmmState st = random_state(prob, 5);
    const double want = residual_stack(s, st, cfg).squaredNorm();
    EXPECT_NEAR(augmented_lagrangian(st, prob, cfg), want, 1e-10 * want);
}

TEST(Admm, UpdateAMatchesExplicitLeastSquares) {
    Small s;
    const auto prob = s.problem();
    AdmmConfig cfg;
    for (std::uint64_t seed : {1, 2, 3}) {
        const AdmmState st = random_state(prob, seed);
        const VectorXc got = update_a(st, prob, cfg);
        const VectorXc want = explicit_block_min(s, st, cfg, Block::A);
        EXPECT_LT((got - want).norm(), 1e-10 * want.norm());
    }
}

TEST(Admm, UpdateZMatchesExplicitLeastSquares) {
    Small s;
    const auto prob = s.problem();
    AdmmConfig cfg;
    for (std::uint64_t seed : {4, 5}) {
        const AdmmState st = random_state(prob, seed);
        const VectorXc got = update_z(st, prob, cfg);
        const VectorXc want = explicit_block_min(s, st, cfg, Block::Z);
        EXPECT_LT((got - want).norm(), 1e-10 * want.norm());
    }
}

TEST(Admm, UpdatePMatchesExplicitLeastSquares) {
    Small s;
    const auto prob = s.problem();
    AdmmConfig cfg;
    const AdmmState st = random_state(prob, 9);
    const int n = s.n_theta;
    // p = 1/n + Q t, Q an orthonormal basis of the sum-zero subspace.
    const MatrixXd P = MatrixXd::Identity(n, n) - MatrixXd::Constant(n, n, 1.0 / n);
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(P);
    const MatrixXd Q = eig.eigenvectors().rightCols(n - 1);
    AdmmState probe = st;
    probe.p = VectorXd::Constant(n, 1.0 / n);
    const VectorXd r0 = residual_stack(s, probe, cfg);
    MatrixXd J(r0.size(), n - 1);
    for (int i = 0; i < n - 1; ++i) {
        probe.p = VectorXd::Constant(n, 1.0 / n) + Q.col(i);
        J.col(i) = residual_stack(s, probe, cfg) - r0;
    }
    const VectorXd t = J.completeOrthogonalDecomposition().solve(-r0);
    const VectorXd want = VectorXd::Constant(n, 1.0 / n) + Q * t;
    const VectorXd got = update_p(st, prob, cfg);
    EXPECT_LT((got - want).norm(), 1e-8 * want.norm());
    EXPECT_NEAR(got.sum(), 1.0, 1e-12);
}

TEST(Admm, PenaltyOnlyLimits) {
    Small s;
    const auto prob = s.problem();
    AdmmConfig cfg;
    cfg.lambda1 = cfg.lambda2 = 0.0;
    const AdmmState st = random_state(prob, 11);
    EXPECT_LT((update_a(st, prob, cfg) - (st.z - st.s)).norm(), 1e-12 * st.z.norm());
    EXPECT_LT((update_z(st, prob, cfg) - (st.a + st.s)).norm(), 1e-12 * st.a.norm());

    AdmmConfig heavy;
    heavy.rho = 1e10;
    EXPECT_LT((update_a(st, prob, heavy) - (st.z - st.s)).norm(), 1e-6 * st.z.norm());
}

TEST(Admm, BlockUpdatesNeverIncreaseLagrangian) {
    Small s;
    const auto prob = s.problem();
    AdmmConfig cfg;
    AdmmState st = random_init(prob, 17);
    for (int t = 0; t < 15; ++t) {
        const double L0 = augmented_lagrangian(st, prob, cfg);
        st.a = update_a(st, prob, cfg);
        const double L1 = augmented_lagrangian(st, prob, cfg);
        st.z = update_z(st, prob, cfg);
        const double L2 = augmented_lagrangian(st, prob, cfg);
        st.p = update_p(st, prob, cfg);
        const double L3 = augmented_lagrangian(st, prob, cfg);
        EXPECT_LE(L1, L0 * (1 + 1e-10) + 1e-14);
        EXPECT_LE(L2, L1 * (1 + 1e-10) + 1e-14);
        EXPECT_LE(L3, L2 * (1 + 1e-10) + 1e-14);
        st.s += st.a - st.z;
    }
}

TEST(Admm, FixedPointAtTruth) {
    Small s;
    const auto prob = s.problem();
    AdmmConfig cfg;
    AdmmState st = state(s.a.values, s.a.values, VectorXc::Zero(s.a.size()), s.p.p);
    const VectorXd p = update_p(st, prob, cfg);
    EXPECT_LT((p - s.p.p).norm(), 1e-8);
    const VectorXc a = update_a(st, prob, cfg);
    const VectorXc z = update_z(st, prob, cfg);
    EXPECT_LT((a - s.a.values).norm(), 1e-8 * s.a.values.norm());
    EXPECT_LT((z - s.a.values).norm(), 1e-8 * s.a.values.norm());

    cfg.max_iter = 1;
    const auto res = run_admm(prob, cfg, st);
    EXPECT_LT((res.final_state.a - s.a.values).norm(), 1e-8);
    EXPECT_LT((res.final_state.z - s.a.values).norm(), 1e-8);
    EXPECT_LT((res.final_state.p - s.p.p).norm(), 1e-8);
    EXPECT_LT(res.final_state.s.norm(), 1e-8);
}

// lambda2 = 0, K = 0, only the k = 1 function active and n_theta = 2: the first moment is
// (p0 - p1) B a, so t = p0 - p1 solves a scalar least squares.
TEST(Admm, UpdatePToyClosedForm) {
    const auto spec = std::make_shared<const BasisSpec>(build_basis_spec(0.3, 8));
    const auto quad = build_quadrature(0.3, 12);
    const MatrixXc psi = eval_tilt_matrix(*spec, quad, 0, 0.0);
    VectorXc a = VectorXc::Zero(spec->size());
    a[spec->index(1, 1)] = cplx(0.8, -0.3);
    const VectorXc Ba = psi * a;
    VectorXc other = VectorXc::Zero(Ba.size());
    other[0] = Ba[1];
    other[1] = -Ba[0];  // orthogonal to Ba
    const VectorXc mu = 0.4 * Ba + 0.2 * other;
    const MomentProblem prob(*spec, psi, mu, MatrixXc::Zero(mu.size(), mu.size()), 2);
    AdmmConfig cfg;
    cfg.lambda2 = 0.0;
    AdmmState st = state(a, a, VectorXc::Zero(a.size()), VectorXd::Constant(2, 0.5));
    const double t = (Ba.dot(mu)).real() / Ba.squaredNorm();
    const VectorXd p = update_p(st, prob, cfg);
    EXPECT_NEAR(p[0], (1 + t) / 2, 1e-12);
    EXPECT_NEAR(p[1], (1 - t) / 2, 1e-12);
    EXPECT_NEAR(p[0], 0.7, 1e-12);
}

TEST(Admm, SimplexProjection) {
    VectorXd v(5);
    v << 0.5, -0.2, 0.9, 0.1, 0.0;
    const VectorXd p = project_to_simplex(v);
    EXPECT_NEAR(p.sum(), 1.0, 1e-15);
    EXPECT_GE(p.minCoeff(), 0.0);
    // KKT: positive entries share one shift theta, zeroed entries sit below it.
    const double theta = v[0] - p[0];
    for (Index i = 0; i < v.size(); ++i) {
        if (p[i] > 0) EXPECT_NEAR(v[i] - p[i], theta, 1e-15);
        else EXPECT_LE(v[i], theta + 1e-15);
    }
    const VectorXd q = project_to_simplex(VectorXd::Constant(4, 0.25));
    EXPECT_LT((q - VectorXd::Constant(4, 0.25)).norm(), 1e-15);
    VectorXd w(3);
    w << 2.0, 0.0, 0.0;
    EXPECT_LT((project_to_simplex(w) - Eigen::Vector3d(1, 0, 0)).norm(), 1e-15);
}

TEST(Admm, RandomInitDeterministic) {
    Small s;
    const auto prob = s.problem();
    const auto a = random_init(prob, 3), b = random_init(prob, 3), c = random_init(prob, 4);
    EXPECT_EQ(a.a, b.a);
    EXPECT_EQ(a.p, b.p);
    EXPECT_NE(a.a, c.a);
    EXPECT_NEAR(a.p.sum(), 1.0, 1e-12);
    EXPECT_GE(a.p.minCoeff(), 0.0);
    EXPECT_EQ(a.s.norm(), 0.0);
}

TEST(Admm, HistoryAndReadout) {
    Small s;
    const auto prob = s.problem();
    AdmmConfig cfg;
    cfg.max_iter = 25;
    cfg.seed = 2;
    const auto res = run_admm(prob, cfg);
    EXPECT_LE(res.history.size(), 25u);
    EXPECT_NEAR(res.p.sum(), 1.0, 1e-12);
    EXPECT_GE(res.p.minCoeff(), 0.0);
    EXPECT_NEAR(res.p_relaxed.sum(), 1.0, 1e-12);
    EXPECT_LT((res.a - 0.5 * (res.final_state.a + res.final_state.z)).norm(), 1e-15);
    for (std::size_t i = 0; i < res.history.size(); ++i) EXPECT_EQ(res.history[i].iter, static_cast<int>(i) + 1);
}

TEST(Admm, DegenerateZeroObject) {
    Small s;
    const FBCoeffs zero(s.spec, VectorXc::Zero(s.spec->size()));
    const MatrixXc psi = eval_tilt_matrix(*s.spec, s.quad, s.K, s.alpha);
    const auto f = analytic_moments(zero, s.p, psi, s.quad, s.K);
    const auto prob = MomentProblem::build(*s.spec, s.quad, s.alpha, f, s.n_theta);
    auto saved = warning_sink();
    warning_sink() = [](const std::string&) {};
    AdmmConfig cfg;
    cfg.max_iter = 5;
    const auto res = run_admm(prob, cfg);
    warning_sink() = saved;
    EXPECT_TRUE(res.degenerate);
    EXPECT_LT(res.a.norm(), 1e-12);
    EXPECT_NEAR(res.p.sum(), 1.0, 1e-12);
}

// Rotating the start (a, z by gamma = 2 pi l0 / n, p shifted by l0) rotates every iterate.
TEST(Admm, RotationEquivalentRuns) {
    Small s;
    const auto prob = s.problem();
    AdmmConfig cfg;
    cfg.max_iter = 30;
    const AdmmState st = random_init(prob, 8);
    const int l0 = 5;
    const double gamma = kTwoPi * l0 / s.n_theta;
    AdmmState rot = st;
    rot.a = rotate_coeffs(*s.spec, st.a, gamma);
    rot.z = rotate_coeffs(*s.spec, st.z, gamma);
    rot.p = ViewDistribution(st.p).shifted(l0).p;
    const auto r1 = run_admm(prob, cfg, st);
    const auto r2 = run_admm(prob, cfg, rot);
    const VectorXc back = rotate_coeffs(*s.spec, r2.a, -gamma);
    EXPECT_LT((back - r1.a).norm(), 1e-6 * r1.a.norm());
    EXPECT_LT((ViewDistribution(r2.p).shifted(-l0).p - r1.p).norm(), 1e-6);
    const auto aligned = relative_error(*s.spec, r1.a, r2.a, 10 * s.n_theta);
    EXPECT_LT(aligned.re, 1e-3);
}
