#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <vector>

#include "error.hpp"
#include "fb_basis.hpp"
#include "quadrature.hpp"
#include "rng.hpp"
#include "types.hpp"

namespace uvtomo {

/// Probability mass over the n_theta equispaced view angles phi_l = 2 pi l / n_theta.
struct ViewDistribution {
    VectorXd p;

    ViewDistribution() = default;
    explicit ViewDistribution(VectorXd probs) : p(std::move(probs)) { validate(); }

    int size() const { return static_cast<int>(p.size()); }
    double angle(int l) const { return kTwoPi * l / static_cast<double>(p.size()); }

    void validate() const {
        if (p.size() < 1) throw DomainError("ViewDistribution: empty");
        if (!p.allFinite()) throw DomainError("ViewDistribution: non-finite entry");
        if (p.minCoeff() < 0.0) throw DomainError("ViewDistribution: negative probability");
        if (std::abs(p.sum() - 1.0) > 1e-12 * p.size())
            throw DomainError("ViewDistribution: probabilities do not sum to 1");
    }

    /// S_l: (S_l p)[m] = p[(m - l) mod n]. Pairs with rotating the object by 2 pi l / n.
    ViewDistribution shifted(int l) const {
        const int n = size();
        VectorXd out(n);
        for (int m = 0; m < n; ++m) out[m] = p[((m - l) % n + n) % n];
        return ViewDistribution(std::move(out));
    }
};

inline ViewDistribution normalized(VectorXd w) {
    const double s = w.sum();
    if (!(s > 0.0)) throw DomainError("distribution weights have no mass");
    return ViewDistribution(w / s);
}

inline ViewDistribution uniform_distribution(int n_theta) {
    if (n_theta < 1) throw DomainError("uniform_distribution: n_theta must be >= 1");
    return ViewDistribution(VectorXd::Constant(n_theta, 1.0 / n_theta));
}

inline ViewDistribution delta_distribution(int n_theta, int l0) {
    if (n_theta < 1 || l0 < 0 || l0 >= n_theta) throw DomainError("delta_distribution: bad index");
    VectorXd p = VectorXd::Zero(n_theta);
    p[l0] = 1.0;
    return ViewDistribution(std::move(p));
}

/// Discretized von Mises bump exp(kappa cos(phi - center)).
inline ViewDistribution bump_distribution(int n_theta, double center, double concentration) {
    if (n_theta < 1) throw DomainError("bump_distribution: n_theta must be >= 1");
    VectorXd w(n_theta);
    for (int l = 0; l < n_theta; ++l)
        w[l] = std::exp(concentration * (std::cos(kTwoPi * l / n_theta - center) - 1.0));
    return normalized(std::move(w));
}

/// weight * bump(c1, k1) + (1 - weight) * bump(c2, k2), plus a uniform floor.
inline ViewDistribution two_bump_distribution(int n_theta, double c1, double k1, double c2, double k2,
                                              double weight, double floor = 0.0) {
    const VectorXd a = bump_distribution(n_theta, c1, k1).p;
    const VectorXd b = bump_distribution(n_theta, c2, k2).p;
    VectorXd w = weight * a + (1.0 - weight) * b;
    w.array() += floor / n_theta;
    return normalized(std::move(w));
}

/// L equispaced line samples x_l = (l - (L-1)/2) dx.
struct LineGrid {
    int L = 0;
    double dx = 1.0;

    double position(int l) const { return (l - 0.5 * (L - 1)) * dx; }

    VectorXd positions() const {
        VectorXd x(L);
        for (int l = 0; l < L; ++l) x[l] = position(l);
        return x;
    }

    void validate(double support_radius) const {
        if (L < 1 || !(dx > 0.0)) throw DomainError("LineGrid: L >= 1 and dx > 0 required");
        if (L * dx < 2.0 * support_radius * (1.0 - 1e-12))
            throw DomainError("LineGrid: samples do not cover the support");
    }
};

/// Default acquisition grid: one sample per pixel across [-R, R].
inline LineGrid default_line_grid(int pixels) {
    return LineGrid{pixels, 1.0};
}

/// N noisy tilt series; samples(i, (kappa + K) * L + l) = y_{i,kappa}[x_l].
struct TiltSeriesBatch {
    int N = 0;
    int K = 0;
    double alpha = 0.0;
    double sigma2 = 0.0;
    LineGrid grid;
    std::uint64_t seed = 0;
    int n_theta = 0;
    RowMatrixXd samples;
    std::vector<int> hidden_angles;  // drawn grid indices l_i; diagnostics only
    double clean_variance = 0.0;     // pooled variance of the noiseless samples

    int tilts() const { return 2 * K + 1; }

    Eigen::Map<const VectorXd, 0> line(int i, int kappa) const {
        return {samples.row(i).data() + static_cast<Index>(kappa + K) * grid.L, grid.L};
    }
};

/// Random band-limited phantom: complex Gaussian coefficients with standard deviation
/// exp(-decay R_{k,q} / (2 pi c R)), mirrored to satisfy the reality condition.
inline FBCoeffs random_phantom(std::shared_ptr<const BasisSpec> spec, double decay, std::uint64_t seed,
                               bool realize = true) {
    if (!(decay > 0.0)) throw DomainError("random_phantom: decay must be positive");
    CounterRng rng(substream_key(seed, 0, 0x9a47));
    std::normal_distribution<double> gauss;
    const double bound = spec->root_bound();
    VectorXc a(spec->size());
    for (Index u = 0; u < spec->size(); ++u) {
        const double sd = std::exp(-decay * (*spec)[u].root / bound);
        const double re = gauss(rng), im = gauss(rng);
        a[u] = sd * cplx(re, im) / std::sqrt(2.0);
    }
    FBCoeffs out(spec, std::move(a));
    return realize ? symmetrize(out) : out;
}

/// Evaluates clean projection lines P_theta f(x_l) through the Fourier slice theorem.
///
/// P_theta f(x) = int_0^c [F(xi, theta) e^{i 2 pi xi x} + F(xi, theta + pi) e^{-i 2 pi xi x}] dxi,
/// integrated with the radial Gauss-Legendre rule.
class Projector {
public:
    Projector(const BasisSpec& spec, const LineGrid& grid, const QuadratureGrid& quad)
        : spec_(&spec), radial_(radial_matrix(spec, quad)), synth_(grid.L, quad.size()) {
        const VectorXd x = grid.positions();
        for (Index l = 0; l < x.size(); ++l)
            for (Index j = 0; j < quad.size(); ++j)
                synth_(l, j) = quad.weights[j] * unit_phase(kTwoPi * quad.nodes[j] * x[l]);
    }

    VectorXc project_complex(const VectorXc& a, double theta) const {
        const VectorXc fwd = radial_.cast<cplx>() * a.cwiseProduct(steering(*spec_, theta));
        const VectorXc bwd = radial_.cast<cplx>() * a.cwiseProduct(steering(*spec_, theta + kPi));
        return synth_ * fwd + synth_.conjugate() * bwd;
    }

    VectorXd project(const VectorXc& a, double theta) const { return project_complex(a, theta).real(); }

private:
    const BasisSpec* spec_;
    MatrixXd radial_;
    MatrixXc synth_;
};

inline VectorXd project_clean(const FBCoeffs& coeffs, double theta, const LineGrid& grid,
                              const QuadratureGrid& quad) {
    return Projector(*coeffs.spec, grid, quad).project(coeffs.values, theta);
}

namespace detail {

inline int draw_index(const VectorXd& cdf, double u) {
    const auto* begin = cdf.data();
    const auto* end = begin + cdf.size();
    const auto* it = std::upper_bound(begin, end, u);
    int l = static_cast<int>(it - begin);
    if (l >= cdf.size()) l = static_cast<int>(cdf.size()) - 1;
    return l;
}

}  // namespace detail

/// Clean tilt series for hidden angles drawn from p; record i uses substream (seed, i).
inline TiltSeriesBatch generate_clean_batch(const FBCoeffs& coeffs, const ViewDistribution& p, int N, int K,
                                            double alpha, const LineGrid& grid, const QuadratureGrid& quad,
                                            std::uint64_t seed) {
    p.validate();
    if (N < 0) throw DomainError("generate_batch: N must be >= 0");
    check_tilt_range(K, alpha);
    grid.validate(coeffs.spec->support_radius());

    TiltSeriesBatch batch;
    batch.N = N;
    batch.K = K;
    batch.alpha = alpha;
    batch.grid = grid;
    batch.seed = seed;
    batch.n_theta = p.size();
    const int T = 2 * K + 1;
    batch.samples.resize(N, static_cast<Index>(T) * grid.L);
    batch.hidden_angles.resize(static_cast<std::size_t>(N));

    // Every record is a row of this table: one tilt series per grid angle.
    const Projector proj(*coeffs.spec, grid, quad);
    RowMatrixXd table(p.size(), static_cast<Index>(T) * grid.L);
    for (int l = 0; l < p.size(); ++l)
        for (int kappa = -K; kappa <= K; ++kappa)
            table.row(l).segment(static_cast<Index>(kappa + K) * grid.L, grid.L) =
                proj.project(coeffs.values, std::fmod(p.angle(l) + kappa * alpha + kTwoPi, kTwoPi)).transpose();

    VectorXd cdf(p.size());
    double acc = 0.0;
    for (int l = 0; l < p.size(); ++l) cdf[l] = (acc += p.p[l]);
    cdf /= acc;

    for (int i = 0; i < N; ++i) {
        CounterRng rng(substream_key(seed, static_cast<std::uint64_t>(i), 0));
        const int l = detail::draw_index(cdf, rng.uniform());
        batch.hidden_angles[static_cast<std::size_t>(i)] = l;
        batch.samples.row(i) = table.row(l);
    }
    if (N > 0 && batch.samples.size() > 1) {
        const double mean = batch.samples.mean();
        batch.clean_variance = (batch.samples.array() - mean).square().sum() / static_cast<double>(batch.samples.size() - 1);
    }
    return batch;
}

/// Adds i.i.d. N(0, sigma2) noise; record i uses substream (seed, i, lane 1).
inline void add_noise(TiltSeriesBatch& batch, double sigma2) {
    if (!(sigma2 >= 0.0) || !std::isfinite(sigma2)) throw DomainError("add_noise: sigma2 must be >= 0");
    batch.sigma2 = sigma2;
    if (sigma2 == 0.0) return;
    const double sd = std::sqrt(sigma2);
    for (int i = 0; i < batch.N; ++i) {
        CounterRng rng(substream_key(batch.seed, static_cast<std::uint64_t>(i), 1));
        std::normal_distribution<double> gauss;
        for (Index c = 0; c < batch.samples.cols(); ++c) batch.samples(i, c) += sd * gauss(rng);
    }
}

inline TiltSeriesBatch generate_batch(const FBCoeffs& coeffs, const ViewDistribution& p, int N, int K,
                                      double alpha, double sigma2, const LineGrid& grid, const QuadratureGrid& quad,
                                      std::uint64_t seed) {
    auto batch = generate_clean_batch(coeffs, p, N, K, alpha, grid, quad, seed);
    add_noise(batch, sigma2);
    return batch;
}

/// sigma^2 that puts the batch's clean variance at `snr_db` decibels.
inline double sigma2_for_snr(double clean_variance, double snr_db) {
    return clean_variance / std::pow(10.0, snr_db / 10.0);
}

}  // namespace uvtomo
