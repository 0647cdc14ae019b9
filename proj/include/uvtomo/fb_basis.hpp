#pragma once

#include <cmath>
#include <memory>
#include <sstream>
#include <vector>

#include "bessel.hpp"
#include "error.hpp"
#include "quadrature.hpp"
#include "types.hpp"

namespace uvtomo {

/// One Fourier-Bessel function N_{k,q} J_k(R_{k,q} xi / c) e^{i k theta} on the disc xi <= c.
struct BasisFunction {
    int k = 0;          // angular frequency, may be negative
    int q = 0;          // radial index, 1-based
    double root = 0.0;  // R_{|k|,q}
    double norm = 0.0;  // N_{k,q} = 1 / (c sqrt(pi) |J_{|k|+1}(R_{|k|,q})|)
};

/// Truncated Fourier-Bessel dictionary for bandlimit c and real-space support radius R.
///
/// Columns are ordered by k = -k_max..k_max, then q = 1..q_k. Radial counts follow the
/// sampling rule q_k = max{q : R_{k,q+1} <= 2 pi c R}.
class BasisSpec {
public:
    BasisSpec() = default;

    double bandlimit() const { return c_; }
    double support_radius() const { return R_; }
    double root_bound() const { return kTwoPi * c_ * R_; }
    int k_max() const { return k_max_; }
    Index size() const { return static_cast<Index>(functions_.size()); }

    int q_count(int k) const {
        const int a = std::abs(k);
        return a > k_max_ ? 0 : q_counts_[static_cast<std::size_t>(a)];
    }

    Index index(int k, int q) const {
        if (std::abs(k) > k_max_ || q < 1 || q > q_count(k))
            throw DomainError("BasisSpec::index: (k, q) outside the truncated basis");
        return offsets_[static_cast<std::size_t>(k + k_max_)] + (q - 1);
    }

    const BasisFunction& operator[](Index col) const { return functions_[static_cast<std::size_t>(col)]; }
    const std::vector<BasisFunction>& functions() const { return functions_; }

    /// Roots R_{|k|,1..q_k+2}; the two past the cut are kept for truncation checks.
    const std::vector<double>& roots(int k) const { return roots_[static_cast<std::size_t>(std::abs(k))]; }

    /// Angular frequency of each column.
    Eigen::VectorXi orders() const {
        Eigen::VectorXi out(size());
        for (Index u = 0; u < size(); ++u) out[u] = functions_[static_cast<std::size_t>(u)].k;
        return out;
    }

    friend BasisSpec build_basis_spec(double c, double R);

private:
    double c_ = 0.0;
    double R_ = 0.0;
    int k_max_ = -1;
    std::vector<int> q_counts_;
    std::vector<std::vector<double>> roots_;
    std::vector<Index> offsets_;
    std::vector<BasisFunction> functions_;
};

inline BasisSpec build_basis_spec(double c, double R) {
    if (!(c > 0.0) || !(R > 0.0) || !std::isfinite(c) || !std::isfinite(R))
        throw ConfigError("build_basis_spec: bandlimit and support radius must be positive");
    const double bound = kTwoPi * c * R;

    // j_{k,1} > k, so no order beyond the bound can keep a radial function.
    const int max_order = static_cast<int>(std::ceil(bound)) + 1;
    const int count = static_cast<int>(std::floor(bound / kPi)) + 4;
    const auto table = bessel_root_table(max_order, count);

    BasisSpec spec;
    spec.c_ = c;
    spec.R_ = R;
    for (int k = 0; k <= max_order; ++k) {
        const auto& r = table[static_cast<std::size_t>(k)];
        int q = 0;
        while (q + 1 < count && r[static_cast<std::size_t>(q + 1)] <= bound) ++q;
        if (q == 0) break;
        spec.q_counts_.push_back(q);
        spec.roots_.emplace_back(r.begin(), r.begin() + q + 2);
    }
    if (spec.q_counts_.empty()) {
        std::ostringstream msg;
        msg << "build_basis_spec: empty basis for c = " << c << ", R = " << R
            << " (2 pi c R = " << bound << " is below the second root of J_0)";
        throw ConfigError(msg.str());
    }
    spec.k_max_ = static_cast<int>(spec.q_counts_.size()) - 1;

    for (int k = -spec.k_max_; k <= spec.k_max_; ++k) {
        spec.offsets_.push_back(static_cast<Index>(spec.functions_.size()));
        const int a = std::abs(k);
        for (int q = 1; q <= spec.q_counts_[static_cast<std::size_t>(a)]; ++q) {
            const double root = spec.roots_[static_cast<std::size_t>(a)][static_cast<std::size_t>(q - 1)];
            const double norm = 1.0 / (c * std::sqrt(kPi) * std::abs(bessel_j(a + 1, root)));
            spec.functions_.push_back({k, q, root, norm});
        }
    }
    return spec;
}

/// Coefficient vector a_{k,q}, flat-indexed by its BasisSpec.
struct FBCoeffs {
    std::shared_ptr<const BasisSpec> spec;
    VectorXc values;
    bool real_symmetric = false;

    FBCoeffs() = default;
    FBCoeffs(std::shared_ptr<const BasisSpec> s, VectorXc v, bool sym = false)
        : spec(std::move(s)), values(std::move(v)), real_symmetric(sym) {
        if (!spec || values.size() != spec->size())
            throw DomainError("FBCoeffs: coefficient count does not match the basis");
    }

    Index size() const { return values.size(); }
};

/// Mirror used by the reality condition: (S a)_{k,q} = conj(a_{-k,q}).
/// A real image is synthesized exactly when a = S a.
inline VectorXc reality_mirror(const BasisSpec& spec, const VectorXc& a) {
    VectorXc out(a.size());
    for (Index u = 0; u < spec.size(); ++u) {
        const auto& f = spec[u];
        out[u] = std::conj(a[spec.index(-f.k, f.q)]);
    }
    return out;
}

inline FBCoeffs symmetrize(const FBCoeffs& a) {
    VectorXc v = 0.5 * (a.values + reality_mirror(*a.spec, a.values));
    return FBCoeffs(a.spec, std::move(v), true);
}

/// ||a - S a|| / ||a||; zero for coefficients of a real image.
inline double symmetry_defect(const BasisSpec& spec, const VectorXc& a) {
    const double n = a.norm();
    return n == 0.0 ? 0.0 : (a - reality_mirror(spec, a)).norm() / n;
}

/// Steering phases e^{i k theta} for every column.
inline VectorXc steering(const BasisSpec& spec, double theta) {
    VectorXc e(spec.size());
    for (Index u = 0; u < spec.size(); ++u) e[u] = unit_phase(spec[u].k * theta);
    return e;
}

/// Rotating the object counter-clockwise by gamma maps a_{k,q} to a_{k,q} e^{-i k gamma}.
inline VectorXc rotate_coeffs(const BasisSpec& spec, const VectorXc& a, double gamma) {
    return a.cwiseProduct(steering(spec, -gamma));
}

inline FBCoeffs rotate(const FBCoeffs& a, double gamma) {
    return FBCoeffs(a.spec, rotate_coeffs(*a.spec, a.values, gamma), a.real_symmetric);
}

/// Real radial factors N_{k,q} J_k(R_{k,q} xi_j / c), rows = nodes, cols = basis functions.
inline MatrixXd radial_matrix(const BasisSpec& spec, const VectorXd& xi) {
    const double c = spec.bandlimit();
    MatrixXd out(xi.size(), spec.size());
    for (Index u = 0; u < spec.size(); ++u) {
        const auto& f = spec[u];
        for (Index j = 0; j < xi.size(); ++j)
            out(j, u) = xi[j] > c ? 0.0 : f.norm * bessel_j_signed(f.k, f.root * xi[j] / c);
    }
    return out;
}

inline MatrixXd radial_matrix(const BasisSpec& spec, const QuadratureGrid& grid) {
    return radial_matrix(spec, grid.nodes);
}

/// Psi_theta from precomputed radial factors: column u scaled by e^{i k_u theta}.
inline MatrixXc eval_basis_matrix(const BasisSpec& spec, const MatrixXd& radial, double theta) {
    return radial.cast<cplx>() * steering(spec, theta).asDiagonal();
}

inline MatrixXc eval_basis_matrix(const BasisSpec& spec, const QuadratureGrid& grid, double theta) {
    if (std::abs(grid.bandlimit - spec.bandlimit()) > 1e-12 * spec.bandlimit())
        throw DomainError("eval_basis_matrix: basis and quadrature use different bandlimits");
    return eval_basis_matrix(spec, radial_matrix(spec, grid), theta);
}

inline void check_tilt_range(int K, double alpha) {
    if (K < 0) throw DomainError("tilt half-count K must be >= 0");
    if (K * std::abs(alpha) > kPi / 3.0 + 1e-12) {
        std::ostringstream msg;
        msg << "tilt range K*alpha = " << K * std::abs(alpha) << " rad exceeds pi/3";
        warn(msg.str());
    }
}

/// Row blocks Psi_{kappa alpha}, kappa = -K..K ascending; rows indexed (kappa, j).
inline MatrixXc eval_tilt_matrix(const BasisSpec& spec, const MatrixXd& radial, int K, double alpha,
                                 double theta0 = 0.0) {
    const Index nx = radial.rows();
    MatrixXc out(static_cast<Index>(2 * K + 1) * nx, spec.size());
    for (int kappa = -K; kappa <= K; ++kappa)
        out.middleRows(static_cast<Index>(kappa + K) * nx, nx) =
            eval_basis_matrix(spec, radial, theta0 + kappa * alpha);
    return out;
}

inline MatrixXc eval_tilt_matrix(const BasisSpec& spec, const QuadratureGrid& grid, int K, double alpha) {
    check_tilt_range(K, alpha);
    if (std::abs(grid.bandlimit - spec.bandlimit()) > 1e-12 * spec.bandlimit())
        throw DomainError("eval_tilt_matrix: basis and quadrature use different bandlimits");
    return eval_tilt_matrix(spec, radial_matrix(spec, grid), K, alpha);
}

/// Pixel-center coordinate of index i on a grid of n pixels spanning [-R, R].
inline double pixel_center(int i, int n, double R) { return (i - 0.5 * (n - 1)) * (2.0 * R / n); }

/// Inverse 2-D Fourier transform of sum a_{k,q} psi_{k,q}, sampled at pixel centers.
///
/// Polar quadrature over the disc: Gauss-Legendre in xi (2 * default_node_count nodes) and
/// uniform angles. The angular integrand carries e^{i z cos} with z up to 2 pi c R sqrt(2) at the
/// grid corners, so the trapezoid rule needs about k_max + z + 40 points to push J_n(z) aliasing
/// below rounding. Count rounded to a multiple of 4 so quarter turns map nodes onto nodes.
/// Element (i, j) is the sample at (x_j, y_i).
inline MatrixXc synthesize_image_complex(const FBCoeffs& coeffs, int grid_size) {
    if (grid_size < 2) throw DomainError("synthesize_image: grid_size must be >= 2");
    const BasisSpec& spec = *coeffs.spec;
    const double R = spec.support_radius();
    const auto radial_nodes = build_quadrature(spec.bandlimit(), 2 * default_node_count(grid_size));
    const int z = static_cast<int>(std::ceil(kTwoPi * spec.bandlimit() * R * std::sqrt(2.0)));
    const int n_ang = 4 * ((2 * (spec.k_max() + z) + 32 + 3) / 4);
    const Index nr = radial_nodes.size();

    // Angular profile of the spectrum: profile(r, k + k_max) = sum_q a_{k,q} N J_k(...).
    const MatrixXd radial = radial_matrix(spec, radial_nodes);
    const int nk = 2 * spec.k_max() + 1;
    MatrixXc profile = MatrixXc::Zero(nr, nk);
    for (Index u = 0; u < spec.size(); ++u)
        profile.col(spec[u].k + spec.k_max()) += coeffs.values[u] * radial.col(u).cast<cplx>();

    const Index nodes = nr * n_ang;
    VectorXc fw(nodes);
    MatrixXc ex(nodes, grid_size), ey(nodes, grid_size);
    const double dtheta = kTwoPi / n_ang;
    for (int m = 0; m < n_ang; ++m) {
        const double th = m * dtheta;
        VectorXc phase(nk);
        for (int k = -spec.k_max(); k <= spec.k_max(); ++k) phase[k + spec.k_max()] = unit_phase(k * th);
        const VectorXc spectrum = profile * phase;
        const double ct = std::cos(th), st = std::sin(th);
        for (Index r = 0; r < nr; ++r) {
            const Index node = static_cast<Index>(m) * nr + r;
            const double xi = radial_nodes.nodes[r];
            fw[node] = spectrum[r] * (radial_nodes.weights[r] * xi * dtheta);
            for (int p = 0; p < grid_size; ++p) {
                const double s = pixel_center(p, grid_size, R);
                ex(node, p) = unit_phase(kTwoPi * xi * s * ct);
                ey(node, p) = unit_phase(kTwoPi * xi * s * st);
            }
        }
    }
    return ey.transpose() * fw.asDiagonal() * ex;
}

inline MatrixXd synthesize_image(const FBCoeffs& coeffs, int grid_size) {
    return synthesize_image_complex(coeffs, grid_size).real();
}

}  // namespace uvtomo
