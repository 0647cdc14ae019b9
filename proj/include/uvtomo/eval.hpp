#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "error.hpp"
#include "fb_basis.hpp"
#include "sim.hpp"
#include "types.hpp"

namespace uvtomo {

/// 10 log10(var / sigma2); +inf when sigma2 == 0.
inline double snr_db(double clean_variance, double sigma2) {
    if (sigma2 < 0.0) throw DomainError("snr_db: negative noise variance");
    if (sigma2 == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(clean_variance / sigma2);
}

/// Pooled sample variance of all entries.
template <class Derived>
double pooled_variance(const Eigen::DenseBase<Derived>& x) {
    const auto n = x.size();
    if (n < 2) return 0.0;
    const double mean = x.mean();
    return (x.derived().array() - mean).square().sum() / static_cast<double>(n - 1);
}

struct RotationAlignment {
    double re = 0.0;
    double gamma = 0.0;  // rotating the estimate by gamma best matches the truth
};

/// min over gamma in {2 pi m / n_search} of ||a~ e^{-i k gamma} - a|| / ||a||.
inline RotationAlignment relative_error(const BasisSpec& spec, const VectorXc& truth, const VectorXc& estimate,
                                        int n_search) {
    if (truth.size() != spec.size() || estimate.size() != spec.size())
        throw DomainError("relative_error: coefficient vectors do not match the basis");
    if (n_search < 1) throw DomainError("relative_error: n_search must be >= 1");
    const double norm = truth.norm();
    if (norm == 0.0) throw DomainError("relative_error: truth has zero norm");

    // ||R a~ - a||^2 = ||a~||^2 + ||a||^2 - 2 Re sum_k e^{-i k gamma} c_k, c_k = sum_q conj(a) a~.
    const int km = spec.k_max();
    std::vector<cplx> ck(static_cast<std::size_t>(2 * km + 1), 0.0);
    for (Index u = 0; u < spec.size(); ++u)
        ck[static_cast<std::size_t>(spec[u].k + km)] += std::conj(truth[u]) * estimate[u];
    const double base = truth.squaredNorm() + estimate.squaredNorm();

    RotationAlignment best{std::numeric_limits<double>::infinity(), 0.0};
    for (int m = 0; m < n_search; ++m) {
        const double gamma = kTwoPi * m / n_search;
        double cross = 0.0;
        for (int k = -km; k <= km; ++k) cross += (ck[static_cast<std::size_t>(k + km)] * unit_phase(-k * gamma)).real();
        const double d2 = std::max(0.0, base - 2.0 * cross);
        if (d2 < best.re) best = {d2, gamma};
    }
    // Refine the winner directly to avoid cancellation in the expanded form.
    best.re = (rotate_coeffs(spec, estimate, best.gamma) - truth).norm() / norm;
    return best;
}

inline RotationAlignment relative_error(const FBCoeffs& truth, const FBCoeffs& estimate, int n_search) {
    return relative_error(*truth.spec, truth.values, estimate.values, n_search);
}

/// Pixel-domain RE at a fixed rotation: ||I(R_gamma a~) - I(a)||_F / ||I(a)||_F.
inline double relative_error_pixels(const FBCoeffs& truth, const FBCoeffs& estimate, double gamma, int grid_size) {
    const MatrixXd it = synthesize_image(truth, grid_size);
    const MatrixXd ie = synthesize_image(rotate(estimate, gamma), grid_size);
    return (ie - it).norm() / it.norm();
}

struct ShiftAlignment {
    double tv = 0.0;
    int shift = 0;  // S_shift(p~) best matches p
};

/// min over cyclic shifts l of ||S_l(p~) - p||_1, (S_l x)[m] = x[m - l].
inline ShiftAlignment total_variation_dist(const VectorXd& p, const VectorXd& estimate) {
    if (p.size() != estimate.size()) throw DomainError("total_variation_dist: length mismatch");
    const Index n = p.size();
    if (n == 0) throw DomainError("total_variation_dist: empty distributions");
    ShiftAlignment best{std::numeric_limits<double>::infinity(), 0};
    for (Index l = 0; l < n; ++l) {
        double d = 0.0;
        for (Index m = 0; m < n; ++m) d += std::abs(estimate[((m - l) % n + n) % n] - p[m]);
        if (d < best.tv) best = {d, static_cast<int>(l)};
    }
    return best;
}

inline ShiftAlignment total_variation_dist(const ViewDistribution& p, const ViewDistribution& estimate) {
    return total_variation_dist(p.p, estimate.p);
}

struct JointAlignment {
    double re = 0.0;
    double tv = 0.0;
    int shift = 0;
};

/// Single grid rotation gamma = 2 pi l / n_theta applied to both estimates; l minimizes RE.
inline JointAlignment joint_alignment(const BasisSpec& spec, const VectorXc& a, const VectorXd& p,
                                      const VectorXc& a_est, const VectorXd& p_est) {
    const Index n = p.size();
    if (p_est.size() != n) throw DomainError("joint_alignment: length mismatch");
    JointAlignment best{std::numeric_limits<double>::infinity(), 0.0, 0};
    const double norm = a.norm();
    for (Index l = 0; l < n; ++l) {
        const double gamma = kTwoPi * static_cast<double>(l) / static_cast<double>(n);
        const double re = (rotate_coeffs(spec, a_est, gamma) - a).norm() / norm;
        if (re < best.re) {
            double tv = 0.0;
            for (Index m = 0; m < n; ++m) tv += std::abs(p_est[((m - l) % n + n) % n] - p[m]);
            best = {re, tv, static_cast<int>(l)};
        }
    }
    return best;
}

struct TrialReport {
    std::string method;
    double snr_db = 0.0;
    double re = 0.0;
    double tv = 0.0;
    double aligned_rotation = 0.0;
    int aligned_shift = 0;
    bool success = false;
    std::uint64_t seed = 0;
    double runtime = 0.0;
    double joint_re = 0.0;
    double joint_tv = 0.0;
};

inline constexpr double kSuccessThreshold = 0.3;

inline double success_rate(const std::vector<TrialReport>& reports, double threshold = kSuccessThreshold) {
    if (reports.empty()) throw DomainError("success_rate: no reports");
    std::size_t ok = 0;
    for (const auto& r : reports) ok += r.re <= threshold ? 1 : 0;
    return static_cast<double>(ok) / static_cast<double>(reports.size());
}

/// Fills the metric fields of a report from ground truth and an estimate.
inline TrialReport evaluate_trial(const BasisSpec& spec, const VectorXc& a, const VectorXd& p, const VectorXc& a_est,
                                  const VectorXd& p_est, int n_search, double threshold = kSuccessThreshold) {
    TrialReport r;
    const auto rot = relative_error(spec, a, a_est, n_search);
    const auto sh = total_variation_dist(p, p_est);
    const auto joint = joint_alignment(spec, a, p, a_est, p_est);
    r.re = rot.re;
    r.aligned_rotation = rot.gamma;
    r.tv = sh.tv;
    r.aligned_shift = sh.shift;
    r.success = r.re <= threshold;
    r.joint_re = joint.re;
    r.joint_tv = joint.tv;
    return r;
}

}  // namespace uvtomo
