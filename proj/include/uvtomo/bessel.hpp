#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "error.hpp"
#include "types.hpp"

namespace uvtomo {

/// Bessel function of the first kind J_k(x) for integer order k >= 0.
/// Negative arguments use J_k(-x) = (-1)^k J_k(x).
inline double bessel_j(int k, double x) {
    if (k < 0) throw DomainError("bessel_j: negative order " + std::to_string(k));
    if (!std::isfinite(x)) throw DomainError("bessel_j: non-finite argument");
    if (x < 0.0) return (k % 2 == 0 ? 1.0 : -1.0) * bessel_j(k, -x);
    return std::cyl_bessel_j(static_cast<double>(k), x);
}

/// J_k for any integer k, using J_{-k} = (-1)^k J_k.
inline double bessel_j_signed(int k, double x) {
    if (k >= 0) return bessel_j(k, x);
    return ((-k) % 2 == 0 ? 1.0 : -1.0) * bessel_j(-k, x);
}

namespace detail {

// Sign-change bisection down to the resolution of double.
template <class F>
double bisect_root(F&& f, double lo, double hi) {
    double flo = f(lo);
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi) break;
        const double fmid = f(mid);
        if (fmid == 0.0) return mid;
        if ((fmid < 0.0) == (flo < 0.0)) {
            lo = mid;
            flo = fmid;
        } else {
            hi = mid;
        }
        if (hi - lo <= 1e-15 * hi) break;
    }
    return 0.5 * (lo + hi);
}

inline std::vector<double> bessel_j0_roots(int count) {
    std::vector<double> roots;
    roots.reserve(static_cast<std::size_t>(count));
    auto j0 = [](double x) { return bessel_j(0, x); };
    double prev = 0.0;
    for (int s = 1; s <= count; ++s) {
        // McMahon: j_{0,s} = (s - 1/4) pi + 1/(8 (s - 1/4) pi) + ..., correction < 0.06.
        double lo = (s - 0.25) * kPi;
        double hi = lo + 0.25;
        if (lo <= prev) lo = prev + 1e-9;
        while ((j0(lo) < 0.0) == (j0(hi) < 0.0)) {
            lo = std::max(prev + 1e-9, lo - 0.25);
            hi += 0.25;
        }
        prev = bisect_root(j0, lo, hi);
        roots.push_back(prev);
    }
    return roots;
}

}  // namespace detail

/// Positive roots of J_0 ... J_{max_order}, `count` per order: table[k][s-1] = j_{k,s}.
///
/// Orders above zero are bracketed by interlacing, j_{k,s} < j_{k+1,s} < j_{k,s+1},
/// so order k needs count + (max_order - k) roots of the order below it.
inline std::vector<std::vector<double>> bessel_root_table(int max_order, int count) {
    if (max_order < 0 || count < 1) throw DomainError("bessel_root_table: bad size");
    std::vector<std::vector<double>> table(static_cast<std::size_t>(max_order) + 1);
    table[0] = detail::bessel_j0_roots(count + max_order);
    for (int k = 1; k <= max_order; ++k) {
        const auto& below = table[static_cast<std::size_t>(k - 1)];
        auto& roots = table[static_cast<std::size_t>(k)];
        const std::size_t need = below.size() - 1;
        roots.reserve(need);
        auto jk = [k](double x) { return bessel_j(k, x); };
        for (std::size_t s = 0; s < need; ++s) roots.push_back(detail::bisect_root(jk, below[s], below[s + 1]));
    }
    for (auto& roots : table) roots.resize(static_cast<std::size_t>(count));
    return table;
}

/// First `count` positive roots of J_k in increasing order. Negative k uses |k|.
inline std::vector<double> bessel_roots(int k, int count) {
    if (count < 1) throw DomainError("bessel_roots: count must be >= 1");
    const int order = std::abs(k);
    auto table = bessel_root_table(order, count);
    return std::move(table[static_cast<std::size_t>(order)]);
}

}  // namespace uvtomo
