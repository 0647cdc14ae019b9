#pragma once

#include <cmath>
#include <vector>

#include "error.hpp"
#include "types.hpp"

namespace uvtomo {

/// Gauss-Legendre rule for integrals over the radial frequency interval [0, c].
struct QuadratureGrid {
    double bandlimit = 0.0;
    VectorXd nodes;    // strictly increasing, inside (0, c)
    VectorXd weights;  // positive, summing to c

    Index size() const { return nodes.size(); }
};

/// Default radial node count for an image of `pixels` per side.
inline int default_node_count(int pixels) { return std::max(2 * pixels, 40); }

inline QuadratureGrid build_quadrature(double c, int n) {
    if (n < 1) throw DomainError("build_quadrature: node count must be >= 1");
    if (!(c > 0.0) || !std::isfinite(c)) throw DomainError("build_quadrature: bandlimit must be positive");

    QuadratureGrid grid;
    grid.bandlimit = c;
    grid.nodes.resize(n);
    grid.weights.resize(n);

    const double half = 0.5 * c;
    const int m = (n + 1) / 2;
    for (int i = 0; i < m; ++i) {
        // Newton on P_n from the Tricomi initial guess; t runs downwards from 1.
        double t = std::cos(kPi * (i + 0.75) / (n + 0.5));
        double dp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0, p1 = 0.0;
            for (int j = 0; j < n; ++j) {
                const double p2 = p1;
                p1 = p0;
                p0 = ((2.0 * j + 1.0) * t * p1 - j * p2) / (j + 1);
            }
            dp = n * (t * p0 - p1) / (t * t - 1.0);
            const double step = p0 / dp;
            t -= step;
            if (std::abs(step) <= 1e-16) break;
        }
        // Recompute the derivative at the converged node for the weight.
        {
            double p0 = 1.0, p1 = 0.0;
            for (int j = 0; j < n; ++j) {
                const double p2 = p1;
                p1 = p0;
                p0 = ((2.0 * j + 1.0) * t * p1 - j * p2) / (j + 1);
            }
            dp = n * (t * p0 - p1) / (t * t - 1.0);
        }
        const double w = 2.0 / ((1.0 - t * t) * dp * dp);
        grid.nodes[i] = half * (1.0 - t);
        grid.nodes[n - 1 - i] = half * (1.0 + t);
        grid.weights[i] = half * w;
        grid.weights[n - 1 - i] = half * w;
    }
    if (n % 2 == 1) grid.nodes[m - 1] = half;
    return grid;
}

}  // namespace uvtomo
