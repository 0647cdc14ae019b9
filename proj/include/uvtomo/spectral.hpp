#pragma once

#include <cmath>

#include "error.hpp"
#include "quadrature.hpp"
#include "sim.hpp"
#include "types.hpp"

namespace uvtomo {

/// Direct non-uniform DFT matrix E[j, l] = dx e^{-i 2 pi xi_j x_l} (n_xi x L).
inline MatrixXc dft_matrix(const LineGrid& grid, const QuadratureGrid& quad) {
    MatrixXc E(quad.size(), grid.L);
    for (Index j = 0; j < quad.size(); ++j)
        for (int l = 0; l < grid.L; ++l) E(j, l) = grid.dx * unit_phase(-kTwoPi * quad.nodes[j] * grid.position(l));
    return E;
}

/// Riemann approximation of the continuous Fourier transform of one line at the nodes.
inline VectorXc dft_at_nodes(const VectorXd& line, const LineGrid& grid, const QuadratureGrid& quad) {
    if (line.size() != grid.L) throw DomainError("dft_at_nodes: line length does not match the grid");
    return dft_matrix(grid, quad) * line.cast<cplx>();
}

/// Spectral tilt series; row i is the concatenation of yhat_{i,kappa} for kappa = -K..K.
struct SpectralBatch {
    RowMatrixXc yhat;
    int K = 0;
    double alpha = 0.0;
    QuadratureGrid quad;
    LineGrid grid;

    int N() const { return static_cast<int>(yhat.rows()); }
    int tilts() const { return 2 * K + 1; }
    Index record_length() const { return static_cast<Index>(tilts()) * quad.size(); }
};

inline SpectralBatch transform_batch(const TiltSeriesBatch& batch, const QuadratureGrid& quad) {
    SpectralBatch out;
    out.K = batch.K;
    out.alpha = batch.alpha;
    out.quad = quad;
    out.grid = batch.grid;
    const Index nx = quad.size();
    const Index L = batch.grid.L;
    out.yhat.resize(batch.N, static_cast<Index>(batch.tilts()) * nx);
    if (batch.N == 0) return out;
    const MatrixXc Et = dft_matrix(batch.grid, quad).transpose();
    for (int t = 0; t < batch.tilts(); ++t)
        out.yhat.middleCols(t * nx, nx) = batch.samples.middleCols(t * L, L).cast<cplx>() * Et;
    return out;
}

/// Covariance of the transformed noise: one n_xi x n_xi block per tilt, repeated 2K+1 times.
struct NoiseModel {
    double sigma2 = 0.0;
    MatrixXc block;
    int tilts = 1;

    Index record_length() const { return block.rows() * tilts; }

    MatrixXc full() const {
        const Index n = block.rows();
        MatrixXc S = MatrixXc::Zero(n * tilts, n * tilts);
        for (int t = 0; t < tilts; ++t) S.block(t * n, t * n, n, n) = block;
        return S;
    }
};

/// block[j1, j2] = sigma2 dx^2 sum_l e^{-i 2 pi (xi_j1 - xi_j2) x_l} = sigma2 (E E^*)[j1, j2].
inline NoiseModel noise_covariance(double sigma2, const LineGrid& grid, const QuadratureGrid& quad, int K) {
    if (!(sigma2 >= 0.0) || !std::isfinite(sigma2)) throw DomainError("noise_covariance: sigma2 must be >= 0");
    if (K < 0) throw DomainError("noise_covariance: K must be >= 0");
    const MatrixXc E = dft_matrix(grid, quad);
    NoiseModel model;
    model.sigma2 = sigma2;
    model.tilts = 2 * K + 1;
    model.block = sigma2 * (E * E.adjoint());
    model.block = 0.5 * (model.block + model.block.adjoint()).eval();
    return model;
}

}  // namespace uvtomo
