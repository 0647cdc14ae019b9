#pragma once

#include <complex>
#include <cstdint>
#include <functional>
#include <iostream>
#include <numbers>
#include <string>

#include <Eigen/Dense>

namespace uvtomo {

using cplx = std::complex<double>;
using Index = Eigen::Index;

using VectorXd = Eigen::VectorXd;
using VectorXc = Eigen::VectorXcd;
using MatrixXd = Eigen::MatrixXd;
using MatrixXc = Eigen::MatrixXcd;
using RowMatrixXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMatrixXc = Eigen::Matrix<cplx, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;
inline constexpr cplx kI{0.0, 1.0};

inline cplx unit_phase(double angle) { return {std::cos(angle), std::sin(angle)}; }

/// Process-wide sink for non-fatal diagnostics. Defaults to stderr.
inline std::function<void(const std::string&)>& warning_sink() {
    static std::function<void(const std::string&)> sink = [](const std::string& msg) {
        std::cerr << "uvtomo warning: " << msg << '\n';
    };
    return sink;
}

inline void warn(const std::string& msg) {
    if (auto& sink = warning_sink()) sink(msg);
}

}  // namespace uvtomo
