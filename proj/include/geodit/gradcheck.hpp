#pragma once

// Central finite-difference checks of the reverse-mode gradients.

#include "geodit/autodiff.hpp"
#include "geodit/parameters.hpp"

#include <functional>
#include <string>
#include <vector>

namespace geodit {

struct GradCheckResult {
    std::string name;
    double rel_error = 0.0;
    std::size_t entries = 0;
};

/// ||g_analytic - g_numeric|| / max(||g_analytic|| + ||g_numeric||, 1e-30)
double relative_error(const MatrixXd &analytic, const MatrixXd &numeric);

using LossBuilder = std::function<ad::Var<double>(ad::Tape<double> &)>;

/// One result per parameter array named in `names` (all arrays when empty).
std::vector<GradCheckResult> check_parameter_gradients(ParameterSet<double> &params, const LossBuilder &loss,
                                                       double step = 1e-6, const std::vector<std::string> &names = {});

/// Gradient of loss(x) with respect to a free input matrix.
GradCheckResult check_input_gradient(const std::string &name, MatrixXd x,
                                     const std::function<ad::Var<double>(ad::Tape<double> &, ad::Var<double>)> &loss,
                                     double step = 1e-6);

/// The full suite over every differentiable component on tiny configurations.
std::vector<GradCheckResult> run_gradient_suite(std::uint64_t seed = 7);

} // namespace geodit
