#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dualpf/param_store.hpp"
#include "dualpf/tensor.hpp"

namespace dualpf {

// |a - n| / max(1e-8, |a| + |n|)
double relative_error(double analytic, double numeric);

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst;  // parameter name (or "x") and coordinate of the maximum
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coordinates = 0;
};

// Central finite differences against the tape gradient of a scalar f(x).
GradCheckReport grad_check(const std::function<Tensor(Tape&, const Tensor&)>& f, const Shape& shape,
                           std::vector<double> x, double eps = 1e-5);

// Same, over every coordinate of every parameter in `stores`; f rebuilds the
// loss on a fresh tape reading the (perturbed) store values. When
// `max_per_param` is nonzero only that many evenly spaced coordinates of each
// parameter are probed.
GradCheckReport grad_check_params(const std::function<Tensor(Tape&)>& f, std::span<ParamStore* const> stores,
                                  double eps = 1e-5, std::size_t max_per_param = 0);

}  // namespace dualpf
