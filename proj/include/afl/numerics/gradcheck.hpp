#pragma once

#include <functional>
#include <span>
#include <vector>

namespace afl::num {

using ScalarFn = std::function<double(std::span<const double>)>;

/// Central differences (f(x+h) − f(x−h)) / 2h per coordinate, h = 1e-5.
std::vector<double> finite_diff_grad(const ScalarFn& f, std::span<const double> params, double step = 1e-5);

/// ‖a − b‖ / max(‖a‖, ‖b‖); zero when both are zero.
double relative_error(std::span<const double> a, std::span<const double> b);

}  // namespace afl::num
