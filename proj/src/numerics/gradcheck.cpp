#include "afl/numerics/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "afl/error.hpp"

namespace afl::num {

std::vector<double> finite_diff_grad(const ScalarFn& f, std::span<const double> params, double step)
{
    std::vector<double> x(params.begin(), params.end());
    std::vector<double> grad(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double saved = x[i];
        x[i] = saved + step;
        const double up = f(x);
        x[i] = saved - step;
        const double down = f(x);
        x[i] = saved;
        require(std::isfinite(up) && std::isfinite(down), ErrorKind::numerical,
                "finite_diff_grad: non-finite objective at coordinate " + std::to_string(i));
        grad[i] = (up - down) / (2.0 * step);
    }
    return grad;
}

double relative_error(std::span<const double> a, std::span<const double> b)
{
    double diff = 0.0;
    double na = 0.0;
    double nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    const double denom = std::sqrt(std::max(na, nb));
    return denom == 0.0 ? 0.0 : std::sqrt(diff) / denom;
}

}  // namespace afl::num
