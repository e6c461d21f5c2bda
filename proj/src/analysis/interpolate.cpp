#include "afl/analysis/interpolate.hpp"

#include <algorithm>
#include <fstream>

#include "afl/error.hpp"

namespace afl::analysis {

double InterpolationSweep::min_combined() const
{
    require(!combined.empty(), ErrorKind::invalid_argument, "empty sweep");
    return *std::min_element(combined.begin(), combined.end());
}

nlohmann::json InterpolationSweep::to_json() const
{
    return {{"expert1", expert1}, {"expert2", expert2}, {"alpha", alphas},       {"combined_loss", combined},
            {"task1_loss", task1}, {"task2_loss", task2}, {"oracle_ref", oracle_ref}};
}

void InterpolationSweep::write_csv(const std::string& path) const
{
    std::ofstream out(path);
    require(static_cast<bool>(out), ErrorKind::io, "cannot write " + path);
    out.precision(17);
    out << "alpha,combined_loss,task1_loss,task2_loss,oracle_ref\n";
    for (std::size_t i = 0; i < alphas.size(); ++i) {
        out << alphas[i] << ',' << combined[i] << ',' << task1[i] << ',' << task2[i] << ',' << oracle_ref << '\n';
    }
}

experts::LoraAdapter interpolate_adapters(const experts::LoraAdapter& e1, const experts::LoraAdapter& e2, double alpha)
{
    require(e1.fingerprint == e2.fingerprint && e1.site_count() == e2.site_count() && e1.rank == e2.rank,
            ErrorKind::mismatch, "adapter/base mismatch: interpolated experts differ in layout");
    experts::LoraAdapter out = e1;
    out.task.clear();
    const double w1 = 1.0 - alpha;
    for (std::size_t s = 0; s < e1.site_count(); ++s) {
        auto mix = [&](const Matrix& x, const Matrix& y, Matrix& dst) {
            require(x.rows() == y.rows() && x.cols() == y.cols(), ErrorKind::shape_mismatch, "interpolated factor shapes differ");
            auto fx = x.flat();
            auto fy = y.flat();
            auto fd = dst.flat();
            for (std::size_t i = 0; i < fd.size(); ++i) {
                fd[i] = w1 * fx[i] + alpha * fy[i];
            }
        };
        mix(e1.a[s], e2.a[s], out.a[s]);
        mix(e1.b[s], e2.b[s], out.b[s]);
    }
    return out;
}

double combined_loss(const lm::Predictor& predictor, const Dataset& d1, const Dataset& d2)
{
    const auto s1 = loss_sum(predictor, d1);
    const auto s2 = loss_sum(predictor, d2);
    const std::size_t tokens = s1.tokens + s2.tokens;
    require(tokens > 0, ErrorKind::invalid_argument, "combined data has no target tokens");
    return (s1.total + s2.total) / static_cast<double>(tokens);
}

InterpolationSweep interpolate_pair(const lm::BaseLM& base, const experts::LoraAdapter& e1, const experts::LoraAdapter& e2,
                                    std::span<const double> alphas, const Dataset& task1, const Dataset& task2)
{
    require(!alphas.empty(), ErrorKind::invalid_argument, "empty alpha grid");
    bool has0 = false;
    bool has1 = false;
    for (double a : alphas) {
        require(a >= 0.0 && a <= 1.0, ErrorKind::invalid_argument, "alpha grid outside [0, 1]");
        has0 = has0 || a == 0.0;
        has1 = has1 || a == 1.0;
    }
    require(has0 && has1, ErrorKind::invalid_argument, "alpha grid must include 0 and 1");
    e1.check_compatible(base);
    e2.check_compatible(base);

    InterpolationSweep sweep;
    sweep.alphas.assign(alphas.begin(), alphas.end());
    for (double a : alphas) {
        const auto merged = interpolate_adapters(e1, e2, a);
        experts::AdapterPredictor pred(base, merged);
        const auto s1 = loss_sum(pred, task1);
        const auto s2 = loss_sum(pred, task2);
        sweep.combined.push_back((s1.total + s2.total) / static_cast<double>(s1.tokens + s2.tokens));
        sweep.task1.push_back(s1.mean());
        sweep.task2.push_back(s2.mean());
    }
    const auto o1 = loss_sum(experts::AdapterPredictor(base, e1), task1);
    const auto o2 = loss_sum(experts::AdapterPredictor(base, e2), task2);
    sweep.oracle_ref = (o1.total + o2.total) / static_cast<double>(o1.tokens + o2.tokens);
    return sweep;
}

std::vector<double> alpha_grid(std::size_t points)
{
    require(points >= 2, ErrorKind::invalid_argument, "alpha grid needs at least 2 points");
    std::vector<double> out(points);
    for (std::size_t i = 0; i < points; ++i) {
        out[i] = static_cast<double>(i) / static_cast<double>(points - 1);
    }
    out.back() = 1.0;
    return out;
}

}  // namespace afl::analysis
