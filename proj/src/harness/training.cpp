#include "afl/harness/training.hpp"

#include <cmath>
#include <numeric>

#include "afl/error.hpp"
#include "afl/numerics/optimizer.hpp"

namespace afl::harness {

BaseLM train_base(const lm::BaseConfig& config, const Dataset& mixture, const PretrainHyper& hyper, std::uint64_t seed)
{
    num::Rng init_rng = num::Rng::derive(seed, "base-init");
    BaseLM base = BaseLM::build(config, init_rng);
    if (hyper.examples == 0 || mixture.empty()) {
        return base;
    }
    require(hyper.batch_size >= 1, ErrorKind::invalid_argument, "batch size must be >= 1");
    num::Rng order_rng = num::Rng::derive(seed, "base-order");
    num::Optimizer opt(num::OptimizerKind::adaptive_moment, hyper.lr);
    std::vector<std::size_t> order(mixture.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> grad(base.params().size());
    std::size_t pos = order.size();
    std::size_t seen = 0;
    std::size_t step = 0;
    while (seen < hyper.examples) {
        std::vector<std::size_t> batch;
        while (batch.size() < hyper.batch_size && seen < hyper.examples) {
            if (pos == order.size()) {
                order_rng.shuffle(order);
                pos = 0;
            }
            batch.push_back(order[pos++]);
            ++seen;
        }
        std::fill(grad.begin(), grad.end(), 0.0);
        const double loss = lm::batch_cross_entropy(base, mixture, batch, nullptr, true, grad);
        require(std::isfinite(loss) && num::all_finite(grad), ErrorKind::numerical,
                "base pre-training diverged at step " + std::to_string(step));
        opt.step(base.mutable_params(), grad);
        base.refresh();
        ++step;
    }
    return base;
}

AdapterObjective::AdapterObjective(const BaseLM& base, LoraAdapter shape, const Dataset& train, const Dataset& val, double dropout)
    : base_(base), shape_(std::move(shape)), train_(train), val_(val), dropout_(dropout)
{
    shape_.check_compatible(base);
}

LoraAdapter AdapterObjective::adapter(std::span<const double> params) const
{
    return experts::unflatten(experts::ParamVector(params.begin(), params.end()), shape_);
}

double AdapterObjective::loss_grad(std::span<const double> params, std::span<const std::size_t> items, std::span<double> grad,
                                   num::Rng& rng)
{
    const auto ad = adapter(params);
    auto g = LoraAdapter::zeros(base_, ad.rank, ad.alpha);
    experts::LoraHook hook(ad, &g, dropout_, &rng);
    const double loss = lm::batch_cross_entropy(base_, train_, items, &hook, true);
    const auto flat = experts::flatten(g);
    std::copy(flat.begin(), flat.end(), grad.begin());
    return loss;
}

double AdapterObjective::loss(std::span<const double> params, std::span<const std::size_t> items)
{
    const auto ad = adapter(params);
    experts::LoraHook hook(ad);
    return lm::batch_cross_entropy(base_, train_, items, &hook, false);
}

double AdapterObjective::validation_loss(std::span<const double> params)
{
    const Dataset& set = val_.empty() ? train_ : val_;
    std::vector<std::size_t> all(set.size());
    std::iota(all.begin(), all.end(), 0);
    const auto ad = adapter(params);
    experts::LoraHook hook(ad);
    return lm::batch_cross_entropy(base_, set, all, &hook, false);
}

LoraAdapter train_expert(const BaseLM& base, const Dataset& train, const Dataset& val, const ExpertHyper& hyper,
                         std::uint64_t seed, fusion::FitReport* report)
{
    require(!train.empty(), ErrorKind::invalid_argument, "empty training data");
    num::Rng init_rng = num::Rng::derive(seed, "expert-init");
    auto start = LoraAdapter::for_training(base, hyper.rank, hyper.alpha, init_rng, hyper.init_std);
    AdapterObjective obj(base, start, train, val, hyper.dropout);
    fusion::TrainHyper th = hyper.train;
    th.seed = seed;
    const auto params = fit(obj, experts::flatten(start), th, report);
    return obj.adapter(params);
}

LoraAdapter train_shared_expert(const BaseLM& base, std::span<const TaskData> tasks, const ExpertHyper& hyper,
                                std::uint64_t seed, fusion::FitReport* report)
{
    Dataset train;
    Dataset val;
    for (const auto& t : tasks) {
        train.insert(train.end(), t.train.begin(), t.train.end());
        val.insert(val.end(), t.val.begin(), t.val.end());
    }
    auto shared = train_expert(base, train, val, hyper, seed, report);
    shared.task = "shared";
    return shared;
}

}  // namespace afl::harness
