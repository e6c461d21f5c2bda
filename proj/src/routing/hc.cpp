#include "afl/routing/hc.hpp"

#include <numeric>

#include "afl/error.hpp"
#include "afl/numerics/ops.hpp"

namespace afl::routing {

std::string to_string(HcInit init) { return init == HcInit::arrow ? "arrow" : "plain"; }

HcInit parse_hc_init(const std::string& name)
{
    if (name == "arrow") {
        return HcInit::arrow;
    }
    if (name == "plain") {
        return HcInit::plain;
    }
    fail(ErrorKind::invalid_argument, "unknown HC init '" + name + "'");
}

std::vector<LoraAdapter> merge_clusters(const ExpertLibrary& lib, const std::vector<std::vector<std::size_t>>& members,
                                        const std::vector<std::vector<double>>& mu)
{
    require(members.size() == mu.size(), ErrorKind::shape_mismatch, "one weight row per cluster");
    std::vector<LoraAdapter> out;
    for (std::size_t c = 0; c < members.size(); ++c) {
        require(!members[c].empty() && members[c].size() == mu[c].size(), ErrorKind::shape_mismatch,
                "cluster weights do not match its members");
        LoraAdapter merged = lib[members[c].front()];
        merged.task.clear();
        for (std::size_t s = 0; s < merged.site_count(); ++s) {
            merged.a[s].fill(0.0);
            merged.b[s].fill(0.0);
            for (std::size_t j = 0; j < members[c].size(); ++j) {
                const auto& e = lib[members[c][j]];
                const double w = mu[c][j];
                for (std::size_t k = 0; k < merged.a[s].size(); ++k) {
                    merged.a[s].data()[k] += w * e.a[s].data()[k];
                }
                for (std::size_t k = 0; k < merged.b[s].size(); ++k) {
                    merged.b[s].data()[k] += w * e.b[s].data()[k];
                }
            }
        }
        out.push_back(std::move(merged));
    }
    return out;
}

std::vector<LoraAdapter> ClusterRouting::cluster_experts(const ExpertLibrary& lib) const
{
    return merge_clusters(lib, clusters.members(), member_lambda);
}

nlohmann::json ClusterRouting::to_json() const
{
    return {{"clusters", clusters.to_json()},
            {"member_lambda", member_lambda},
            {"router", {{"mode", to_string(router.mode)}, {"init", router.init}}}};
}

HcObjective::HcObjective(const BaseLM& base, const ExpertLibrary& lib, analysis::ClusterAssignment clusters, Router shape,
                         const Dataset& train, const Dataset& val)
    : base_(base), lib_(lib), clusters_(std::move(clusters)), shape_(std::move(shape)), train_(train), val_(val)
{
    require(clusters_.cluster_of.size() == lib.size(), ErrorKind::shape_mismatch, "cluster assignment does not cover the library");
    members_ = clusters_.members();
    shape_.check(base, clusters_.k);
}

ClusterRouting HcObjective::routing(std::span<const double> params) const
{
    ClusterRouting out;
    out.clusters = clusters_;
    out.router = shape_;
    out.router.assign(params.first(shape_.param_count()));
    std::size_t off = shape_.param_count();
    for (const auto& m : members_) {
        out.member_lambda.push_back(num::softmax(params.subspan(off, m.size())));
        off += m.size();
    }
    return out;
}

double HcObjective::loss_grad(std::span<const double> params, std::span<const std::size_t> items, std::span<double> grad,
                              num::Rng&)
{
    const auto hc = routing(params);
    const auto experts = merge_clusters(lib_, members_, hc.member_lambda);
    std::vector<Matrix> dw;
    for (const auto& w : hc.router.weights) {
        dw.emplace_back(w.rows(), w.cols());
    }
    std::vector<LoraAdapter> dexp;
    for (const auto& e : experts) {
        dexp.push_back(LoraAdapter::zeros(base_, e.rank, e.alpha));
    }
    RoutingHook hook(experts, hc.router, &dw, &dexp);
    const double loss = lm::batch_cross_entropy(base_, train_, items, &hook, true);

    std::size_t off = 0;
    for (const auto& g : dw) {
        std::copy(g.flat().begin(), g.flat().end(), grad.begin() + static_cast<std::ptrdiff_t>(off));
        off += g.size();
    }
    for (std::size_t c = 0; c < members_.size(); ++c) {
        std::vector<double> dmu(members_[c].size(), 0.0);
        for (std::size_t j = 0; j < members_[c].size(); ++j) {
            const auto& e = lib_[members_[c][j]];
            for (std::size_t s = 0; s < e.site_count(); ++s) {
                dmu[j] += num::dot(dexp[c].a[s].flat(), e.a[s].flat()) + num::dot(dexp[c].b[s].flat(), e.b[s].flat());
            }
        }
        num::softmax_backward(hc.member_lambda[c], dmu, grad.subspan(off, dmu.size()));
        off += dmu.size();
    }
    return loss;
}

double HcObjective::eval(const Dataset& data, std::span<const double> params, std::span<const std::size_t> items) const
{
    const auto hc = routing(params);
    const auto experts = merge_clusters(lib_, members_, hc.member_lambda);
    RoutingHook hook(experts, hc.router);
    return lm::batch_cross_entropy(base_, data, items, &hook, false);
}

double HcObjective::loss(std::span<const double> params, std::span<const std::size_t> items)
{
    return eval(train_, params, items);
}

double HcObjective::validation_loss(std::span<const double> params)
{
    const Dataset& set = val_.empty() ? train_ : val_;
    std::vector<std::size_t> all(set.size());
    std::iota(all.begin(), all.end(), 0);
    return eval(set, params, all);
}

ClusterRouting build_hc_routing(const BaseLM& base, const ExpertLibrary& lib, const analysis::ClusterAssignment& clusters,
                                const Dataset& train, const Dataset& val, HcInit init, const fusion::TrainHyper& hyper,
                                fusion::FitReport* report)
{
    require(!train.empty(), ErrorKind::invalid_argument, "empty training data");
    lib.check_compatible(base);
    Router shape;
    if (init == HcInit::arrow) {
        const auto members = clusters.members();
        std::vector<std::vector<double>> uniform;
        std::vector<std::string> names;
        for (std::size_t c = 0; c < members.size(); ++c) {
            uniform.emplace_back(members[c].size(), 1.0 / static_cast<double>(members[c].size()));
            names.push_back("cluster" + std::to_string(c));
        }
        shape = arrow_router(merge_clusters(lib, members, uniform), names);
    } else {
        shape = Router::zeros(base, clusters.k, ScoreMode::plain);
        shape.init = "zero";
    }
    HcObjective obj(base, lib, clusters, shape, train, val);
    std::vector<double> start = shape.flatten();
    start.resize(obj.param_count(), 0.0);
    const auto params = fit(obj, std::move(start), hyper, report);
    return obj.routing(params);
}

ClusterRouting build_hc_routing(const BaseLM& base, const ExpertLibrary& lib, std::size_t k, const Dataset& train,
                                const Dataset& val, HcInit init, const fusion::TrainHyper& hyper, fusion::FitReport* report,
                                experts::SimilarityBasis basis)
{
    return build_hc_routing(base, lib, analysis::mbc_cluster(lib, k, basis), train, val, init, hyper, report);
}

HcPredictor::HcPredictor(const BaseLM& base, const ExpertLibrary& lib, const ClusterRouting& routing)
    : experts_(routing.cluster_experts(lib)), inner_(base, experts_, routing.router)
{
}

double calibration_delta(const BaseLM& base, std::span<const LoraAdapter> experts, const Router& router,
                         std::span<const analysis::TaskSplit> tasks, std::size_t k_small, std::size_t k_large)
{
    const std::size_t n = experts.size();
    require(k_small >= 1 && k_small < k_large && k_large <= n, ErrorKind::invalid_argument,
            "calibration needs 1 <= k_small < k_large <= N");
    auto with_k = [&](std::size_t k) {
        Router r = router;
        r.top_k = k == n ? 0 : k;
        RoutedPredictor pred(base, experts, std::move(r));
        return analysis::eval_method(pred, tasks, "top-" + std::to_string(k)).mean;
    };
    return with_k(k_small) - with_k(k_large);
}

}  // namespace afl::routing
