#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "afl/analysis/cluster.hpp"
#include "afl/analysis/eval.hpp"
#include "afl/routing/router.hpp"

namespace afl::routing {

enum class HcInit { plain, arrow };

std::string to_string(HcInit init);
HcInit parse_hc_init(const std::string& name);

/// Experts merged within each cluster by input-independent simplex weights,
/// with a router over the K merged cluster experts.
struct ClusterRouting {
    analysis::ClusterAssignment clusters;
    std::vector<std::vector<double>> member_lambda;   // per cluster, in member order
    Router router;                                    // K rows per site

    std::vector<LoraAdapter> cluster_experts(const ExpertLibrary& lib) const;
    nlohmann::json to_json() const;
};

/// Per cluster: A_c = Σ μ_i A_i, B_c = Σ μ_i B_i over its members.
std::vector<LoraAdapter> merge_clusters(const ExpertLibrary& lib, const std::vector<std::vector<std::size_t>>& members,
                                        const std::vector<std::vector<double>>& mu);

/// Joint objective over [router weights | member logits grouped by cluster].
class HcObjective final : public fusion::Objective {
public:
    HcObjective(const BaseLM& base, const ExpertLibrary& lib, analysis::ClusterAssignment clusters, Router shape,
                const Dataset& train, const Dataset& val);

    std::size_t param_count() const override { return shape_.param_count() + lib_.size(); }
    std::size_t train_size() const override { return train_.size(); }
    double loss_grad(std::span<const double> params, std::span<const std::size_t> items, std::span<double> grad,
                     num::Rng& rng) override;
    double loss(std::span<const double> params, std::span<const std::size_t> items) override;
    double validation_loss(std::span<const double> params) override;

    ClusterRouting routing(std::span<const double> params) const;

private:
    double eval(const Dataset& data, std::span<const double> params, std::span<const std::size_t> items) const;

    const BaseLM& base_;
    const ExpertLibrary& lib_;
    analysis::ClusterAssignment clusters_;
    std::vector<std::vector<std::size_t>> members_;
    Router shape_;
    const Dataset& train_;
    const Dataset& val_;
};

ClusterRouting build_hc_routing(const BaseLM& base, const ExpertLibrary& lib, const analysis::ClusterAssignment& clusters,
                                const Dataset& train, const Dataset& val, HcInit init, const fusion::TrainHyper& hyper,
                                fusion::FitReport* report = nullptr);

ClusterRouting build_hc_routing(const BaseLM& base, const ExpertLibrary& lib, std::size_t k, const Dataset& train,
                                const Dataset& val, HcInit init, const fusion::TrainHyper& hyper,
                                fusion::FitReport* report = nullptr,
                                experts::SimilarityBasis basis = experts::SimilarityBasis::factors);

class HcPredictor final : public lm::Predictor {
public:
    HcPredictor(const BaseLM& base, const ExpertLibrary& lib, const ClusterRouting& routing);
    Matrix predict(const Sequence& seq) const override { return inner_.predict(seq); }

private:
    std::vector<LoraAdapter> experts_;
    RoutedPredictor inner_;
};

/// Mean task loss with the router limited to top-k_small minus the same with top-k_large.
double calibration_delta(const BaseLM& base, std::span<const LoraAdapter> experts, const Router& router,
                         std::span<const analysis::TaskSplit> tasks, std::size_t k_small, std::size_t k_large);

}  // namespace afl::routing
