#include "afl/analysis/cluster.hpp"

#include <algorithm>
#include <limits>

#include "afl/error.hpp"

namespace afl::analysis {

std::vector<std::vector<std::size_t>> ClusterAssignment::members() const
{
    std::vector<std::vector<std::size_t>> out(k);
    for (std::size_t i = 0; i < cluster_of.size(); ++i) {
        out[cluster_of[i]].push_back(i);
    }
    return out;
}

nlohmann::json ClusterAssignment::to_json() const
{
    nlohmann::json trace_j = nlohmann::json::array();
    for (const auto& m : trace) {
        trace_j.push_back({{"a", m.a}, {"b", m.b}, {"distance", m.distance}});
    }
    return {{"k", k}, {"cluster_of", cluster_of}, {"members", members()}, {"trace", trace_j}};
}

ClusterAssignment agglomerate(const num::Matrix& similarity, std::size_t k)
{
    const std::size_t n = similarity.rows();
    require(n == similarity.cols(), ErrorKind::shape_mismatch, "similarity matrix must be square");
    require(k >= 1 && k <= n, ErrorKind::invalid_argument, "cluster count must lie in [1, N]");

    // Clusters kept sorted by smallest member; members kept sorted.
    std::vector<std::vector<std::size_t>> clusters;
    for (std::size_t i = 0; i < n; ++i) {
        clusters.push_back({i});
    }
    auto linkage = [&](const std::vector<std::size_t>& x, const std::vector<std::size_t>& y) {
        double sum = 0.0;
        for (std::size_t i : x) {
            for (std::size_t j : y) {
                sum += 1.0 - similarity(std::min(i, j), std::max(i, j));
            }
        }
        return sum / static_cast<double>(x.size() * y.size());
    };

    ClusterAssignment out;
    while (clusters.size() > k) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t bi = 0;
        std::size_t bj = 1;
        for (std::size_t i = 0; i < clusters.size(); ++i) {
            for (std::size_t j = i + 1; j < clusters.size(); ++j) {
                const double d = linkage(clusters[i], clusters[j]);
                if (d < best) {
                    best = d;
                    bi = i;
                    bj = j;
                }
            }
        }
        out.trace.push_back({clusters[bi].front(), clusters[bj].front(), best});
        auto& dst = clusters[bi];
        dst.insert(dst.end(), clusters[bj].begin(), clusters[bj].end());
        std::sort(dst.begin(), dst.end());
        clusters.erase(clusters.begin() + static_cast<std::ptrdiff_t>(bj));
    }
    out.k = clusters.size();
    out.cluster_of.assign(n, 0);
    for (std::size_t c = 0; c < clusters.size(); ++c) {
        for (std::size_t i : clusters[c]) {
            out.cluster_of[i] = c;
        }
    }
    return out;
}

ClusterAssignment mbc_cluster(const experts::ExpertLibrary& lib, std::size_t k, experts::SimilarityBasis basis)
{
    require(!lib.empty(), ErrorKind::invalid_argument, "cannot cluster an empty library");
    return agglomerate(experts::cosine_similarity_matrix(lib, basis), k);
}

}  // namespace afl::analysis
