#pragma once

#include <cstddef>
#include <vector>

#include <json.hpp>

#include "afl/experts/library.hpp"

namespace afl::analysis {

struct Merge {
    std::size_t a = 0;   // smallest member of each merged cluster
    std::size_t b = 0;
    double distance = 0.0;
};

/// Expert → cluster map with clusters numbered 0..K−1 by their smallest member.
struct ClusterAssignment {
    std::vector<std::size_t> cluster_of;
    std::size_t k = 0;
    std::vector<Merge> trace;

    std::vector<std::vector<std::size_t>> members() const;
    nlohmann::json to_json() const;
};

/// Average-linkage agglomerative clustering on distance 1 − cosine.
/// Ties go to the pair whose (smallest-member) indices compare lowest.
ClusterAssignment agglomerate(const num::Matrix& similarity, std::size_t k);

ClusterAssignment mbc_cluster(const experts::ExpertLibrary& lib, std::size_t k,
                              experts::SimilarityBasis basis = experts::SimilarityBasis::factors);

}  // namespace afl::analysis
