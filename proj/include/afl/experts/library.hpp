#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "afl/experts/lora.hpp"

namespace afl::experts {

/// Flattened adapter parameters: for each site in order, A row-major then B row-major.
using ParamVector = std::vector<double>;

ParamVector flatten(const LoraAdapter& adapter);
/// Inverse of flatten; `like` supplies shapes and metadata.
LoraAdapter unflatten(const ParamVector& params, const LoraAdapter& like);

/// Ordered set of experts sharing base, rank, alpha and site layout.
class ExpertLibrary {
public:
    ExpertLibrary() = default;

    void add(LoraAdapter adapter, std::string name);

    std::size_t size() const noexcept { return experts_.size(); }
    bool empty() const noexcept { return experts_.empty(); }
    const LoraAdapter& operator[](std::size_t i) const { return experts_.at(i); }
    const std::vector<LoraAdapter>& experts() const noexcept { return experts_; }
    const std::string& name(std::size_t i) const { return names_.at(i); }
    const std::vector<std::string>& names() const noexcept { return names_; }
    std::uint64_t fingerprint() const noexcept { return fingerprint_; }
    std::size_t rank() const noexcept { return rank_; }
    double alpha() const noexcept { return alpha_; }

    std::string notes;

    void check_compatible(const BaseLM& base) const;
    /// Copy with every task label cleared and names replaced by "expert<i>".
    ExpertLibrary without_labels() const;

private:
    std::vector<LoraAdapter> experts_;
    std::vector<std::string> names_;
    std::uint64_t fingerprint_ = 0;
    std::size_t rank_ = 0;
    double alpha_ = 0.0;
};

inline constexpr int kManifestVersion = 1;

/// Writes manifest.json plus one AFL1 file per expert.
void save_library(const ExpertLibrary& lib, const std::filesystem::path& dir);
ExpertLibrary load_library(const std::filesystem::path& dir);

enum class SimilarityBasis { factors, delta };

/// Pairwise cosine similarity of expert parameter vectors, either the raw
/// (A, B) factors or the reconstructed per-site ΔW = A·B.
Matrix cosine_similarity_matrix(const ExpertLibrary& lib, SimilarityBasis basis = SimilarityBasis::factors);

}  // namespace afl::experts
