#include "afl/experts/library.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include <json.hpp>

#include "afl/error.hpp"
#include "afl/lm/binary_io.hpp"

namespace afl::experts {

ParamVector flatten(const LoraAdapter& adapter)
{
    ParamVector out;
    out.reserve(adapter.param_count());
    for (std::size_t s = 0; s < adapter.site_count(); ++s) {
        out.insert(out.end(), adapter.a[s].flat().begin(), adapter.a[s].flat().end());
        out.insert(out.end(), adapter.b[s].flat().begin(), adapter.b[s].flat().end());
    }
    return out;
}

LoraAdapter unflatten(const ParamVector& params, const LoraAdapter& like)
{
    require(params.size() == like.param_count(), ErrorKind::shape_mismatch, "unflatten: parameter count mismatch");
    LoraAdapter out = like;
    std::size_t off = 0;
    for (std::size_t s = 0; s < out.site_count(); ++s) {
        for (auto* m : {&out.a[s], &out.b[s]}) {
            std::copy(params.begin() + static_cast<std::ptrdiff_t>(off),
                      params.begin() + static_cast<std::ptrdiff_t>(off + m->size()), m->data());
            off += m->size();
        }
    }
    return out;
}

void ExpertLibrary::add(LoraAdapter adapter, std::string name)
{
    if (experts_.empty()) {
        fingerprint_ = adapter.fingerprint;
        rank_ = adapter.rank;
        alpha_ = adapter.alpha;
    } else {
        const auto& first = experts_.front();
        require(adapter.fingerprint == fingerprint_, ErrorKind::mismatch, "adapter/base mismatch: expert '" + name + "'");
        require(adapter.rank == rank_ && adapter.alpha == alpha_ && adapter.site_count() == first.site_count(),
                ErrorKind::mismatch, "expert '" + name + "' has a different rank, alpha or site layout");
        for (std::size_t s = 0; s < adapter.site_count(); ++s) {
            require(adapter.a[s].rows() == first.a[s].rows() && adapter.b[s].cols() == first.b[s].cols(), ErrorKind::mismatch,
                    "expert '" + name + "' has a different site layout");
        }
        if (!adapter.task.empty()) {
            for (const auto& e : experts_) {
                require(e.task != adapter.task, ErrorKind::invalid_argument, "duplicate task label '" + adapter.task + "'");
            }
        }
    }
    for (const auto& n : names_) {
        require(n != name, ErrorKind::invalid_argument, "duplicate expert name '" + name + "'");
    }
    experts_.push_back(std::move(adapter));
    names_.push_back(std::move(name));
}

void ExpertLibrary::check_compatible(const BaseLM& base) const
{
    for (const auto& e : experts_) {
        e.check_compatible(base);
    }
}

ExpertLibrary ExpertLibrary::without_labels() const
{
    ExpertLibrary out = *this;
    for (std::size_t i = 0; i < out.experts_.size(); ++i) {
        out.experts_[i].task.clear();
        out.names_[i] = "expert" + std::to_string(i);
    }
    return out;
}

void save_library(const ExpertLibrary& lib, const std::filesystem::path& dir)
{
    std::filesystem::create_directories(dir);
    nlohmann::json manifest;
    manifest["version"] = kManifestVersion;
    manifest["base_fingerprint"] = lm::fingerprint_hex(lib.fingerprint());
    manifest["rank"] = lib.rank();
    manifest["alpha"] = lib.alpha();
    manifest["notes"] = lib.notes;
    manifest["experts"] = nlohmann::json::array();
    for (std::size_t i = 0; i < lib.size(); ++i) {
        const std::string file = lib.name(i) + ".afl";
        lib[i].save(dir / file);
        manifest["experts"].push_back({{"name", lib.name(i)}, {"task", lib[i].task}, {"file", file}});
    }
    std::ofstream out(dir / "manifest.json");
    require(static_cast<bool>(out), ErrorKind::io, "cannot write manifest in " + dir.string());
    out << manifest.dump(2) << '\n';
}

ExpertLibrary load_library(const std::filesystem::path& dir)
{
    const auto manifest_path = dir / "manifest.json";
    std::ifstream in(manifest_path);
    require(static_cast<bool>(in), ErrorKind::missing_file, "missing file: " + manifest_path.string());
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::bad_format, "malformed manifest " + manifest_path.string() + ": " + e.what());
    }
    try {
        const int version = manifest.at("version").get<int>();
        require(version == kManifestVersion, ErrorKind::bad_version, "unknown manifest version " + std::to_string(version));
        const auto fp = lm::parse_fingerprint_hex(manifest.at("base_fingerprint").get<std::string>());
        const auto rank = manifest.at("rank").get<std::size_t>();
        const auto alpha = manifest.at("alpha").get<double>();

        ExpertLibrary lib;
        lib.notes = manifest.value("notes", std::string{});
        for (const auto& entry : manifest.at("experts")) {
            const auto file = entry.at("file").get<std::string>();
            const auto path = dir / file;
            require(std::filesystem::exists(path), ErrorKind::missing_file, "manifest lists missing file '" + file + "'");
            auto adapter = LoraAdapter::load(path);
            require(adapter.fingerprint == fp, ErrorKind::mismatch, "adapter/base mismatch in '" + file + "'");
            require(adapter.rank == rank && adapter.alpha == alpha, ErrorKind::mismatch,
                    "expert '" + file + "' disagrees with manifest rank/alpha");
            adapter.task = entry.value("task", std::string{});
            lib.add(std::move(adapter), entry.at("name").get<std::string>());
        }
        return lib;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::bad_format, "malformed manifest " + manifest_path.string() + ": " + e.what());
    }
}

Matrix cosine_similarity_matrix(const ExpertLibrary& lib, SimilarityBasis basis)
{
    require(!lib.empty(), ErrorKind::invalid_argument, "cosine similarity of an empty library");
    std::vector<ParamVector> vecs;
    for (std::size_t i = 0; i < lib.size(); ++i) {
        if (basis == SimilarityBasis::factors) {
            vecs.push_back(flatten(lib[i]));
        } else {
            ParamVector v;
            for (std::size_t s = 0; s < lib[i].site_count(); ++s) {
                const auto d = lib[i].delta(s);
                v.insert(v.end(), d.flat().begin(), d.flat().end());
            }
            vecs.push_back(std::move(v));
        }
    }
    const std::size_t n = vecs.size();
    std::vector<double> norms(n);
    for (std::size_t i = 0; i < n; ++i) {
        norms[i] = num::norm2(vecs[i]);
        require(norms[i] > 0.0, ErrorKind::numerical, "expert '" + lib.name(i) + "' has zero norm");
    }
    Matrix sim(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        sim(i, i) = 1.0;
        for (std::size_t j = i + 1; j < n; ++j) {
            const double c = std::clamp(num::dot(vecs[i], vecs[j]) / (norms[i] * norms[j]), -1.0, 1.0);
            sim(i, j) = c;
            sim(j, i) = c;
        }
    }
    return sim;
}

}  // namespace afl::experts
