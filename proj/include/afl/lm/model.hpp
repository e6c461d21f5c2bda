#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "afl/numerics/matrix.hpp"
#include "afl/numerics/rng.hpp"

namespace afl::lm {

using num::Matrix;
using Token = std::uint32_t;

enum class SiteKind { attention, feed_forward };

/// One adapter injection site: a frozen projection W0·h + bias.
struct SiteInfo {
    std::size_t layer = 0;
    SiteKind kind = SiteKind::attention;
    std::size_t in_dim = 0;
    std::size_t out_dim = 0;

    std::string name() const;
};

struct BaseConfig {
    std::size_t vocab = 32;
    std::size_t width = 32;
    std::size_t layers = 2;
    std::size_t ffn_width = 64;
    std::size_t max_len = 32;

    void validate() const;
    bool operator==(const BaseConfig&) const = default;
};

/// Small pre-LN causal transformer. Each layer has single-head attention whose
/// mixed context passes through the "attn" site, and a GELU feed-forward block
/// whose up-projection is the "ffn" site. All parameters live in one flat buffer.
class BaseLM {
public:
    struct LayerOffsets {
        std::size_t wq, wk, attn_w, attn_b, ffn_w, ffn_b, out_w, out_b;
    };

    BaseLM() = default;
    explicit BaseLM(const BaseConfig& config);

    static BaseLM build(const BaseConfig& config, num::Rng& rng);

    const BaseConfig& config() const noexcept { return config_; }
    const std::vector<SiteInfo>& sites() const noexcept { return sites_; }
    std::size_t site_count() const noexcept { return sites_.size(); }
    static std::size_t site_index(std::size_t layer, SiteKind kind) { return 2 * layer + (kind == SiteKind::feed_forward ? 1 : 0); }

    std::uint64_t fingerprint() const noexcept { return fingerprint_; }

    std::span<const double> params() const noexcept { return params_; }
    /// Mutable access for pre-training; call refresh() after every update.
    std::span<double> mutable_params() noexcept { return params_; }
    void refresh();

    // Raw views into the flat parameter buffer.
    const double* tok_emb() const { return params_.data() + tok_emb_; }
    const double* pos_emb() const { return params_.data() + pos_emb_; }
    const LayerOffsets& layer(std::size_t l) const { return layers_[l]; }
    const double* at(std::size_t offset) const { return params_.data() + offset; }
    std::size_t head_w_offset() const { return head_w_; }
    std::size_t head_b_offset() const { return head_b_; }
    std::size_t tok_emb_offset() const { return tok_emb_; }
    std::size_t pos_emb_offset() const { return pos_emb_; }

    /// Transposed weight copies (in × out) used by the forward kernels.
    const double* wq_t(std::size_t l) const { return transposed_.data() + t_layers_[l].wq; }
    const double* wk_t(std::size_t l) const { return transposed_.data() + t_layers_[l].wk; }
    const double* attn_w_t(std::size_t l) const { return transposed_.data() + t_layers_[l].attn_w; }
    const double* ffn_w_t(std::size_t l) const { return transposed_.data() + t_layers_[l].ffn_w; }
    const double* out_w_t(std::size_t l) const { return transposed_.data() + t_layers_[l].out_w; }
    const double* head_w_t() const { return transposed_.data() + t_head_; }

    /// Frozen weight matrix of a site (out × in) and its bias.
    Matrix site_weight(std::size_t site) const;
    std::vector<double> site_bias(std::size_t site) const;

    /// Names and shapes of every parameter tensor, in storage order.
    struct TensorSlot {
        std::string name;
        std::size_t offset, rows, cols;
    };
    const std::vector<TensorSlot>& tensors() const noexcept { return slots_; }

    void save(const std::filesystem::path& path) const;
    static BaseLM load(const std::filesystem::path& path);

private:
    void layout();

    BaseConfig config_;
    std::vector<SiteInfo> sites_;
    std::vector<double> params_;
    std::vector<double> transposed_;
    std::vector<TensorSlot> slots_;
    std::size_t tok_emb_ = 0, pos_emb_ = 0, head_w_ = 0, head_b_ = 0;
    std::vector<LayerOffsets> layers_;
    struct TOffsets {
        std::size_t wq, wk, attn_w, ffn_w, out_w;
    };
    std::vector<TOffsets> t_layers_;
    std::size_t t_head_ = 0;
    std::uint64_t fingerprint_ = 0;
};

/// Hash of the config and every frozen parameter's bit pattern.
std::uint64_t compute_fingerprint(const BaseConfig& config, std::span<const double> params);
std::string fingerprint_hex(std::uint64_t fp);
std::uint64_t parse_fingerprint_hex(const std::string& text);

}  // namespace afl::lm
