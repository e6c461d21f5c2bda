#include "afl/lm/model.hpp"

#include <cmath>
#include <cstdio>

#include "afl/error.hpp"
#include "afl/lm/binary_io.hpp"

namespace afl::lm {

std::string SiteInfo::name() const
{
    return "layer" + std::to_string(layer) + (kind == SiteKind::attention ? ".attn" : ".ffn");
}

void BaseConfig::validate() const
{
    require(vocab >= 2, ErrorKind::invalid_argument, "base config: vocab must be >= 2");
    require(width >= 1, ErrorKind::invalid_argument, "base config: width must be >= 1");
    require(layers >= 1, ErrorKind::invalid_argument, "base config: layers must be >= 1");
    require(ffn_width >= 1, ErrorKind::invalid_argument, "base config: ffn_width must be >= 1");
    require(max_len >= 2, ErrorKind::invalid_argument, "base config: max_len must be >= 2");
}

BaseLM::BaseLM(const BaseConfig& config) : config_(config)
{
    config_.validate();
    layout();
}

void BaseLM::layout()
{
    const auto m = config_.width;
    const auto ff = config_.ffn_width;
    std::size_t off = 0;
    slots_.clear();
    auto slot = [&](const std::string& name, std::size_t rows, std::size_t cols) {
        slots_.push_back({name, off, rows, cols});
        const auto start = off;
        off += rows * cols;
        return start;
    };
    tok_emb_ = slot("tok_emb", config_.vocab, m);
    pos_emb_ = slot("pos_emb", config_.max_len, m);
    layers_.clear();
    sites_.clear();
    for (std::size_t l = 0; l < config_.layers; ++l) {
        const auto p = "layer" + std::to_string(l) + ".";
        LayerOffsets lo{};
        lo.wq = slot(p + "wq", m, m);
        lo.wk = slot(p + "wk", m, m);
        lo.attn_w = slot(p + "attn_w", m, m);
        lo.attn_b = slot(p + "attn_b", 1, m);
        lo.ffn_w = slot(p + "ffn_w", ff, m);
        lo.ffn_b = slot(p + "ffn_b", 1, ff);
        lo.out_w = slot(p + "out_w", m, ff);
        lo.out_b = slot(p + "out_b", 1, m);
        layers_.push_back(lo);
        sites_.push_back({l, SiteKind::attention, m, m});
        sites_.push_back({l, SiteKind::feed_forward, m, ff});
    }
    head_w_ = slot("head_w", config_.vocab, m);
    head_b_ = slot("head_b", 1, config_.vocab);
    params_.assign(off, 0.0);

    std::size_t toff = 0;
    t_layers_.clear();
    for (std::size_t l = 0; l < config_.layers; ++l) {
        TOffsets t{};
        t.wq = toff;
        toff += m * m;
        t.wk = toff;
        toff += m * m;
        t.attn_w = toff;
        toff += m * m;
        t.ffn_w = toff;
        toff += m * ff;
        t.out_w = toff;
        toff += ff * m;
        t_layers_.push_back(t);
    }
    t_head_ = toff;
    toff += m * config_.vocab;
    transposed_.assign(toff, 0.0);
}

BaseLM BaseLM::build(const BaseConfig& config, num::Rng& rng)
{
    BaseLM lm(config);
    const double m = static_cast<double>(config.width);
    const double ff = static_cast<double>(config.ffn_width);
    auto fill = [&](std::size_t off, std::size_t count, double stddev) {
        for (std::size_t i = 0; i < count; ++i) {
            lm.params_[off + i] = rng.normal(0.0, stddev);
        }
    };
    const auto mw = config.width;
    fill(lm.tok_emb_, config.vocab * mw, 1.0);
    fill(lm.pos_emb_, config.max_len * mw, 0.5);
    for (const auto& lo : lm.layers_) {
        fill(lo.wq, mw * mw, 1.0 / std::sqrt(m));
        fill(lo.wk, mw * mw, 1.0 / std::sqrt(m));
        fill(lo.attn_w, mw * mw, 0.5 / std::sqrt(m));
        fill(lo.ffn_w, config.ffn_width * mw, 1.0 / std::sqrt(m));
        fill(lo.out_w, mw * config.ffn_width, 0.5 / std::sqrt(ff));
    }
    fill(lm.head_w_, config.vocab * mw, 1.0 / std::sqrt(m));
    lm.refresh();
    return lm;
}

void BaseLM::refresh()
{
    const auto m = config_.width;
    const auto ff = config_.ffn_width;
    auto transpose_into = [&](std::size_t src, std::size_t rows, std::size_t cols, std::size_t dst) {
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < cols; ++c) {
                transposed_[dst + c * rows + r] = params_[src + r * cols + c];
            }
        }
    };
    for (std::size_t l = 0; l < config_.layers; ++l) {
        transpose_into(layers_[l].wq, m, m, t_layers_[l].wq);
        transpose_into(layers_[l].wk, m, m, t_layers_[l].wk);
        transpose_into(layers_[l].attn_w, m, m, t_layers_[l].attn_w);
        transpose_into(layers_[l].ffn_w, ff, m, t_layers_[l].ffn_w);
        transpose_into(layers_[l].out_w, m, ff, t_layers_[l].out_w);
    }
    transpose_into(head_w_, config_.vocab, m, t_head_);
    fingerprint_ = compute_fingerprint(config_, params_);
}

Matrix BaseLM::site_weight(std::size_t site) const
{
    const auto& info = sites_.at(site);
    const auto& lo = layers_[info.layer];
    const auto off = info.kind == SiteKind::attention ? lo.attn_w : lo.ffn_w;
    return Matrix(info.out_dim, info.in_dim,
                  std::vector<double>(params_.begin() + static_cast<std::ptrdiff_t>(off),
                                      params_.begin() + static_cast<std::ptrdiff_t>(off + info.out_dim * info.in_dim)));
}

std::vector<double> BaseLM::site_bias(std::size_t site) const
{
    const auto& info = sites_.at(site);
    const auto& lo = layers_[info.layer];
    const auto off = info.kind == SiteKind::attention ? lo.attn_b : lo.ffn_b;
    return {params_.begin() + static_cast<std::ptrdiff_t>(off),
            params_.begin() + static_cast<std::ptrdiff_t>(off + info.out_dim)};
}

std::uint64_t compute_fingerprint(const BaseConfig& config, std::span<const double> params)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](std::uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            h ^= (v >> (8 * i)) & 0xffu;
            h *= 0x100000001b3ULL;
        }
    };
    mix(config.vocab);
    mix(config.width);
    mix(config.layers);
    mix(config.ffn_width);
    mix(config.max_len);
    for (double v : params) {
        mix(double_bits(v));
    }
    return h;
}

std::string fingerprint_hex(std::uint64_t fp)
{
    char buf[19];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fp));
    return buf;
}

std::uint64_t parse_fingerprint_hex(const std::string& text)
{
    require(!text.empty() && text.size() <= 16, ErrorKind::bad_format, "bad fingerprint '" + text + "'");
    std::size_t used = 0;
    std::uint64_t v = 0;
    try {
        v = std::stoull(text, &used, 16);
    } catch (const std::exception&) {
        fail(ErrorKind::bad_format, "bad fingerprint '" + text + "'");
    }
    require(used == text.size(), ErrorKind::bad_format, "bad fingerprint '" + text + "'");
    return v;
}

void BaseLM::save(const std::filesystem::path& path) const
{
    Blob blob;
    blob.kind = BlobKind::base_model;
    blob.fingerprint = fingerprint_;
    blob.meta = {config_.vocab, config_.width, config_.layers, config_.ffn_width, config_.max_len};
    for (const auto& s : slots_) {
        blob.tensors.emplace_back(s.rows, s.cols,
                                  std::vector<double>(params_.begin() + static_cast<std::ptrdiff_t>(s.offset),
                                                      params_.begin() + static_cast<std::ptrdiff_t>(s.offset + s.rows * s.cols)));
    }
    write_blob(path, blob);
}

BaseLM BaseLM::load(const std::filesystem::path& path)
{
    const Blob blob = read_blob(path);
    require(blob.kind == BlobKind::base_model, ErrorKind::bad_format, "not a base model file: " + path.string());
    require(blob.meta.size() == 5, ErrorKind::bad_format, "base model header has wrong field count: " + path.string());
    BaseConfig cfg{blob.meta[0], blob.meta[1], blob.meta[2], blob.meta[3], blob.meta[4]};
    BaseLM lm(cfg);
    require(blob.tensors.size() == lm.slots_.size(), ErrorKind::bad_format, "base model tensor count mismatch: " + path.string());
    for (std::size_t i = 0; i < lm.slots_.size(); ++i) {
        const auto& s = lm.slots_[i];
        const auto& t = blob.tensors[i];
        require(t.rows() == s.rows && t.cols() == s.cols, ErrorKind::shape_mismatch, "base model tensor '" + s.name + "' has wrong shape");
        std::copy(t.flat().begin(), t.flat().end(), lm.params_.begin() + static_cast<std::ptrdiff_t>(s.offset));
    }
    lm.refresh();
    require(lm.fingerprint_ == blob.fingerprint, ErrorKind::mismatch,
            "base model fingerprint mismatch in " + path.string() + " (file corrupted?)");
    return lm;
}

}  // namespace afl::lm
