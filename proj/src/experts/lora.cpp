#include "afl/experts/lora.hpp"

#include "afl/error.hpp"
#include "afl/lm/binary_io.hpp"

namespace afl::experts {

std::size_t LoraAdapter::param_count() const
{
    std::size_t n = 0;
    for (std::size_t s = 0; s < a.size(); ++s) {
        n += a[s].size() + b[s].size();
    }
    return n;
}

LoraAdapter LoraAdapter::zeros(const BaseLM& base, std::size_t rank, double alpha)
{
    require(rank >= 1, ErrorKind::invalid_argument, "LoRA rank must be >= 1");
    LoraAdapter ad;
    ad.rank = rank;
    ad.alpha = alpha;
    ad.fingerprint = base.fingerprint();
    for (const auto& site : base.sites()) {
        ad.a.emplace_back(site.out_dim, rank);
        ad.b.emplace_back(rank, site.in_dim);
    }
    return ad;
}

LoraAdapter LoraAdapter::for_training(const BaseLM& base, std::size_t rank, double alpha, num::Rng& rng, double init_std)
{
    auto ad = zeros(base, rank, alpha);
    for (auto& a : ad.a) {
        for (auto& v : a.flat()) {
            v = rng.normal(0.0, init_std);
        }
    }
    return ad;
}

void LoraAdapter::check_compatible(const BaseLM& base) const
{
    require(fingerprint == base.fingerprint(), ErrorKind::mismatch, "adapter/base mismatch: fingerprint differs");
    require(a.size() == base.site_count() && b.size() == base.site_count(), ErrorKind::mismatch,
            "adapter/base mismatch: site count differs");
    for (std::size_t s = 0; s < a.size(); ++s) {
        const auto& info = base.sites()[s];
        require(a[s].rows() == info.out_dim && a[s].cols() == rank && b[s].rows() == rank && b[s].cols() == info.in_dim,
                ErrorKind::mismatch, "adapter/base mismatch: shape differs at site " + info.name());
    }
}

Matrix LoraAdapter::delta(std::size_t site) const { return num::matmul(a.at(site), b.at(site)); }

void LoraAdapter::save(const std::filesystem::path& path) const
{
    lm::Blob blob;
    blob.kind = lm::BlobKind::adapter;
    blob.fingerprint = fingerprint;
    blob.meta = {rank, lm::double_bits(alpha), a.size()};
    for (std::size_t s = 0; s < a.size(); ++s) {
        blob.tensors.push_back(a[s]);
        blob.tensors.push_back(b[s]);
    }
    lm::write_blob(path, blob);
}

LoraAdapter LoraAdapter::load(const std::filesystem::path& path)
{
    auto blob = lm::read_blob(path);
    require(blob.kind == lm::BlobKind::adapter, ErrorKind::bad_format, "not an adapter file: " + path.string());
    require(blob.meta.size() == 3, ErrorKind::bad_format, "adapter header has wrong field count: " + path.string());
    LoraAdapter ad;
    ad.rank = blob.meta[0];
    ad.alpha = lm::bits_double(blob.meta[1]);
    ad.fingerprint = blob.fingerprint;
    const auto sites = blob.meta[2];
    require(ad.rank >= 1 && blob.tensors.size() == 2 * sites, ErrorKind::bad_format, "adapter tensor count mismatch: " + path.string());
    for (std::size_t s = 0; s < sites; ++s) {
        auto& a = blob.tensors[2 * s];
        auto& b = blob.tensors[2 * s + 1];
        require(a.cols() == ad.rank && b.rows() == ad.rank, ErrorKind::shape_mismatch, "adapter factor shape mismatch: " + path.string());
        ad.a.push_back(std::move(a));
        ad.b.push_back(std::move(b));
    }
    return ad;
}

LoraHook::LoraHook(const LoraAdapter& adapter, LoraAdapter* grads, double dropout, num::Rng* rng)
    : adapter_(adapter), grads_(grads), dropout_(dropout), rng_(rng)
{
    require(dropout_ >= 0.0 && dropout_ < 1.0, ErrorKind::invalid_argument, "dropout must be in [0, 1)");
    require(dropout_ == 0.0 || rng_ != nullptr, ErrorKind::invalid_argument, "dropout needs an rng");
    for (std::size_t s = 0; s < adapter.site_count(); ++s) {
        at_.push_back(adapter.a[s].transposed());
        bt_.push_back(adapter.b[s].transposed());
    }
    dropped_.resize(adapter.site_count());
    masks_.resize(adapter.site_count());
    mid_.resize(adapter.site_count());
}

void LoraHook::forward(std::size_t site, const Matrix& in, Matrix& out)
{
    const std::size_t T = in.rows();
    const std::size_t r = adapter_.rank;
    const Matrix* src = &in;
    if (dropout_ > 0.0) {
        Matrix& mask = masks_[site];
        Matrix& d = dropped_[site];
        mask = Matrix(in.rows(), in.cols());
        d = in;
        const double keep = 1.0 / (1.0 - dropout_);
        for (std::size_t i = 0; i < d.size(); ++i) {
            mask.data()[i] = rng_->uniform() < dropout_ ? 0.0 : keep;
            d.data()[i] *= mask.data()[i];
        }
        src = &d;
    }
    Matrix& mid = mid_[site];
    mid = Matrix(T, r);
    num::gemm_acc(src->data(), T, in.cols(), bt_[site].data(), r, mid.data());
    Matrix scaled = mid * adapter_.scale();
    num::gemm_acc(scaled.data(), T, r, at_[site].data(), out.cols(), out.data());
}

void LoraHook::backward(std::size_t site, const Matrix& in, const Matrix& grad_out, Matrix& grad_in)
{
    const std::size_t T = in.rows();
    const std::size_t r = adapter_.rank;
    const double s = adapter_.scale();
    const std::size_t n_out = grad_out.cols();
    const std::size_t n_in = in.cols();

    Matrix dmid(T, r);
    num::gemm_acc(grad_out.data(), T, n_out, adapter_.a[site].data(), r, dmid.data());
    dmid *= s;

    const Matrix& src = dropout_ > 0.0 ? dropped_[site] : in;
    if (grads_) {
        Matrix mid_s = mid_[site] * s;
        num::gemm_tn_acc(grad_out.data(), T, n_out, mid_s.data(), r, grads_->a[site].data());
        num::gemm_tn_acc(dmid.data(), T, r, src.data(), n_in, grads_->b[site].data());
    }
    Matrix gin(T, n_in);
    num::gemm_acc(dmid.data(), T, r, adapter_.b[site].data(), n_in, gin.data());
    if (dropout_ > 0.0) {
        const Matrix& mask = masks_[site];
        for (std::size_t i = 0; i < gin.size(); ++i) {
            gin.data()[i] *= mask.data()[i];
        }
    }
    grad_in += gin;
}

DenseDeltaHook::DenseDeltaHook(const DenseDelta& delta) : delta_(delta)
{
    for (const auto& d : delta.delta) {
        transposed_.push_back(d.transposed());
    }
}

void DenseDeltaHook::forward(std::size_t site, const Matrix& in, Matrix& out)
{
    num::gemm_acc(in.data(), in.rows(), in.cols(), transposed_[site].data(), out.cols(), out.data());
}

void DenseDeltaHook::backward(std::size_t site, const Matrix& in, const Matrix& grad_out, Matrix& grad_in)
{
    num::gemm_acc(grad_out.data(), grad_out.rows(), grad_out.cols(), delta_.delta[site].data(), in.cols(), grad_in.data());
}

lm::Trace forward(const BaseLM& base, const LoraAdapter* adapter, const Sequence& seq)
{
    if (!adapter) {
        return lm::run_forward(base, seq.inputs);
    }
    adapter->check_compatible(base);
    LoraHook hook(*adapter);
    return lm::run_forward(base, seq.inputs, &hook);
}

AdapterPredictor::AdapterPredictor(const BaseLM& base, const LoraAdapter& adapter) : base_(base), adapter_(adapter)
{
    adapter_.check_compatible(base_);
}

Matrix AdapterPredictor::predict(const Sequence& seq) const
{
    LoraHook hook(adapter_);
    return lm::run_forward(base_, seq.inputs, &hook).probs;
}

DenseDeltaPredictor::DenseDeltaPredictor(const BaseLM& base, DenseDelta delta) : base_(base), delta_(std::move(delta))
{
    require(delta_.fingerprint == base.fingerprint(), ErrorKind::mismatch, "adapter/base mismatch: fingerprint differs");
}

Matrix DenseDeltaPredictor::predict(const Sequence& seq) const
{
    DenseDeltaHook hook(delta_);
    return lm::run_forward(base_, seq.inputs, &hook).probs;
}

}  // namespace afl::experts
