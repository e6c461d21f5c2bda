#include "afl/lm/binary_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "afl/error.hpp"

namespace afl::lm {
namespace {

constexpr std::array<char, 4> kMagic = {'A', 'F', 'L', '1'};

template <class T>
void put_le(std::string& buf, T value)
{
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        buf.push_back(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xffu));
    }
}

class Reader {
public:
    Reader(std::string data, std::string name) : data_(std::move(data)), name_(std::move(name)) {}

    template <class T>
    T get()
    {
        require(pos_ + sizeof(T) <= data_.size(), ErrorKind::truncated, "truncated file: " + name_);
        std::uint64_t v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        }
        pos_ += sizeof(T);
        return static_cast<T>(v);
    }

    std::size_t remaining() const { return data_.size() - pos_; }
    const std::string& name() const { return name_; }
    std::string_view peek(std::size_t n) const { return std::string_view(data_).substr(pos_, n); }
    void skip(std::size_t n) { pos_ += n; }

private:
    std::string data_;
    std::string name_;
    std::size_t pos_ = 0;
};

}  // namespace

std::uint64_t double_bits(double v) { return std::bit_cast<std::uint64_t>(v); }
double bits_double(std::uint64_t v) { return std::bit_cast<double>(v); }

void write_blob(const std::filesystem::path& path, const Blob& blob)
{
    std::string buf(kMagic.begin(), kMagic.end());
    put_le<std::uint32_t>(buf, kBlobVersion);
    put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(blob.kind));
    put_le<std::uint64_t>(buf, blob.fingerprint);
    put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(blob.meta.size()));
    for (auto m : blob.meta) {
        put_le<std::uint64_t>(buf, m);
    }
    put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(blob.tensors.size()));
    for (const auto& t : blob.tensors) {
        put_le<std::uint64_t>(buf, t.rows());
        put_le<std::uint64_t>(buf, t.cols());
        for (double v : t.flat()) {
            put_le<std::uint64_t>(buf, double_bits(v));
        }
    }
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorKind::io, "cannot write " + path.string());
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    require(static_cast<bool>(out), ErrorKind::io, "write failed: " + path.string());
}

Blob read_blob(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorKind::missing_file, "missing file: " + path.string());
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    Reader r(std::move(data), path.string());

    require(r.remaining() >= kMagic.size(), ErrorKind::truncated, "truncated file: " + r.name());
    require(r.peek(4) == std::string_view(kMagic.data(), kMagic.size()), ErrorKind::bad_format,
            "not an AFL1 file: " + r.name());
    r.skip(4);
    const auto version = r.get<std::uint32_t>();
    require(version == kBlobVersion, ErrorKind::bad_version,
            "unknown format version " + std::to_string(version) + " in " + r.name());

    Blob blob;
    blob.kind = static_cast<BlobKind>(r.get<std::uint32_t>());
    blob.fingerprint = r.get<std::uint64_t>();
    const auto n_meta = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < n_meta; ++i) {
        blob.meta.push_back(r.get<std::uint64_t>());
    }
    const auto n_tensors = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < n_tensors; ++i) {
        const auto rows = r.get<std::uint64_t>();
        const auto cols = r.get<std::uint64_t>();
        require(rows * cols * 8 <= r.remaining(), ErrorKind::truncated, "truncated file: " + r.name());
        num::Matrix m(rows, cols);
        for (auto& v : m.flat()) {
            v = bits_double(r.get<std::uint64_t>());
        }
        blob.tensors.push_back(std::move(m));
    }
    require(r.remaining() == 0, ErrorKind::bad_format, "trailing bytes in " + r.name());
    return blob;
}

}  // namespace afl::lm
