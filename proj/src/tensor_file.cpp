#include "crowdsca/tensor_file.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <iterator>

#include "crowdsca/errors.hpp"

namespace crowdsca {

namespace {

constexpr std::array<char, 8> kMagic = {'C', 'S', 'T', 'A', '0', '0', '0', '1'};

std::uint64_t fnv1a(const unsigned char* p, std::size_t n) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

template <typename U>
void append(std::vector<unsigned char>& buf, U v) {
    unsigned char b[sizeof(U)];
    std::memcpy(b, &v, sizeof(U));
    buf.insert(buf.end(), b, b + sizeof(U));
}

class Reader {
public:
    Reader(const std::vector<unsigned char>& buf, std::size_t end, std::string file)
        : buf_(buf), end_(end), file_(std::move(file)) {}

    template <typename U>
    U read() {
        need(sizeof(U));
        U v;
        std::memcpy(&v, buf_.data() + pos_, sizeof(U));
        pos_ += sizeof(U);
        return v;
    }
    void bytes(unsigned char* dst, std::size_t n) {
        need(n);
        std::memcpy(dst, buf_.data() + pos_, n);
        pos_ += n;
    }
    [[nodiscard]] bool done() const { return pos_ == end_; }

private:
    void need(std::size_t n) const {
        if (pos_ + n > end_) {
            throw LoadError(file_ + ": truncated tensor archive");
        }
    }
    const std::vector<unsigned char>& buf_;
    std::size_t end_;
    std::size_t pos_ = 0;
    std::string file_;
};

std::size_t dtype_size(DType d) {
    switch (d) {
        case DType::f32: return 4;
        case DType::f64: return 8;
        case DType::i64: return 8;
        case DType::u8: return 1;
    }
    return 0;
}

}  // namespace

template <typename T>
void TensorArchive::put(const std::string& name, const Tensor<T>& t) {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
    TensorRecord r;
    r.dtype = std::is_same_v<T, float> ? DType::f32 : DType::f64;
    r.dims = {t.n(), t.c(), t.h(), t.w()};
    r.bytes.resize(t.size() * sizeof(T));
    std::memcpy(r.bytes.data(), t.data(), r.bytes.size());
    records_[name] = std::move(r);
}

void TensorArchive::put_int(const std::string& name, std::int64_t v) {
    TensorRecord r;
    r.dtype = DType::i64;
    r.dims = {1};
    r.bytes.resize(8);
    std::memcpy(r.bytes.data(), &v, 8);
    records_[name] = std::move(r);
}

void TensorArchive::put_string(const std::string& name, const std::string& s) {
    TensorRecord r;
    r.dtype = DType::u8;
    r.dims = {static_cast<std::int64_t>(s.size())};
    r.bytes.assign(s.begin(), s.end());
    records_[name] = std::move(r);
}

const TensorRecord& TensorArchive::require(const std::string& name) const {
    const auto it = records_.find(name);
    if (it == records_.end()) {
        throw LoadError("tensor archive has no entry '" + name + "'");
    }
    return it->second;
}

template <typename T>
Tensor<T> TensorArchive::get(const std::string& name) const {
    const auto& r = require(name);
    if (r.dims.size() != 4) {
        throw LoadError("entry '" + name + "' is not a 4-d tensor");
    }
    Tensor<T> t(static_cast<int>(r.dims[0]), static_cast<int>(r.dims[1]), static_cast<int>(r.dims[2]),
                static_cast<int>(r.dims[3]));
    if (r.dtype == DType::f32) {
        const auto* p = reinterpret_cast<const float*>(r.bytes.data());
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(p[i]);
    } else if (r.dtype == DType::f64) {
        const auto* p = reinterpret_cast<const double*>(r.bytes.data());
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(p[i]);
    } else {
        throw LoadError("entry '" + name + "' is not a floating-point tensor");
    }
    return t;
}

std::int64_t TensorArchive::get_int(const std::string& name) const {
    const auto& r = require(name);
    if (r.dtype != DType::i64 || r.bytes.size() != 8) {
        throw LoadError("entry '" + name + "' is not an integer scalar");
    }
    std::int64_t v = 0;
    std::memcpy(&v, r.bytes.data(), 8);
    return v;
}

std::string TensorArchive::get_string(const std::string& name) const {
    const auto& r = require(name);
    if (r.dtype != DType::u8) {
        throw LoadError("entry '" + name + "' is not a byte string");
    }
    return {r.bytes.begin(), r.bytes.end()};
}

void TensorArchive::save(const std::filesystem::path& path) const {
    std::vector<unsigned char> buf(kMagic.begin(), kMagic.end());
    append<std::uint32_t>(buf, static_cast<std::uint32_t>(records_.size()));
    for (const auto& [name, r] : records_) {
        append<std::uint32_t>(buf, static_cast<std::uint32_t>(name.size()));
        buf.insert(buf.end(), name.begin(), name.end());
        append<std::uint8_t>(buf, static_cast<std::uint8_t>(r.dtype));
        append<std::uint8_t>(buf, static_cast<std::uint8_t>(r.dims.size()));
        for (auto d : r.dims) append<std::int64_t>(buf, d);
        append<std::uint64_t>(buf, r.bytes.size());
        buf.insert(buf.end(), r.bytes.begin(), r.bytes.end());
    }
    append<std::uint64_t>(buf, fnv1a(buf.data(), buf.size()));
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary);
        if (!os) {
            throw LoadError("cannot write " + path.string());
        }
        os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
        if (!os) {
            throw LoadError("write failed for " + path.string());
        }
    }
    std::filesystem::rename(tmp, path);
}

TensorArchive TensorArchive::load(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw LoadError("cannot open " + path.string());
    }
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    const auto file = path.string();
    if (buf.size() < kMagic.size() + 4 + 8 || !std::equal(kMagic.begin(), kMagic.end(), buf.begin())) {
        throw LoadError(file + ": not a tensor archive");
    }
    const std::size_t body = buf.size() - 8;
    std::uint64_t stored = 0;
    std::memcpy(&stored, buf.data() + body, 8);
    if (stored != fnv1a(buf.data(), body)) {
        throw LoadError(file + ": checksum mismatch (corrupt archive)");
    }
    Reader rd(buf, body, file);
    for (std::size_t i = 0; i < kMagic.size(); ++i) rd.read<char>();
    const auto count = rd.read<std::uint32_t>();
    TensorArchive ar;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto len = rd.read<std::uint32_t>();
        std::string name(len, '\0');
        rd.bytes(reinterpret_cast<unsigned char*>(name.data()), len);
        TensorRecord r;
        const auto dt = rd.read<std::uint8_t>();
        if (dt < 1 || dt > 4) {
            throw LoadError(file + ": bad dtype for '" + name + "'");
        }
        r.dtype = static_cast<DType>(dt);
        const auto rank = rd.read<std::uint8_t>();
        std::int64_t elems = 1;
        for (int k = 0; k < rank; ++k) {
            const auto d = rd.read<std::int64_t>();
            if (d < 0) throw LoadError(file + ": negative dimension for '" + name + "'");
            r.dims.push_back(d);
            elems *= d;
        }
        const auto nbytes = rd.read<std::uint64_t>();
        if (nbytes != static_cast<std::uint64_t>(elems) * dtype_size(r.dtype)) {
            throw LoadError(file + ": payload size mismatch for '" + name + "'");
        }
        r.bytes.resize(nbytes);
        rd.bytes(r.bytes.data(), nbytes);
        ar.records_[name] = std::move(r);
    }
    if (!rd.done()) {
        throw LoadError(file + ": trailing bytes in tensor archive");
    }
    return ar;
}

template void TensorArchive::put<float>(const std::string&, const Tensor<float>&);
template void TensorArchive::put<double>(const std::string&, const Tensor<double>&);
template Tensor<float> TensorArchive::get<float>(const std::string&) const;
template Tensor<double> TensorArchive::get<double>(const std::string&) const;

}  // namespace crowdsca
