#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "crowdsca/tensor.hpp"

namespace crowdsca {

enum class DType : std::uint8_t { f32 = 1, f64 = 2, i64 = 3, u8 = 4 };

struct TensorRecord {
    DType dtype = DType::f32;
    std::vector<std::int64_t> dims;
    std::vector<unsigned char> bytes;
};

/// Named-tensor container.
///
/// Layout (little endian): magic "CSTA0001", uint32 record count, then per
/// record uint32 name length, name bytes, uint8 dtype, uint8 rank, int64 dims,
/// uint64 payload size, payload. A trailing uint64 FNV-1a hash of everything
/// before it detects truncation and corruption.
class TensorArchive {
public:
    template <typename T>
    void put(const std::string& name, const Tensor<T>& t);
    void put_int(const std::string& name, std::int64_t v);
    void put_string(const std::string& name, const std::string& s);

    [[nodiscard]] bool contains(const std::string& name) const { return records_.count(name) != 0; }
    /// Converts stored f32/f64 data to T. Throws LoadError if missing or not a float tensor.
    template <typename T>
    [[nodiscard]] Tensor<T> get(const std::string& name) const;
    [[nodiscard]] std::int64_t get_int(const std::string& name) const;
    [[nodiscard]] std::string get_string(const std::string& name) const;

    [[nodiscard]] const std::map<std::string, TensorRecord>& records() const { return records_; }

    void save(const std::filesystem::path& path) const;
    static TensorArchive load(const std::filesystem::path& path);

private:
    const TensorRecord& require(const std::string& name) const;
    std::map<std::string, TensorRecord> records_;
};

}  // namespace crowdsca
