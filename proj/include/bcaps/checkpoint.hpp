#pragma once

#include "bcaps/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace bcaps {

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { f32 = 0, f64 = 1, u8 = 2, i64 = 3 };

std::size_t dtype_size(DType d);
std::string to_string(DType d);

template <class T>
constexpr DType dtype_of();
template <> constexpr DType dtype_of<float>() { return DType::f32; }
template <> constexpr DType dtype_of<double>() { return DType::f64; }
template <> constexpr DType dtype_of<std::uint8_t>() { return DType::u8; }
template <> constexpr DType dtype_of<std::int64_t>() { return DType::i64; }

/// One named, typed, shaped blob. `bytes` holds little-endian element data.
struct Record {
    std::string name;
    DType dtype = DType::u8;
    std::vector<std::uint64_t> shape;
    std::vector<std::uint8_t> bytes;

    bool operator==(const Record&) const = default;
};

/// Ordered record table.
///
/// File layout (all integers little-endian):
///   "BCAP" | u32 version | u64 record count |
///   per record: u32 name length | name | u8 dtype | u32 rank | u64 dims[rank] |
///               u64 byte length | bytes
struct Checkpoint {
    std::uint32_t version = kCheckpointVersion;
    std::vector<Record> records;

    bool contains(std::string_view name) const;
    const Record& get(std::string_view name) const;  ///< CheckpointMismatch if absent

    void put(Record record);  ///< replaces a record of the same name
    void put_text(std::string name, std::string_view text);
    std::string get_text(std::string_view name) const;

    template <class T>
    void put_values(std::string name, std::span<const T> values, std::vector<std::uint64_t> shape = {});
    template <class T>
    std::vector<T> get_values(std::string_view name) const;

    template <class T>
    void put_tensor(std::string name, const Tensor<T>& tensor);
    /// Copies the record into `tensor`; dtype and shape must match exactly.
    template <class T>
    void load_tensor(std::string_view name, Tensor<T>& tensor) const;

    bool operator==(const Checkpoint&) const = default;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

} // namespace bcaps
