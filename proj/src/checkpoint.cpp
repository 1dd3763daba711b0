#include "bcaps/checkpoint.hpp"

#include "bcaps/dataio.hpp"
#include "bcaps/error.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <bit>
#include <cstring>

namespace bcaps {

namespace {

constexpr char kMagic[4] = {'B', 'C', 'A', 'P'};

template <class U>
void put_le(std::vector<std::uint8_t>& out, U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <class U>
U get_le(const std::uint8_t* p) {
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
    return v;
}

template <class T>
auto bits_of(T v) {
    if constexpr (std::is_same_v<T, float>) {
        return std::bit_cast<std::uint32_t>(v);
    } else if constexpr (std::is_same_v<T, double>) {
        return std::bit_cast<std::uint64_t>(v);
    } else if constexpr (std::is_same_v<T, std::int64_t>) {
        return static_cast<std::uint64_t>(v);
    } else {
        return v;
    }
}

template <class T>
T from_bits(const std::uint8_t* p) {
    if constexpr (std::is_same_v<T, float>) {
        return std::bit_cast<float>(get_le<std::uint32_t>(p));
    } else if constexpr (std::is_same_v<T, double>) {
        return std::bit_cast<double>(get_le<std::uint64_t>(p));
    } else if constexpr (std::is_same_v<T, std::int64_t>) {
        return static_cast<std::int64_t>(get_le<std::uint64_t>(p));
    } else {
        return *p;
    }
}

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    const std::uint8_t* take(std::uint64_t n, std::string_view what) {
        if (n > bytes_.size() - pos_) {
            throw ParseError(fmt::format("truncated checkpoint reading {}: expected length {} bytes, actual length {}",
                                         what, pos_ + n, bytes_.size()),
                             pos_);
        }
        const std::uint8_t* p = bytes_.data() + pos_;
        pos_ += n;
        return p;
    }

    template <class U>
    U read(std::string_view what) {
        return get_le<U>(take(sizeof(U), what));
    }

    std::size_t pos() const { return pos_; }
    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

} // namespace

std::size_t dtype_size(DType d) {
    switch (d) {
    case DType::f32: return 4;
    case DType::f64: return 8;
    case DType::u8: return 1;
    case DType::i64: return 8;
    }
    throw ContractError("unknown dtype");
}

std::string to_string(DType d) {
    switch (d) {
    case DType::f32: return "f32";
    case DType::f64: return "f64";
    case DType::u8: return "u8";
    case DType::i64: return "i64";
    }
    return "?";
}

bool Checkpoint::contains(std::string_view name) const {
    return std::any_of(records.begin(), records.end(), [&](const Record& r) { return r.name == name; });
}

const Record& Checkpoint::get(std::string_view name) const {
    for (const auto& r : records) {
        if (r.name == name) return r;
    }
    throw CheckpointMismatch(fmt::format("checkpoint has no record '{}'", name));
}

void Checkpoint::put(Record record) {
    for (auto& r : records) {
        if (r.name == record.name) {
            r = std::move(record);
            return;
        }
    }
    records.push_back(std::move(record));
}

void Checkpoint::put_text(std::string name, std::string_view text) {
    put(Record{std::move(name), DType::u8, {text.size()}, std::vector<std::uint8_t>(text.begin(), text.end())});
}

std::string Checkpoint::get_text(std::string_view name) const {
    const Record& r = get(name);
    if (r.dtype != DType::u8) throw CheckpointMismatch(fmt::format("record '{}' is not text", name));
    return std::string(r.bytes.begin(), r.bytes.end());
}

template <class T>
void Checkpoint::put_values(std::string name, std::span<const T> values, std::vector<std::uint64_t> shape) {
    if (shape.empty()) shape = {values.size()};
    Record r{std::move(name), dtype_of<T>(), std::move(shape), {}};
    r.bytes.reserve(values.size() * sizeof(T));
    for (T v : values) put_le(r.bytes, bits_of(v));
    put(std::move(r));
}

template <class T>
std::vector<T> Checkpoint::get_values(std::string_view name) const {
    const Record& r = get(name);
    if (r.dtype != dtype_of<T>()) {
        throw CheckpointMismatch(fmt::format("record '{}' has dtype {}, expected {}", name, to_string(r.dtype),
                                             to_string(dtype_of<T>())));
    }
    std::vector<T> out(r.bytes.size() / sizeof(T));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = from_bits<T>(r.bytes.data() + i * sizeof(T));
    return out;
}

template <class T>
void Checkpoint::put_tensor(std::string name, const Tensor<T>& tensor) {
    std::vector<std::uint64_t> shape(tensor.shape().begin(), tensor.shape().end());
    put_values<T>(std::move(name), tensor.data(), std::move(shape));
}

template <class T>
void Checkpoint::load_tensor(std::string_view name, Tensor<T>& tensor) const {
    const Record& r = get(name);
    const std::vector<std::uint64_t> want(tensor.shape().begin(), tensor.shape().end());
    if (r.shape != want) {
        throw CheckpointMismatch(fmt::format("record '{}' has shape [{}], model expects {}", name,
                                             fmt::join(r.shape, ", "), shape_str(tensor.shape())));
    }
    const auto values = get_values<T>(name);
    std::copy(values.begin(), values.end(), tensor.mutable_data().begin());
}

#define BCAPS_CKPT_VALUES(T)                                                                          \
    template void Checkpoint::put_values<T>(std::string, std::span<const T>, std::vector<std::uint64_t>); \
    template std::vector<T> Checkpoint::get_values<T>(std::string_view) const;
BCAPS_CKPT_VALUES(float)
BCAPS_CKPT_VALUES(double)
BCAPS_CKPT_VALUES(std::uint8_t)
BCAPS_CKPT_VALUES(std::int64_t)
#undef BCAPS_CKPT_VALUES

template void Checkpoint::put_tensor<float>(std::string, const Tensor<float>&);
template void Checkpoint::put_tensor<double>(std::string, const Tensor<double>&);
template void Checkpoint::load_tensor<float>(std::string_view, Tensor<float>&) const;
template void Checkpoint::load_tensor<double>(std::string_view, Tensor<double>&) const;

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
    std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
    put_le<std::uint32_t>(out, ckpt.version);
    put_le<std::uint64_t>(out, ckpt.records.size());
    for (const auto& r : ckpt.records) {
        std::uint64_t elems = 1;
        for (auto d : r.shape) elems *= d;
        if (elems * dtype_size(r.dtype) != r.bytes.size()) {
            throw ContractError(fmt::format("record '{}' holds {} bytes but its shape needs {}", r.name,
                                            r.bytes.size(), elems * dtype_size(r.dtype)));
        }
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(r.name.size()));
        out.insert(out.end(), r.name.begin(), r.name.end());
        out.push_back(static_cast<std::uint8_t>(r.dtype));
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(r.shape.size()));
        for (auto d : r.shape) put_le<std::uint64_t>(out, d);
        put_le<std::uint64_t>(out, r.bytes.size());
        out.insert(out.end(), r.bytes.begin(), r.bytes.end());
    }
    return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
    Reader in(bytes);
    const std::uint8_t* magic = in.take(4, "magic");
    if (std::memcmp(magic, kMagic, 4) != 0) throw ParseError("bad checkpoint magic (expected \"BCAP\")", 0);
    Checkpoint ckpt;
    ckpt.version = in.read<std::uint32_t>("version");
    if (ckpt.version != kCheckpointVersion) {
        throw ParseError(fmt::format("unsupported checkpoint version {} (this build reads version {})", ckpt.version,
                                     kCheckpointVersion),
                         4);
    }
    const auto count = in.read<std::uint64_t>("record count");
    for (std::uint64_t k = 0; k < count; ++k) {
        Record r;
        const auto name_len = in.read<std::uint32_t>("record name length");
        const std::uint8_t* name = in.take(name_len, "record name");
        r.name.assign(reinterpret_cast<const char*>(name), name_len);
        const std::size_t dtype_at = in.pos();
        const auto dtype = in.read<std::uint8_t>("record dtype");
        if (dtype > static_cast<std::uint8_t>(DType::i64)) {
            throw ParseError(fmt::format("record '{}' has unknown dtype code {}", r.name, dtype), dtype_at);
        }
        r.dtype = static_cast<DType>(dtype);
        const auto rank = in.read<std::uint32_t>("record rank");
        std::uint64_t elems = 1;
        for (std::uint32_t d = 0; d < rank; ++d) {
            r.shape.push_back(in.read<std::uint64_t>("record shape"));
            elems *= r.shape.back();
        }
        const std::size_t len_at = in.pos();
        const auto len = in.read<std::uint64_t>("record byte length");
        if (len != elems * dtype_size(r.dtype)) {
            throw ParseError(fmt::format("record '{}' declares {} bytes but its shape needs {}", r.name, len,
                                         elems * dtype_size(r.dtype)),
                             len_at);
        }
        const std::uint8_t* data = in.take(len, fmt::format("record '{}' data", r.name));
        r.bytes.assign(data, data + len);
        ckpt.records.push_back(std::move(r));
    }
    if (in.remaining() != 0) {
        throw ParseError(fmt::format("{} trailing bytes after the last record", in.remaining()), in.pos());
    }
    return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    write_file(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    return decode_checkpoint(read_file(path));
}

} // namespace bcaps
