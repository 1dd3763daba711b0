#include "bcaps/dataio.hpp"

#include "bcaps/error.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

namespace bcaps {

namespace {

std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset) {
    return (static_cast<std::uint32_t>(bytes[offset]) << 24) | (static_cast<std::uint32_t>(bytes[offset + 1]) << 16) |
           (static_cast<std::uint32_t>(bytes[offset + 2]) << 8) | static_cast<std::uint32_t>(bytes[offset + 3]);
}

void append_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

} // namespace

IdxFile parse_idx(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4) {
        throw ParseError(fmt::format("IDX header truncated: need 4 magic bytes, have {}", bytes.size()), bytes.size());
    }
    IdxFile idx;
    idx.magic = read_be32(bytes, 0);
    if (idx.magic != kIdxLabelMagic && idx.magic != kIdxImageMagic) {
        throw ParseError(fmt::format("bad IDX magic 0x{:08x} (expected 0x00000801 or 0x00000803)", idx.magic), 0);
    }
    const std::size_t ndims = idx.magic & 0xff;
    const std::size_t header = 4 + 4 * ndims;
    if (bytes.size() < header) {
        throw ParseError(fmt::format("IDX header declares {} dimensions but only {} bytes follow the magic", ndims,
                                     bytes.size() - 4),
                         bytes.size());
    }
    std::uint64_t expected = 1;
    for (std::size_t d = 0; d < ndims; ++d) {
        idx.dims.push_back(read_be32(bytes, 4 + 4 * d));
        expected *= idx.dims.back();
    }
    const std::uint64_t actual = bytes.size() - header;
    if (actual != expected) {
        throw ParseError(fmt::format("IDX payload length mismatch: dims require {} bytes, found {}", expected, actual),
                         header + std::min(actual, expected));
    }
    idx.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(header), bytes.end());
    return idx;
}

std::vector<std::uint8_t> serialize_idx(const IdxFile& idx) {
    if ((idx.magic & 0xff) != idx.dims.size()) {
        throw ContractError(fmt::format("IDX magic 0x{:08x} does not match {} dims", idx.magic, idx.dims.size()));
    }
    std::vector<std::uint8_t> out;
    append_be32(out, idx.magic);
    for (auto d : idx.dims) append_be32(out, d);
    out.insert(out.end(), idx.payload.begin(), idx.payload.end());
    return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(fmt::format("cannot open '{}' for reading", path.string()));
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError(fmt::format("read failure on '{}'", path.string()));
    return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(fmt::format("cannot open '{}' for writing", path.string()));
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError(fmt::format("write failure on '{}'", path.string()));
}

IdxFile read_idx(const std::filesystem::path& path) {
    return parse_idx(read_file(path));
}

template <class T>
Tensor<T> Dataset::batch(std::span<const std::size_t> rows) const {
    if (rows.empty()) throw ContractError("empty batch");
    std::vector<T> values(rows.size() * width);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r] >= size()) throw ContractError(fmt::format("row {} out of range ({} items)", rows[r], size()));
        const std::uint8_t* src = pixels.data() + rows[r] * width;
        for (std::size_t p = 0; p < width; ++p) values[r * width + p] = static_cast<T>(src[p]) / T(255);
    }
    return Tensor<T>({rows.size(), width}, std::move(values));
}

template <class T>
Tensor<T> Dataset::to_tensor() const {
    std::vector<std::size_t> rows(size());
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    return batch<T>(rows);
}

template Tensor<float> Dataset::batch<float>(std::span<const std::size_t>) const;
template Tensor<double> Dataset::batch<double>(std::span<const std::size_t>) const;
template Tensor<float> Dataset::to_tensor<float>() const;
template Tensor<double> Dataset::to_tensor<double>() const;

ImageMatrix Dataset::to_matrix() const {
    ImageMatrix m{size(), width, std::vector<double>(pixels.size())};
    for (std::size_t i = 0; i < pixels.size(); ++i) m.values[i] = static_cast<double>(pixels[i]) / 255.0;
    return m;
}

Dataset Dataset::head(std::size_t n) const {
    std::vector<std::size_t> rows(std::min(n, size()));
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    return select(rows);
}

Dataset Dataset::select(std::span<const std::size_t> rows) const {
    Dataset out;
    out.name = name;
    out.split = split;
    out.pixels.reserve(rows.size() * width);
    out.labels.reserve(rows.size());
    for (auto r : rows) {
        if (r >= size()) throw ContractError(fmt::format("row {} out of range ({} items)", r, size()));
        out.pixels.insert(out.pixels.end(), pixels.begin() + static_cast<std::ptrdiff_t>(r * width),
                          pixels.begin() + static_cast<std::ptrdiff_t>((r + 1) * width));
        out.labels.push_back(labels[r]);
    }
    return out;
}

Dataset random_subset(const Dataset& data, std::size_t n, std::uint64_t seed) {
    if (n >= data.size()) return data;
    std::vector<std::size_t> rows(data.size());
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(rows.begin(), rows.end(), rng);
    rows.resize(n);
    return data.select(rows);
}

Dataset to_dataset(const IdxFile& images, const IdxFile& labels, std::string name, std::string split) {
    if (images.magic != kIdxImageMagic) throw ContractError("image file must carry magic 0x00000803");
    if (labels.magic != kIdxLabelMagic) throw ContractError("label file must carry magic 0x00000801");
    if (images.dims[1] * images.dims[2] != Dataset::width) {
        throw DimensionError(fmt::format("images are {}x{}, expected 28x28", images.dims[1], images.dims[2]));
    }
    if (images.items() != labels.items()) {
        throw ContractError(fmt::format("image/label count mismatch: {} images vs {} labels", images.items(),
                                        labels.items()));
    }
    Dataset data;
    data.name = std::move(name);
    data.split = std::move(split);
    data.pixels = images.payload;
    data.labels.assign(labels.payload.begin(), labels.payload.end());
    return data;
}

Dataset load_dataset(const std::filesystem::path& images, const std::filesystem::path& labels, std::string name,
                     std::string split) {
    return to_dataset(read_idx(images), read_idx(labels), std::move(name), std::move(split));
}

std::vector<std::uint8_t> encode_image_grid(const std::vector<std::vector<double>>& images, std::size_t cols,
                                            std::size_t side) {
    if (images.empty()) throw ContractError("image grid needs at least one image");
    if (cols == 0) throw ContractError("image grid needs cols >= 1");
    const std::size_t tiles_x = std::min(cols, images.size());
    const std::size_t tiles_y = (images.size() + cols - 1) / cols;
    const std::size_t width = tiles_x * side + (tiles_x - 1);
    const std::size_t height = tiles_y * side + (tiles_y - 1);

    std::vector<std::uint8_t> raster(width * height, 255);
    for (std::size_t n = 0; n < tiles_x * tiles_y; ++n) {
        const std::size_t ox = (n % cols) * (side + 1);
        const std::size_t oy = (n / cols) * (side + 1);
        for (std::size_t y = 0; y < side; ++y) {
            for (std::size_t x = 0; x < side; ++x) {
                std::uint8_t value = 0;
                if (n < images.size()) {
                    const auto& img = images[n];
                    if (img.size() != side * side) {
                        throw DimensionError(fmt::format("image {} has {} pixels, expected {}", n, img.size(), side * side));
                    }
                    const double p = std::clamp(img[y * side + x], 0.0, 1.0);
                    value = static_cast<std::uint8_t>(std::lround(p * 255.0));
                }
                raster[(oy + y) * width + ox + x] = value;
            }
        }
    }
    const std::string header = fmt::format("P5\n{} {}\n255\n", width, height);
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), raster.begin(), raster.end());
    return out;
}

void write_image_grid(const std::vector<std::vector<double>>& images, std::size_t cols,
                      const std::filesystem::path& path, std::size_t side) {
    write_file(path, encode_image_grid(images, cols, side));
}

std::string format_csv(const std::vector<std::string>& header, const std::vector<CsvRow>& rows) {
    std::string out;
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (i) out += ',';
        out += header[i];
    }
    out += '\n';
    for (const auto& row : rows) {
        if (row.size() != header.size()) {
            throw ContractError(fmt::format("CSV row has {} fields, header has {}", row.size(), header.size()));
        }
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) out += ',';
            std::visit(
                [&](const auto& v) {
                    using V = std::decay_t<decltype(v)>;
                    if constexpr (std::is_same_v<V, double>) {
                        out += fmt::format("{:.17g}", v);
                    } else if constexpr (std::is_same_v<V, long long>) {
                        out += fmt::format("{}", v);
                    } else {
                        out += v;
                    }
                },
                row[i]);
        }
        out += '\n';
    }
    return out;
}

void write_csv(const std::vector<std::string>& header, const std::vector<CsvRow>& rows,
               const std::filesystem::path& path) {
    const std::string text = format_csv(header, rows);
    write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

} // namespace bcaps
