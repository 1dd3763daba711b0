#include "support.hpp"

#include "bcaps/dataio.hpp"
#include "bcaps/error.hpp"

#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <random>
#include <string>

using namespace bcaps;

namespace {

std::vector<std::uint8_t> image_fixture() {
    return {0x00, 0x00, 0x08, 0x03, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2, 0x00, 0xFF, 0x80, 0x40};
}

std::vector<std::uint8_t> label_fixture() {
    return {0x00, 0x00, 0x08, 0x01, 0x00, 0x00, 0x00, 0x02, 0x07, 0x02};
}

/// Header fields of a P5 file: width, height, maxval, offset of the raster.
struct Pgm {
    int width = 0, height = 0, maxval = 0;
    std::size_t raster = 0;
};

Pgm parse_pgm(const std::vector<std::uint8_t>& bytes) {
    const std::string text(bytes.begin(), bytes.begin() + std::min<std::size_t>(bytes.size(), 32));
    Pgm p;
    int consumed = 0;
    REQUIRE(std::sscanf(text.c_str(), "P5 %d %d %d%n", &p.width, &p.height, &p.maxval, &consumed) == 3);
    p.raster = static_cast<std::size_t>(consumed) + 1;
    return p;
}

} // namespace

TEST_SUITE("dataio") {

TEST_CASE("idx: hand-built label file") {
    IdxFile idx = parse_idx(label_fixture());
    CHECK(idx.magic == kIdxLabelMagic);
    CHECK(idx.dims == std::vector<std::uint32_t>{2});
    CHECK(idx.payload == std::vector<std::uint8_t>{7, 2});
}

TEST_CASE("idx: hand-built image file") {
    IdxFile idx = parse_idx(image_fixture());
    CHECK(idx.magic == kIdxImageMagic);
    CHECK(idx.dims == std::vector<std::uint32_t>{1, 2, 2});
    CHECK(idx.items() == 1);
    CHECK(idx.payload == std::vector<std::uint8_t>{0, 255, 128, 64});
}

TEST_CASE("idx: malformed input reports offsets") {
    auto bad_magic = label_fixture();
    bad_magic[2] = 0x09;
    try {
        parse_idx(bad_magic);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.offset() == 0);
    }

    auto truncated = image_fixture();
    truncated.pop_back();
    try {
        parse_idx(truncated);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.offset() == 19);
        CHECK(std::string(e.what()).find("require 4 bytes, found 3") != std::string::npos);
    }

    const std::vector<std::uint8_t> short_header{0x00, 0x00, 0x08, 0x03, 0, 0, 0, 1, 0, 0};
    CHECK_THROWS_AS(parse_idx(short_header), ParseError);
    CHECK_THROWS_AS(parse_idx(std::vector<std::uint8_t>{0x00, 0x00}), ParseError);

    auto extra = label_fixture();
    extra.push_back(3);
    CHECK_THROWS_AS(parse_idx(extra), ParseError);
}

TEST_CASE("idx: serialize/parse round trip") {
    std::mt19937_64 rng(51);
    std::uniform_int_distribution<int> extent(0, 6), byte(0, 255);
    for (int trial = 0; trial < 50; ++trial) {
        IdxFile idx;
        const bool images = trial % 2 == 0;
        idx.magic = images ? kIdxImageMagic : kIdxLabelMagic;
        idx.dims = images ? std::vector<std::uint32_t>{static_cast<std::uint32_t>(extent(rng)),
                                                      static_cast<std::uint32_t>(extent(rng)),
                                                      static_cast<std::uint32_t>(extent(rng))}
                          : std::vector<std::uint32_t>{static_cast<std::uint32_t>(extent(rng))};
        std::size_t n = 1;
        for (auto d : idx.dims) n *= d;
        for (std::size_t i = 0; i < n; ++i) idx.payload.push_back(static_cast<std::uint8_t>(byte(rng)));
        CHECK(parse_idx(serialize_idx(idx)) == idx);
    }
}

TEST_CASE("to_dataset: normalization and count checks") {
    IdxFile images{kIdxImageMagic, {3, 28, 28}, std::vector<std::uint8_t>(3 * 784, 0)};
    images.payload[0] = 255;
    images.payload[1] = 128;
    images.payload[784] = 17;
    IdxFile labels{kIdxLabelMagic, {3}, {4, 0, 9}};
    Dataset d = to_dataset(images, labels, "mnist", "test");
    CHECK(d.size() == 3);
    CHECK(d.split == "test");
    ImageMatrix m = d.to_matrix();
    CHECK(m.values[0] == 1.0);
    CHECK(m.values[1] == 128.0 / 255.0);
    CHECK(m.values[1] == doctest::Approx(0.50196).epsilon(1e-5));
    CHECK(m.values[2] == 0.0);
    CHECK(d.labels == std::vector<int>{4, 0, 9});

    std::vector<std::uint8_t> all(256);
    for (int i = 0; i < 256; ++i) all[i] = static_cast<std::uint8_t>(i);
    all.resize(784, 0);
    Dataset ramp{"mnist", "train", all, {1}};
    Tensor<double> t = ramp.to_tensor<double>();
    for (std::size_t i = 1; i < 256; ++i) {
        CHECK(t.data()[i] > t.data()[i - 1]);
        CHECK(t.data()[i] <= 1.0);
    }
    CHECK(t.data()[0] >= 0.0);

    IdxFile short_labels{kIdxLabelMagic, {2}, {1, 2}};
    CHECK_THROWS(to_dataset(images, short_labels));
    IdxFile wrong_size{kIdxImageMagic, {1, 27, 28}, std::vector<std::uint8_t>(27 * 28)};
    CHECK_THROWS(to_dataset(wrong_size, IdxFile{kIdxLabelMagic, {1}, {0}}));
    CHECK_THROWS(to_dataset(labels, images));
}

TEST_CASE("subsets are seeded and sized") {
    Dataset d = bcaps::testing::synthetic_dataset(50, 1);
    Dataset a = random_subset(d, 20, 3), b = random_subset(d, 20, 3), c = random_subset(d, 20, 4);
    CHECK(a.size() == 20);
    CHECK(a.pixels == b.pixels);
    CHECK(a.labels == b.labels);
    CHECK(a.pixels != c.pixels);
    CHECK(d.head(5).size() == 5);
    CHECK(d.head(500).size() == 50);
}

TEST_CASE("image grid: single black image") {
    const auto bytes = encode_image_grid({std::vector<double>(784, 0.0)}, 1);
    const Pgm p = parse_pgm(bytes);
    CHECK(p.width == 28);
    CHECK(p.height == 28);
    CHECK(p.maxval == 255);
    REQUIRE(bytes.size() == p.raster + 784);
    for (std::size_t i = p.raster; i < bytes.size(); ++i) CHECK(bytes[i] == 0);
}

TEST_CASE("image grid: quantization and tiling") {
    std::vector<double> white(784, 1.0), gray(784, 0.5);
    gray[0] = 1.7;
    gray[1] = -0.2;
    const auto bytes = encode_image_grid({white, gray}, 2);
    const Pgm p = parse_pgm(bytes);
    CHECK(p.width == 57);
    CHECK(p.height == 28);
    REQUIRE(bytes.size() == p.raster + 57 * 28);
    const auto px = [&](int x, int y) { return bytes[p.raster + static_cast<std::size_t>(y * 57 + x)]; };
    CHECK(px(0, 0) == 255);
    CHECK(px(28, 0) == 255);
    CHECK(px(29, 0) == 255);
    CHECK(px(30, 0) == 0);
    CHECK(px(31, 0) == 128);

    const auto grid = encode_image_grid(std::vector<std::vector<double>>(5, white), 2);
    const Pgm q = parse_pgm(grid);
    CHECK(q.width == 57);
    CHECK(q.height == 3 * 28 + 2);

    const auto dir = bcaps::testing::scratch_dir("grid");
    write_image_grid({white}, 1, dir / "nested" / "one.pgm");
    CHECK(read_file(dir / "nested" / "one.pgm") == encode_image_grid({white}, 1));
}

TEST_CASE("csv: examples") {
    CHECK(format_csv({"a", "b"}, {{1ll, 2ll}}) == "a,b\n1,2\n");
    CHECK(format_csv({"a", "b"}, {{1.0, 2.0}}) == "a,b\n1,2\n");
    CHECK(format_csv({"a", "b"}, {}) == "a,b\n");
    CHECK(format_csv({"name"}, {{std::string("x")}}) == "name\nx\n");

    const std::string text = format_csv({"v"}, {{0.1}});
    const std::string cell = text.substr(2, text.size() - 3);
    CHECK(std::strtod(cell.c_str(), nullptr) == 0.1);

    std::mt19937_64 rng(52);
    std::uniform_real_distribution<double> dist(-1e6, 1e6);
    for (int i = 0; i < 200; ++i) {
        const double v = dist(rng);
        const std::string line = format_csv({"v"}, {{v}});
        CHECK(std::strtod(line.substr(2).c_str(), nullptr) == v);
    }
}

TEST_CASE("real MNIST files") {
    if (!bcaps::testing::have_mnist()) {
        MESSAGE("MNIST not found; skipped");
        return;
    }
    const auto dir = bcaps::testing::mnist_dir();
    IdxFile train = read_idx(dir / "train-images-idx3-ubyte");
    CHECK(train.dims == std::vector<std::uint32_t>{60000, 28, 28});
    IdxFile test = read_idx(dir / "t10k-images-idx3-ubyte");
    CHECK(test.dims == std::vector<std::uint32_t>{10000, 28, 28});
    Dataset t = bcaps::testing::mnist_test();
    CHECK(t.size() == 10000);
    CHECK(t.labels[0] == 7);
    CHECK(t.labels[1] == 2);
}

}
