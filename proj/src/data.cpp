#include "dualvit/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>

#include "byte_io.hpp"
#include "dualvit/random.hpp"

namespace dualvit {

namespace {

constexpr char kDatasetMagic[] = "DVDS";
constexpr std::uint32_t kDatasetVersion = 1;
constexpr std::size_t kHeaderBytes = 20;

float quantize(double v) {
    const double c = std::clamp(v, 0.0, 1.0);
    return static_cast<float>(std::lround(c * 255.0)) / 255.0f;
}

}  // namespace

void Dataset::validate() const {
    if (!images.defined() || images.ndim() != 4 || images.dim(3) != 3) {
        throw InputError("dataset images must be [N, H, W, 3]");
    }
    if (labels.empty() || images.dim(0) != labels.size()) {
        throw InputError("dataset has " + std::to_string(images.dim(0)) + " images but " +
                         std::to_string(labels.size()) + " labels");
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) {
            throw InputError("label " + std::to_string(labels[i]) + " of sample " + std::to_string(i) +
                             " is outside [0, " + std::to_string(num_classes) + ")");
        }
    }
}

Tensor<float> Dataset::gather(std::span<const std::size_t> indices, std::vector<int>* labels_out) const {
    const std::size_t per = height() * width() * 3;
    std::vector<float> out(indices.size() * per);
    if (labels_out) labels_out->clear();
    for (std::size_t b = 0; b < indices.size(); ++b) {
        const std::size_t i = indices[b];
        if (i >= size()) throw InputError("sample index " + std::to_string(i) + " out of range");
        std::copy_n(images.data().begin() + i * per, per, out.begin() + b * per);
        if (labels_out) labels_out->push_back(labels[i]);
    }
    return Tensor<float>({indices.size(), height(), width(), 3}, std::move(out));
}

Dataset make_synthetic(std::size_t num_classes, std::size_t per_class, std::size_t resolution, std::uint64_t seed,
                       std::vector<std::vector<float>>* means) {
    if (num_classes < 2 || per_class == 0 || resolution == 0) {
        throw InputError("synthetic data needs >= 2 classes, >= 1 sample per class and a positive resolution");
    }
    Rng rng(seed);
    const std::size_t r = resolution;
    const std::size_t per = r * r * 3;

    std::vector<std::vector<float>> centers(num_classes, std::vector<float>(per));
    for (std::size_t c = 0; c < num_classes; ++c) {
        // hue spread around the colour wheel, blob placed at random
        const double theta = 2.0 * std::numbers::pi * (static_cast<double>(c) + 0.3 * rng.uniform()) / num_classes;
        const double colour[3] = {std::cos(theta), std::cos(theta + 2.0 * std::numbers::pi / 3.0),
                                  std::cos(theta + 4.0 * std::numbers::pi / 3.0)};
        const double cy = (0.2 + 0.6 * rng.uniform()) * r;
        const double cx = (0.2 + 0.6 * rng.uniform()) * r;
        const double sigma = (0.15 + 0.1 * rng.uniform()) * r;
        for (std::size_t y = 0; y < r; ++y)
            for (std::size_t x = 0; x < r; ++x) {
                const double d2 = (y + 0.5 - cy) * (y + 0.5 - cy) + (x + 0.5 - cx) * (x + 0.5 - cx);
                const double g = std::exp(-d2 / (2 * sigma * sigma));
                for (std::size_t ch = 0; ch < 3; ++ch)
                    centers[c][(y * r + x) * 3 + ch] = static_cast<float>(0.5 + 0.4 * colour[ch] * g);
            }
    }

    const std::size_t n = num_classes * per_class;
    Dataset data;
    data.num_classes = num_classes;
    data.labels.resize(n);
    std::vector<float> pixels(n * per);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t c = i % num_classes;
        data.labels[i] = static_cast<int>(c);
        for (std::size_t k = 0; k < per; ++k) pixels[i * per + k] = quantize(centers[c][k] + 0.1 * rng.normal());
    }
    data.images = Tensor<float>({n, r, r, 3}, std::move(pixels));
    if (means) *means = std::move(centers);
    return data;
}

std::vector<std::uint8_t> encode_packed_dataset(const Dataset& data) {
    data.validate();
    if (data.height() > 0xFFFF || data.width() > 0xFFFF || data.num_classes > 0xFFFF || data.size() > 0xFFFFFFFFu) {
        throw InputError("dataset dimensions exceed the DVDS field widths");
    }
    detail::ByteWriter w;
    w.raw(std::string_view(kDatasetMagic, 4));
    w.u32(kDatasetVersion);
    w.u32(static_cast<std::uint32_t>(data.size()));
    w.u16(static_cast<std::uint16_t>(data.height()));
    w.u16(static_cast<std::uint16_t>(data.width()));
    w.u16(3);
    w.u16(static_cast<std::uint16_t>(data.num_classes));
    const std::size_t per = data.height() * data.width() * 3;
    for (std::size_t i = 0; i < data.size(); ++i) {
        w.u16(static_cast<std::uint16_t>(data.labels[i]));
        for (std::size_t k = 0; k < per; ++k) {
            const double v = std::clamp(static_cast<double>(data.images.data()[i * per + k]), 0.0, 1.0);
            w.u8(static_cast<std::uint8_t>(std::lround(v * 255.0)));
        }
    }
    return std::move(w.bytes());
}

Dataset decode_packed_dataset(std::span<const std::uint8_t> bytes) {
    detail::ByteReader rd(bytes, "DVDS");
    auto magic = rd.take(4, "magic");
    if (!std::equal(magic.begin(), magic.end(), kDatasetMagic)) rd.fail("bad magic (expected \"DVDS\")", 0);
    const auto version = rd.u32();
    if (version != kDatasetVersion) rd.fail("unsupported version " + std::to_string(version), 4);
    const std::size_t n = rd.u32();
    const std::size_t h = rd.u16();
    const std::size_t w = rd.u16();
    const std::size_t channels = rd.u16();
    const std::size_t classes = rd.u16();
    if (channels != 3) rd.fail("channels must be 3, got " + std::to_string(channels), 16);
    if (n == 0 || h == 0 || w == 0 || classes == 0) rd.fail("N, H, W and classes must be positive", 8);

    const std::size_t per = h * w * 3;
    const std::size_t expected = kHeaderBytes + n * (2 + per);
    if (bytes.size() != expected) {
        rd.fail("file length " + std::to_string(bytes.size()) + " does not match the expected " +
                    std::to_string(expected) + " bytes for " + std::to_string(n) + " records of " +
                    std::to_string(h) + "x" + std::to_string(w),
                std::min(bytes.size(), expected));
    }

    Dataset data;
    data.num_classes = classes;
    data.labels.resize(n);
    std::vector<float> pixels(n * per);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t at = rd.offset();
        const std::size_t label = rd.u16();
        if (label >= classes) {
            rd.fail("record " + std::to_string(i) + " label " + std::to_string(label) + " >= classes " +
                        std::to_string(classes),
                    at);
        }
        data.labels[i] = static_cast<int>(label);
        auto px = rd.take(per, "pixels");
        for (std::size_t k = 0; k < per; ++k) pixels[i * per + k] = static_cast<float>(px[k]) / 255.0f;
    }
    data.images = Tensor<float>({n, h, w, 3}, std::move(pixels));
    return data;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open " + path.string());
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw InputError("short write to " + path.string());
}

void save_packed_dataset(const Dataset& data, const std::filesystem::path& path) {
    write_file(path, encode_packed_dataset(data));
}

Dataset load_packed_dataset(const std::filesystem::path& path) { return decode_packed_dataset(read_file(path)); }

}  // namespace dualvit
