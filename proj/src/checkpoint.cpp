#include "dualvit/checkpoint.hpp"

#include <zlib.h>

#include <algorithm>

#include "byte_io.hpp"
#include "dualvit/config.hpp"
#include "dualvit/data.hpp"

namespace dualvit {

namespace {

constexpr char kMagic[] = "DVCP";
constexpr std::uint32_t kVersion = 1;

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
    uLong crc = crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths; feed in chunks
    std::size_t pos = 0;
    while (pos < bytes.size()) {
        const auto n = static_cast<uInt>(std::min<std::size_t>(bytes.size() - pos, 1u << 30));
        crc = crc32(crc, bytes.data() + pos, n);
        pos += n;
    }
    return static_cast<std::uint32_t>(crc);
}

struct Entry {
    std::string name;
    Shape shape;
    std::size_t payload_offset = 0;  // into the byte buffer
};

struct Parsed {
    CheckpointManifest manifest;
    std::vector<Entry> entries;
};

Parsed parse(std::span<const std::uint8_t> bytes) {
    detail::ByteReader rd(bytes, "DVCP");
    auto magic = rd.take(4, "magic");
    if (!std::equal(magic.begin(), magic.end(), kMagic)) rd.fail("bad magic (expected \"DVCP\")", 0);
    const auto version = rd.u32();
    if (version != kVersion) rd.fail("unsupported version " + std::to_string(version), 4);
    if (bytes.size() < 12) rd.fail("truncated header");

    const std::size_t body = bytes.size() - 4;
    const std::uint32_t stored = static_cast<std::uint32_t>(bytes[body]) | static_cast<std::uint32_t>(bytes[body + 1]) << 8 |
                                 static_cast<std::uint32_t>(bytes[body + 2]) << 16 |
                                 static_cast<std::uint32_t>(bytes[body + 3]) << 24;
    if (crc32_of(bytes.first(body)) != stored) rd.fail("checksum mismatch", body);
    detail::ByteReader in(bytes.first(body), "DVCP");
    in.take(8, "header");

    Parsed p;
    const std::size_t manifest_at = in.offset();
    const std::size_t manifest_len = in.u32();
    auto text = in.take(manifest_len, "manifest");
    try {
        auto j = nlohmann::json::parse(text.begin(), text.end());
        if (!j.is_object() || !j.contains("variant") || !j["variant"].is_string()) {
            in.fail("manifest lacks a variant", manifest_at);
        }
        p.manifest.variant = parse_variant(j["variant"].get<std::string>());
        j.erase("variant");
        p.manifest.config = config_from_json(j);
    } catch (const nlohmann::json::exception& e) {
        in.fail(std::string("manifest is not valid JSON: ") + e.what(), manifest_at);
    } catch (const ConfigError& e) {
        in.fail(std::string("manifest config rejected: ") + e.what(), manifest_at);
    }

    const std::size_t count = in.u32();
    for (std::size_t i = 0; i < count; ++i) {
        Entry e;
        const std::size_t name_len = in.u16();
        auto name = in.take(name_len, "entry name");
        e.name.assign(name.begin(), name.end());
        const std::size_t ndim = in.u8();
        std::size_t numel = 1;
        for (std::size_t k = 0; k < ndim; ++k) {
            const std::size_t at = in.offset();
            const std::size_t dim = in.u32();
            if (dim == 0) in.fail("entry '" + e.name + "' has a zero dimension", at);
            e.shape.push_back(dim);
            numel *= dim;
        }
        e.payload_offset = in.offset();
        in.take(numel * 4, "entry payload");
        p.entries.push_back(std::move(e));
    }
    if (in.remaining() != 0) in.fail(std::to_string(in.remaining()) + " unexpected trailing bytes");
    return p;
}

void fill(Model<float>& model, const Parsed& p, std::span<const std::uint8_t> bytes) {
    auto& reg = model.parameters();
    const std::size_t n = std::max(reg.size(), p.entries.size());
    for (std::size_t i = 0; i < n; ++i) {
        if (i >= p.entries.size()) {
            throw ConfigError("checkpoint mismatch: model parameter '" + reg[i].name + "' is missing from the checkpoint");
        }
        const auto& e = p.entries[i];
        if (i >= reg.size()) throw ConfigError("checkpoint mismatch: entry '" + e.name + "' has no model parameter");
        if (e.name != reg[i].name || e.shape != reg[i].tensor.shape()) {
            throw ConfigError("checkpoint mismatch at entry " + std::to_string(i) + ": checkpoint has '" + e.name + "' " +
                              shape_str(e.shape) + ", model expects '" + reg[i].name + "' " +
                              shape_str(reg[i].tensor.shape()));
        }
    }
    for (std::size_t i = 0; i < reg.size(); ++i) {
        detail::ByteReader rd(bytes.subspan(p.entries[i].payload_offset), "DVCP");
        auto dst = (reg.begin() + static_cast<std::ptrdiff_t>(i))->tensor.mutable_data();
        for (float& v : dst) v = rd.f32();
    }
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Model<float>& model) {
    detail::ByteWriter w;
    w.raw(std::string_view(kMagic, 4));
    w.u32(kVersion);
    auto manifest = config_to_json(model.config());
    manifest["variant"] = std::string(1, variant_letter(model.variant()));
    const std::string text = manifest.dump();
    w.u32(static_cast<std::uint32_t>(text.size()));
    w.raw(text);
    const auto& reg = model.parameters();
    w.u32(static_cast<std::uint32_t>(reg.size()));
    for (const auto& e : reg) {
        if (e.name.size() > 0xFFFF) throw ContractError("parameter name too long: " + e.name);
        w.u16(static_cast<std::uint16_t>(e.name.size()));
        w.raw(e.name);
        w.u8(static_cast<std::uint8_t>(e.tensor.ndim()));
        for (std::size_t d : e.tensor.shape()) w.u32(static_cast<std::uint32_t>(d));
        for (float v : e.tensor.data()) w.f32(v);
    }
    const std::uint32_t crc = crc32_of(w.bytes());
    w.u32(crc);
    return std::move(w.bytes());
}

void save_checkpoint(const Model<float>& model, const std::filesystem::path& path) {
    write_file(path, encode_checkpoint(model));
}

CheckpointManifest read_checkpoint_manifest(std::span<const std::uint8_t> bytes) { return parse(bytes).manifest; }

Model<float> decode_checkpoint(std::span<const std::uint8_t> bytes) {
    const auto p = parse(bytes);
    Model<float> model(p.manifest.config, p.manifest.variant);
    fill(model, p, bytes);
    return model;
}

Model<float> load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

void load_checkpoint_into(Model<float>& model, std::span<const std::uint8_t> bytes) {
    fill(model, parse(bytes), bytes);
}

}  // namespace dualvit
