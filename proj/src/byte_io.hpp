// Little-endian byte packing shared by the dataset and checkpoint formats.
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dualvit/errors.hpp"

namespace dualvit::detail {

class ByteWriter {
public:
    void u8(std::uint8_t v) { out_.push_back(v); }
    void u16(std::uint16_t v) { put(v, 2); }
    void u32(std::uint32_t v) { put(v, 4); }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void raw(std::string_view s) { out_.insert(out_.end(), s.begin(), s.end()); }
    void raw(std::span<const std::uint8_t> s) { out_.insert(out_.end(), s.begin(), s.end()); }

    std::vector<std::uint8_t>& bytes() { return out_; }

private:
    void put(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    std::vector<std::uint8_t> out_;
};

// Bounds-checked reader; every failure is a FormatError naming the offset.
class ByteReader {
public:
    ByteReader(std::span<const std::uint8_t> bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

    std::size_t offset() const { return pos_; }
    std::size_t remaining() const { return bytes_.size() - pos_; }

    std::uint8_t u8() { return static_cast<std::uint8_t>(get(1, "u8")); }
    std::uint16_t u16() { return static_cast<std::uint16_t>(get(2, "u16")); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(get(4, "u32")); }
    float f32() { return std::bit_cast<float>(u32()); }

    std::span<const std::uint8_t> take(std::size_t n, const char* field) {
        need(n, field);
        auto s = bytes_.subspan(pos_, n);
        pos_ += n;
        return s;
    }

    [[noreturn]] void fail(const std::string& msg, std::size_t at) const {
        throw FormatError(what_ + ": " + msg + " at byte offset " + std::to_string(at));
    }
    [[noreturn]] void fail(const std::string& msg) const { fail(msg, pos_); }

private:
    void need(std::size_t n, const char* field) const {
        if (remaining() < n) {
            fail(std::string("truncated reading ") + field + ": need " + std::to_string(n) + " bytes, " +
                 std::to_string(remaining()) + " left");
        }
    }
    std::uint64_t get(std::size_t n, const char* field) {
        need(n, field);
        std::uint64_t v = 0;
        for (std::size_t i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += n;
        return v;
    }

    std::span<const std::uint8_t> bytes_;
    std::string what_;
    std::size_t pos_ = 0;
};

}  // namespace dualvit::detail
