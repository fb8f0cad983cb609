// Byte buffers and the canonical field encoding shared by every message:
// a 1-byte type tag followed by fields, each prefixed with a 4-byte
// big-endian length.

#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace servnet {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

class DecodeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline Bytes to_bytes(std::string_view s) {
    return Bytes(s.begin(), s.end());
}

inline std::string to_hex(ByteView bytes) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    out.reserve(bytes.size() * 2);
    for (auto b : bytes) {
        out.push_back(digits[b >> 4]);
        out.push_back(digits[b & 0x0f]);
    }
    return out;
}

inline void append(Bytes& out, ByteView tail) {
    out.insert(out.end(), tail.begin(), tail.end());
}

class FieldWriter {
public:
    explicit FieldWriter(std::uint8_t tag) { buf_.push_back(tag); }

    FieldWriter& bytes(ByteView field) {
        const auto n = static_cast<std::uint32_t>(field.size());
        buf_.push_back(static_cast<std::uint8_t>(n >> 24));
        buf_.push_back(static_cast<std::uint8_t>(n >> 16));
        buf_.push_back(static_cast<std::uint8_t>(n >> 8));
        buf_.push_back(static_cast<std::uint8_t>(n));
        append(buf_, field);
        return *this;
    }

    FieldWriter& text(std::string_view s) {
        return bytes(ByteView(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
    }

    FieldWriter& u64(std::uint64_t v) {
        std::uint8_t raw[8];
        for (int i = 0; i < 8; ++i) raw[i] = static_cast<std::uint8_t>(v >> (56 - 8 * i));
        return bytes(ByteView(raw, 8));
    }

    FieldWriter& i64(std::int64_t v) { return u64(static_cast<std::uint64_t>(v)); }

    Bytes finish() && { return std::move(buf_); }
    const Bytes& view() const { return buf_; }

private:
    Bytes buf_;
};

class FieldReader {
public:
    explicit FieldReader(ByteView data) : data_(data) {
        if (data_.empty()) throw DecodeError("empty message");
        tag_ = data_[0];
        pos_ = 1;
    }

    std::uint8_t tag() const { return tag_; }
    bool done() const { return pos_ == data_.size(); }

    ByteView bytes() {
        if (data_.size() - pos_ < 4) throw DecodeError("truncated length prefix");
        std::uint32_t n = 0;
        for (int i = 0; i < 4; ++i) n = (n << 8) | data_[pos_ + static_cast<std::size_t>(i)];
        pos_ += 4;
        if (data_.size() - pos_ < n) throw DecodeError("truncated field");
        auto field = data_.subspan(pos_, n);
        pos_ += n;
        return field;
    }

    Bytes owned() {
        auto v = bytes();
        return Bytes(v.begin(), v.end());
    }

    std::string text() {
        auto v = bytes();
        return std::string(v.begin(), v.end());
    }

    std::uint64_t u64() {
        auto v = bytes();
        if (v.size() != 8) throw DecodeError("bad integer width");
        std::uint64_t out = 0;
        for (auto b : v) out = (out << 8) | b;
        return out;
    }

    std::int64_t i64() { return static_cast<std::int64_t>(u64()); }

    void expect_done() const {
        if (!done()) throw DecodeError("trailing bytes");
    }

private:
    ByteView data_;
    std::size_t pos_ = 0;
    std::uint8_t tag_ = 0;
};

}  // namespace servnet
