#pragma once

// Little-endian encoding helpers shared by the checkpoint writers.

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "pafm/errors.hpp"

namespace pafm::detail {

class ByteWriter {
public:
    void u32(std::uint32_t v) { put(v); }
    void u64(std::uint64_t v) { put(v); }
    void f64(double v) { put(std::bit_cast<std::uint64_t>(v)); }
    void raw(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }

    std::vector<unsigned char> take() { return std::move(bytes_); }

private:
    template <typename U>
    void put(U v) {
        for (std::size_t k = 0; k < sizeof(U); ++k) bytes_.push_back(static_cast<unsigned char>(v >> (8 * k)));
    }
    std::vector<unsigned char> bytes_;
};

class ByteReader {
public:
    explicit ByteReader(std::span<const unsigned char> bytes) : bytes_(bytes) {}

    std::uint32_t u32() { return get<std::uint32_t>(); }
    std::uint64_t u64() { return get<std::uint64_t>(); }
    double f64() { return std::bit_cast<double>(get<std::uint64_t>()); }
    std::string raw(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    bool at_end() const noexcept { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) throw ParseError(0, "truncated binary file");
    }
    template <typename U>
    U get() {
        need(sizeof(U));
        U v = 0;
        for (std::size_t k = 0; k < sizeof(U); ++k) v |= static_cast<U>(bytes_[pos_ + k]) << (8 * k);
        pos_ += sizeof(U);
        return v;
    }
    std::span<const unsigned char> bytes_;
    std::size_t pos_ = 0;
};

}  // namespace pafm::detail
