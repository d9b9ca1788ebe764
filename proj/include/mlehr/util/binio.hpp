#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>

#include "mlehr/error.hpp"

namespace mlehr::util {

// Little-endian length-prefixed encoding used by the event store and
// checkpoints. Doubles are written as their raw IEEE-754 bits.
class BinWriter {
   public:
    void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
    void u32(std::uint32_t v) { put(&v, 4); }
    void u64(std::uint64_t v) { put(&v, 8); }
    void f64(double v) { put(&v, 8); }
    void f32(float v) { put(&v, 4); }
    void str(std::string_view s) {
        u64(s.size());
        buf_.append(s.data(), s.size());
    }
    void raw(const void* p, size_t n) { buf_.append(static_cast<const char*>(p), n); }
    const std::string& data() const { return buf_; }

   private:
    void put(const void* p, size_t n) { buf_.append(static_cast<const char*>(p), n); }
    std::string buf_;
};

class BinReader {
   public:
    BinReader(std::string_view data, std::string source) : data_(data), source_(std::move(source)) {}
    std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
    std::uint32_t u32() { return get<std::uint32_t>(); }
    std::uint64_t u64() { return get<std::uint64_t>(); }
    double f64() { return get<double>(); }
    float f32() { return get<float>(); }
    std::string str() {
        auto n = u64();
        return std::string(take(n));
    }
    void raw(void* p, size_t n) { std::memcpy(p, take(n).data(), n); }
    bool done() const { return pos_ == data_.size(); }

   private:
    template <typename T>
    T get() {
        T v;
        std::memcpy(&v, take(sizeof(T)).data(), sizeof(T));
        return v;
    }
    std::string_view take(size_t n) {
        if (n > data_.size() - pos_) fail("CorruptFile", source_ + " truncated");
        auto s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::string_view data_;
    std::string source_;
    size_t pos_ = 0;
};

}  // namespace mlehr::util
