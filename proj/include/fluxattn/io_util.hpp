#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace fluxattn {

// Little-endian binary writer/reader for the FXT1/FXS1/FXL1/FXP1 formats.
// All multi-byte fields are stored little-endian regardless of host order.

class BinaryWriter {
public:
    explicit BinaryWriter(const std::string& path) : out_(path, std::ios::binary) {
        if (!out_) throw std::runtime_error("io-error: cannot open " + path + " for writing");
    }

    void magic(const char m[4]) { out_.write(m, 4); }
    void u32(std::uint32_t v) { write_le(v); }
    void u64(std::uint64_t v) { write_le(v); }
    void f32(float v) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        write_le(bits);
    }
    void f32_span(const float* data, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) f32(data[i]);
    }

private:
    template <typename T>
    void write_le(T v) {
        unsigned char buf[sizeof(T)];
        for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = (v >> (8 * i)) & 0xff;
        out_.write(reinterpret_cast<const char*>(buf), sizeof(T));
    }
    std::ofstream out_;
};

class BinaryReader {
public:
    explicit BinaryReader(const std::string& path) : in_(path, std::ios::binary) {
        if (!in_) throw std::runtime_error("io-error: cannot open " + path);
    }

    void expect_magic(const char m[4], const char* what) {
        char got[4];
        in_.read(got, 4);
        if (!in_ || std::memcmp(got, m, 4) != 0)
            throw std::runtime_error(std::string(what) + ": bad magic");
    }
    std::uint32_t u32() { return read_le<std::uint32_t>(); }
    std::uint64_t u64() { return read_le<std::uint64_t>(); }
    float f32() {
        const std::uint32_t bits = read_le<std::uint32_t>();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    void f32_span(float* data, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) data[i] = f32();
    }
    bool eof_clean() {
        in_.peek();
        return in_.eof();
    }

private:
    template <typename T>
    T read_le() {
        unsigned char buf[sizeof(T)];
        in_.read(reinterpret_cast<char*>(buf), sizeof(T));
        if (!in_) throw std::runtime_error("corrupt-trace: truncated file");
        T v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) v |= T(buf[i]) << (8 * i);
        return v;
    }
    std::ifstream in_;
};

/// FNV-1a 64 content hash, used for pipeline input fingerprints.
std::uint64_t fnv1a_file(const std::string& path);
std::uint64_t fnv1a_bytes(const void* data, std::size_t n);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

} // namespace fluxattn
