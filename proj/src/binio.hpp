#pragma once

// Minimal little-endian binary stream helpers with byte-offset tracking, so
// container load errors can point at the exact spot that failed.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <string_view>

namespace leak::binio {

class Writer {
public:
    explicit Writer(const std::filesystem::path& path)
        : out_(path, std::ios::binary | std::ios::trunc), path_(path.string()) {
        if (!out_) throw std::runtime_error("cannot open for writing: " + path_);
    }

    void bytes(const void* p, std::size_t n) {
        out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
        offset_ += n;
    }

    void magic(std::string_view tag) { bytes(tag.data(), tag.size()); }
    void u16(std::uint16_t v) { bytes(&v, sizeof v); }
    void u32(std::uint32_t v) { bytes(&v, sizeof v); }
    void u64(std::uint64_t v) { bytes(&v, sizeof v); }
    void f64(double v) { bytes(&v, sizeof v); }

    void close() {
        out_.close();
        if (!out_) throw std::runtime_error("write failed: " + path_);
    }

private:
    std::ofstream out_;
    std::uint64_t offset_ = 0;
    std::string path_;
};

class Reader {
public:
    explicit Reader(const std::filesystem::path& path)
        : in_(path, std::ios::binary), path_(path.string()) {
        if (!in_) throw std::runtime_error("cannot open for reading: " + path_);
    }

    void bytes(void* p, std::size_t n) {
        in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n) {
            throw std::runtime_error(path_ + ": truncated at byte offset " + std::to_string(offset_));
        }
        offset_ += n;
    }

    void expect_magic(std::string_view tag) {
        std::string got(tag.size(), '\0');
        bytes(got.data(), got.size());
        if (got != tag) {
            throw std::runtime_error(path_ + ": bad magic at byte offset 0: expected \"" +
                                     std::string(tag) + "\", got \"" + got + "\"");
        }
    }

    std::uint16_t u16() { std::uint16_t v; bytes(&v, sizeof v); return v; }
    std::uint32_t u32() { std::uint32_t v; bytes(&v, sizeof v); return v; }
    std::uint64_t u64() { std::uint64_t v; bytes(&v, sizeof v); return v; }
    double f64() { double v; bytes(&v, sizeof v); return v; }

    std::uint64_t offset() const { return offset_; }

    void require_eof() {
        if (in_.peek() != std::char_traits<char>::eof()) {
            throw std::runtime_error(path_ + ": trailing bytes after offset " + std::to_string(offset_));
        }
    }

private:
    std::ifstream in_;
    std::uint64_t offset_ = 0;
    std::string path_;
};

} // namespace leak::binio
