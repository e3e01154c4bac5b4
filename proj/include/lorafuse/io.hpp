#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace lorafuse::io {

/// Little-endian serializer, independent of host byte order.
class ByteWriter {
public:
    void u16(std::uint16_t v);
    void u32(std::uint32_t v);
    void u64(std::uint64_t v);
    void f32(float v);
    void bytes(std::string_view s);
    void f32s(std::span<const float> values);

    /// u16 length prefix then bytes; throws FormatError if the string is longer than 65535.
    void short_string(std::string_view s);

    const std::vector<char>& buffer() const noexcept { return buf_; }
    std::vector<char> take() noexcept { return std::move(buf_); }

private:
    std::vector<char> buf_;
};

/// Bounds-checked little-endian reader. Every failure is a FormatError that
/// names the byte offset.
class ByteReader {
public:
    explicit ByteReader(std::span<const char> data) noexcept : data_(data) {}

    std::uint16_t u16();
    std::uint32_t u32();
    std::uint64_t u64();
    float f32();
    std::string bytes(std::size_t n);
    std::string short_string();
    void f32s(std::span<float> out);

    std::size_t offset() const noexcept { return pos_; }
    std::size_t remaining() const noexcept { return data_.size() - pos_; }
    bool at_end() const noexcept { return pos_ == data_.size(); }

    [[noreturn]] void fail(const std::string& what) const;

private:
    void need(std::size_t n) const;

    std::span<const char> data_;
    std::size_t pos_ = 0;
};

std::vector<char> read_file(const std::filesystem::path& path);

/// Writes to a sibling temp file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::span<const char> data);
void write_text_atomic(const std::filesystem::path& path, std::string_view text);

std::string to_hex(std::uint64_t value);

}  // namespace lorafuse::io
