#include "lorafuse/io.hpp"

#include <bit>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "lorafuse/error.hpp"

namespace lorafuse {

const char* to_string(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::InvalidArgument: return "InvalidArgument";
        case ErrorKind::MissingColumn: return "MissingColumn";
        case ErrorKind::ConfigError: return "ConfigError";
        case ErrorKind::IoError: return "IoError";
        case ErrorKind::FormatError: return "FormatError";
        case ErrorKind::NormError: return "NormError";
        case ErrorKind::UnknownText: return "UnknownText";
        case ErrorKind::DimensionMismatch: return "DimensionMismatch";
        case ErrorKind::DuplicateId: return "DuplicateId";
        case ErrorKind::EmptyIndex: return "EmptyIndex";
        case ErrorKind::NegativeDistance: return "NegativeDistance";
        case ErrorKind::EmptyNeighbourList: return "EmptyNeighbourList";
        case ErrorKind::InvalidP: return "InvalidP";
        case ErrorKind::UnnormalizedInput: return "UnnormalizedInput";
        case ErrorKind::ShapeMismatch: return "ShapeMismatch";
        case ErrorKind::RankMismatch: return "RankMismatch";
        case ErrorKind::NonFinite: return "NonFinite";
        case ErrorKind::InvalidDensity: return "InvalidDensity";
        case ErrorKind::MissingAdapter: return "MissingAdapter";
        case ErrorKind::InvalidConfig: return "InvalidConfig";
    }
    return "Unknown";
}

}  // namespace lorafuse

namespace lorafuse::io {

namespace {

template <typename T>
void put_le(std::vector<char>& buf, T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
}

template <typename T>
T get_le(const char* p) {
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        v |= static_cast<T>(static_cast<unsigned char>(p[i])) << (8 * i);
    }
    return v;
}

}  // namespace

void ByteWriter::u16(std::uint16_t v) { put_le(buf_, v); }
void ByteWriter::u32(std::uint32_t v) { put_le(buf_, v); }
void ByteWriter::u64(std::uint64_t v) { put_le(buf_, v); }
void ByteWriter::f32(float v) { put_le(buf_, std::bit_cast<std::uint32_t>(v)); }

void ByteWriter::bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }

void ByteWriter::f32s(std::span<const float> values) {
    buf_.reserve(buf_.size() + values.size() * 4);
    for (float v : values) {
        f32(v);
    }
}

void ByteWriter::short_string(std::string_view s) {
    if (s.size() > UINT16_MAX) {
        throw Error(ErrorKind::FormatError, "string of " + std::to_string(s.size()) +
                                                " bytes exceeds u16 length prefix");
    }
    u16(static_cast<std::uint16_t>(s.size()));
    bytes(s);
}

void ByteReader::fail(const std::string& what) const {
    throw Error(ErrorKind::FormatError, what + " at offset " + std::to_string(pos_));
}

void ByteReader::need(std::size_t n) const {
    if (remaining() < n) {
        fail("truncated input: need " + std::to_string(n) + " bytes, have " +
             std::to_string(remaining()));
    }
}

std::uint16_t ByteReader::u16() {
    need(2);
    auto v = get_le<std::uint16_t>(data_.data() + pos_);
    pos_ += 2;
    return v;
}

std::uint32_t ByteReader::u32() {
    need(4);
    auto v = get_le<std::uint32_t>(data_.data() + pos_);
    pos_ += 4;
    return v;
}

std::uint64_t ByteReader::u64() {
    need(8);
    auto v = get_le<std::uint64_t>(data_.data() + pos_);
    pos_ += 8;
    return v;
}

float ByteReader::f32() { return std::bit_cast<float>(u32()); }

std::string ByteReader::bytes(std::size_t n) {
    need(n);
    std::string s(data_.data() + pos_, n);
    pos_ += n;
    return s;
}

std::string ByteReader::short_string() { return bytes(u16()); }

void ByteReader::f32s(std::span<float> out) {
    need(out.size() * 4);
    for (float& v : out) {
        v = f32();
    }
}

std::vector<char> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorKind::IoError, "cannot open " + path.string());
    }
    std::vector<char> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) {
        throw Error(ErrorKind::IoError, "read failed for " + path.string());
    }
    return data;
}

void write_file_atomic(const std::filesystem::path& path, std::span<const char> data) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw Error(ErrorKind::IoError, "cannot open " + tmp.string() + " for writing");
        }
        out.write(data.data(), static_cast<std::streamsize>(data.size()));
        if (!out) {
            throw Error(ErrorKind::IoError, "write failed for " + tmp.string());
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        throw Error(ErrorKind::IoError, "cannot rename into " + path.string());
    }
}

void write_text_atomic(const std::filesystem::path& path, std::string_view text) {
    write_file_atomic(path, std::span<const char>(text.data(), text.size()));
}

std::string to_hex(std::uint64_t value) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
    return buf;
}

}  // namespace lorafuse::io
