#include "reltrace/container.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <limits>

#include "reltrace/error.hpp"

namespace reltrace::container {

namespace {

constexpr std::uint32_t kMaxNameLen = 4096;
constexpr std::uint32_t kMaxRank = 8;

template <typename U>
void put_le(std::array<unsigned char, sizeof(U)>& buf, U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) {
        buf[i] = static_cast<unsigned char>(v >> (8 * i));
    }
}

template <typename U>
U get_le(const std::array<unsigned char, sizeof(U)>& buf) {
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
        v |= static_cast<U>(buf[i]) << (8 * i);
    }
    return v;
}

}  // namespace

std::size_t SectionHeader::count() const {
    std::size_t n = 1;
    for (std::size_t e : extents) {
        n *= e;
    }
    return n;
}

Writer::Writer(const std::filesystem::path& path, std::string_view magic, std::uint32_t version)
    : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
    require(out_.good(), ErrorKind::Data, "cannot open for writing: " + path.string());
    require(magic.size() == 4, ErrorKind::Argument, "magic must be four bytes");
    bytes(magic.data(), 4);
    u32(version);
}

void Writer::bytes(const void* p, std::size_t n) {
    out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    require(out_.good(), ErrorKind::Data, "write failed: " + path_.string());
}

void Writer::u32(std::uint32_t v) {
    std::array<unsigned char, 4> b{};
    put_le(b, v);
    bytes(b.data(), b.size());
}

void Writer::u64(std::uint64_t v) {
    std::array<unsigned char, 8> b{};
    put_le(b, v);
    bytes(b.data(), b.size());
}

void Writer::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void Writer::header(std::string_view name, const std::vector<std::size_t>& extents, std::size_t count) {
    std::size_t n = 1;
    for (std::size_t e : extents) {
        n *= e;
    }
    require(n == count, ErrorKind::Shape, "section '" + std::string(name) + "' extents do not match payload");
    u32(static_cast<std::uint32_t>(name.size()));
    bytes(name.data(), name.size());
    u32(static_cast<std::uint32_t>(extents.size()));
    for (std::size_t e : extents) {
        u64(e);
    }
}

void Writer::section_f32(std::string_view name, const std::vector<std::size_t>& extents,
                         const std::vector<double>& values) {
    header(name, extents, values.size());
    std::vector<unsigned char> buf(values.size() * 4);
    for (std::size_t i = 0; i < values.size(); ++i) {
        const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(values[i]));
        for (std::size_t k = 0; k < 4; ++k) {
            buf[4 * i + k] = static_cast<unsigned char>(bits >> (8 * k));
        }
    }
    bytes(buf.data(), buf.size());
}

void Writer::section_u32(std::string_view name, const std::vector<std::size_t>& extents,
                         const std::vector<std::uint32_t>& values) {
    header(name, extents, values.size());
    for (std::uint32_t v : values) {
        u32(v);
    }
}

void Writer::close() {
    out_.flush();
    require(out_.good(), ErrorKind::Data, "flush failed: " + path_.string());
    out_.close();
}

Reader::Reader(const std::filesystem::path& path, std::string_view magic, std::uint32_t max_version)
    : path_(path), in_(path, std::ios::binary) {
    require(in_.good(), ErrorKind::Data, "cannot open: " + path.string());
    std::array<char, 4> m{};
    bytes(m.data(), 4);
    require(std::string_view(m.data(), 4) == magic, ErrorKind::Data,
            "bad magic in " + path.string() + " (expected " + std::string(magic) + ")");
    version_ = u32();
    require(version_ >= 1 && version_ <= max_version, ErrorKind::Data,
            "unsupported format version " + std::to_string(version_));
}

void Reader::bytes(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    require(static_cast<std::size_t>(in_.gcount()) == n, ErrorKind::Data, "truncated file: " + path_.string());
}

std::uint32_t Reader::u32() {
    std::array<unsigned char, 4> b{};
    bytes(b.data(), b.size());
    return get_le<std::uint32_t>(b);
}

std::uint64_t Reader::u64() {
    std::array<unsigned char, 8> b{};
    bytes(b.data(), b.size());
    return get_le<std::uint64_t>(b);
}

double Reader::f64() { return std::bit_cast<double>(u64()); }

std::optional<SectionHeader> Reader::next_section() {
    if (in_.peek() == std::ifstream::traits_type::eof()) {
        return std::nullopt;
    }
    SectionHeader h;
    const std::uint32_t len = u32();
    require(len > 0 && len <= kMaxNameLen, ErrorKind::Data, "implausible section name length");
    h.name.resize(len);
    bytes(h.name.data(), len);
    const std::uint32_t rank = u32();
    require(rank <= kMaxRank, ErrorKind::Data, "implausible section rank in '" + h.name + "'");
    h.extents.resize(rank);
    for (auto& e : h.extents) {
        const std::uint64_t v = u64();
        require(v > 0 && v < (std::uint64_t{1} << 32), ErrorKind::Data, "bad extent in section '" + h.name + "'");
        e = static_cast<std::size_t>(v);
    }
    return h;
}

std::vector<double> Reader::payload_f32(const SectionHeader& h) {
    const std::size_t n = h.count();
    std::vector<unsigned char> buf(n * 4);
    bytes(buf.data(), buf.size());
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::uint32_t bits = 0;
        for (std::size_t k = 0; k < 4; ++k) {
            bits |= static_cast<std::uint32_t>(buf[4 * i + k]) << (8 * k);
        }
        out[i] = static_cast<double>(std::bit_cast<float>(bits));
        require(std::isfinite(out[i]), ErrorKind::Data, "non-finite value in section '" + h.name + "'");
    }
    return out;
}

std::vector<std::uint32_t> Reader::payload_u32(const SectionHeader& h) {
    std::vector<std::uint32_t> out(h.count());
    for (auto& v : out) {
        v = u32();
    }
    return out;
}

}  // namespace reltrace::container
