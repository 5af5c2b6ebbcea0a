#pragma once

// Little-endian section framing shared by the weight container and the feature dump:
//   magic[4] | version u32 | (caller-defined header) | sections until EOF
//   section := name_len u32 | name bytes | rank u32 | extents u64[rank] | payload
// Payload element type (f32 or u32) is fixed by the section name in each schema.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace reltrace::container {

class Writer {
public:
    Writer(const std::filesystem::path& path, std::string_view magic, std::uint32_t version);

    void u32(std::uint32_t v);
    void u64(std::uint64_t v);
    void f64(double v);
    void section_f32(std::string_view name, const std::vector<std::size_t>& extents,
                     const std::vector<double>& values);
    void section_u32(std::string_view name, const std::vector<std::size_t>& extents,
                     const std::vector<std::uint32_t>& values);
    void close();

private:
    void header(std::string_view name, const std::vector<std::size_t>& extents, std::size_t count);
    void bytes(const void* p, std::size_t n);

    std::filesystem::path path_;
    std::ofstream out_;
};

struct SectionHeader {
    std::string name;
    std::vector<std::size_t> extents;
    std::size_t count() const;
};

class Reader {
public:
    // Throws ErrorKind::Data if the file is missing, the magic differs, or the version is unknown.
    Reader(const std::filesystem::path& path, std::string_view magic, std::uint32_t max_version);

    std::uint32_t version() const noexcept { return version_; }
    std::uint32_t u32();
    std::uint64_t u64();
    double f64();
    // Empty optional at clean EOF; throws on a partially present header.
    std::optional<SectionHeader> next_section();
    std::vector<double> payload_f32(const SectionHeader& h);
    std::vector<std::uint32_t> payload_u32(const SectionHeader& h);

private:
    void bytes(void* p, std::size_t n);

    std::filesystem::path path_;
    std::ifstream in_;
    std::uint32_t version_ = 0;
};

}  // namespace reltrace::container
