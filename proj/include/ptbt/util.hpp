#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>

namespace ptbt {

// Incremental SHA-256. hex() may be called once, after all updates.
class Digest {
public:
    Digest();
    ~Digest();
    Digest(const Digest&) = delete;
    Digest& operator=(const Digest&) = delete;

    Digest& update(std::string_view bytes);
    Digest& update(std::span<const double> values);
    Digest& update(std::uint64_t value);
    std::string hex();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

std::string sha256_hex(std::string_view bytes);

// Derives an independent 64-bit seed from a base seed and a label.
std::uint64_t derive_seed(std::uint64_t base, std::string_view label);
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0);

// Whole-file IO. Writes go to a temporary sibling first, then rename.
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view contents);
std::string file_digest(const std::filesystem::path& path);

enum class LogLevel { Quiet, Info, Debug };
void set_log_level(LogLevel level);
LogLevel log_level();
void log_info(std::string_view message);
void log_warn(std::string_view message);

}  // namespace ptbt
