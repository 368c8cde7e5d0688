#include "ptbt/util.hpp"

#include <openssl/evp.h>

#include <array>
#include <bit>
#include <fstream>
#include <sstream>
#include <iostream>
#include <random>
#include <stdexcept>

namespace ptbt {

struct Digest::Impl {
    EVP_MD_CTX* ctx = nullptr;
};

Digest::Digest() : impl_(std::make_unique<Impl>()) {
    impl_->ctx = EVP_MD_CTX_new();
    if (!impl_->ctx || EVP_DigestInit_ex(impl_->ctx, EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("sha256 initialisation failed");
}

Digest::~Digest() { EVP_MD_CTX_free(impl_->ctx); }

Digest& Digest::update(std::string_view bytes) {
    EVP_DigestUpdate(impl_->ctx, bytes.data(), bytes.size());
    return *this;
}

Digest& Digest::update(std::span<const double> values) {
    // Hash the little-endian encoding so digests do not depend on the host.
    std::array<unsigned char, 8> buf{};
    for (double v : values) {
        const auto bits = std::bit_cast<std::uint64_t>(v);
        for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(bits >> (8 * i));
        EVP_DigestUpdate(impl_->ctx, buf.data(), buf.size());
    }
    return *this;
}

Digest& Digest::update(std::uint64_t value) {
    std::array<unsigned char, 8> buf{};
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(value >> (8 * i));
    EVP_DigestUpdate(impl_->ctx, buf.data(), buf.size());
    return *this;
}

std::string Digest::hex() {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    EVP_DigestFinal_ex(impl_->ctx, md.data(), &len);
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out += kHex[md[i] >> 4];
        out += kHex[md[i] & 15];
    }
    return out;
}

std::string sha256_hex(std::string_view bytes) { return Digest().update(bytes).hex(); }

std::uint64_t derive_seed(std::uint64_t base, std::string_view label) {
    std::seed_seq seq(label.begin(), label.end());
    std::array<std::uint32_t, 2> mixed{};
    seq.generate(mixed.begin(), mixed.end());
    return derive_seed(base, (static_cast<std::uint64_t>(mixed[0]) << 32) | mixed[1]);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
    std::seed_seq seq{static_cast<std::uint32_t>(base), static_cast<std::uint32_t>(base >> 32),
                      static_cast<std::uint32_t>(a),    static_cast<std::uint32_t>(a >> 32),
                      static_cast<std::uint32_t>(b),    static_cast<std::uint32_t>(b >> 32)};
    std::array<std::uint32_t, 2> out{};
    seq.generate(out.begin(), out.end());
    return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

namespace {
LogLevel g_level = LogLevel::Info;
}

void set_log_level(LogLevel level) { g_level = level; }
LogLevel log_level() { return g_level; }

void log_info(std::string_view message) {
    if (g_level != LogLevel::Quiet) std::cerr << "[ptbt] " << message << '\n';
}

void log_warn(std::string_view message) { std::cerr << "[ptbt] warning: " << message << '\n'; }

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view contents) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!out) throw std::runtime_error("cannot write " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

std::string file_digest(const std::filesystem::path& path) { return sha256_hex(read_text_file(path)); }

}  // namespace ptbt
