#include "kcare/hash.hpp"

#include <openssl/evp.h>

#include <cstdio>
#include <fstream>

#include "kcare/errors.hpp"

namespace kcare {

namespace {

constexpr char kHexDigits[] = "0123456789abcdef";

} // namespace

std::string to_hex(const unsigned char* data, std::size_t len) {
  std::string out;
  out.reserve(len * 2);
  for (std::size_t i = 0; i < len; ++i) {
    out.push_back(kHexDigits[data[i] >> 4]);
    out.push_back(kHexDigits[data[i] & 0x0f]);
  }
  return out;
}

std::array<unsigned char, 32> sha256_bytes(std::string_view data) {
  std::array<unsigned char, 32> digest{};
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (ctx == nullptr ||
      EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx, data.data(), data.size()) != 1 ||
      EVP_DigestFinal_ex(ctx, digest.data(), &len) != 1) {
    EVP_MD_CTX_free(ctx);
    fail(Errc::invariant, "sha256 digest failed");
  }
  EVP_MD_CTX_free(ctx);
  return digest;
}

std::string sha256_hex(std::string_view data) {
  auto digest = sha256_bytes(data);
  return to_hex(digest.data(), digest.size());
}

std::string sha256_file_hex(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in.good()) {
    fail(Errc::io, "cannot open file for hashing: " + path.string());
  }
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (ctx == nullptr || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
    EVP_MD_CTX_free(ctx);
    fail(Errc::invariant, "sha256 init failed");
  }
  char buffer[1 << 16];
  while (in.read(buffer, sizeof(buffer)) || in.gcount() > 0) {
    if (EVP_DigestUpdate(ctx, buffer, static_cast<std::size_t>(in.gcount())) != 1) {
      EVP_MD_CTX_free(ctx);
      fail(Errc::invariant, "sha256 update failed");
    }
  }
  unsigned char digest[32];
  unsigned int len = 0;
  if (EVP_DigestFinal_ex(ctx, digest, &len) != 1) {
    EVP_MD_CTX_free(ctx);
    fail(Errc::invariant, "sha256 final failed");
  }
  EVP_MD_CTX_free(ctx);
  return to_hex(digest, len);
}

std::uint64_t hash64(std::string_view data) {
  auto digest = sha256_bytes(data);
  std::uint64_t value = 0;
  for (int i = 7; i >= 0; --i) {
    value = (value << 8) | digest[static_cast<std::size_t>(i)];
  }
  return value;
}

} // namespace kcare
