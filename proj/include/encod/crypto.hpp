#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace encod {

using Key256 = std::array<std::uint8_t, 32>;
using Iv128 = std::array<std::uint8_t, 16>;

inline constexpr std::size_t kAesBlock = 16;

/// IV (16 bytes) followed by AES-256-CBC/PKCS#7 ciphertext. A fresh IV is
/// drawn from the system CSPRNG on every call. Throws std::invalid_argument
/// unless the key is exactly 32 bytes.
std::vector<std::uint8_t> encrypt_file(std::span<const std::uint8_t> plaintext,
                                       std::span<const std::uint8_t> key);

/// Same layout as encrypt_file with a caller-chosen IV.
std::vector<std::uint8_t> encrypt_file(std::span<const std::uint8_t> plaintext,
                                       std::span<const std::uint8_t> key, const Iv128& iv);

/// Inverse of encrypt_file. Throws std::runtime_error on bad padding/length.
std::vector<std::uint8_t> decrypt_file(std::span<const std::uint8_t> blob,
                                       std::span<const std::uint8_t> key);

/// Output length of encrypt_file for an n-byte plaintext: 16 + 16*ceil((n+1)/16).
constexpr std::size_t encrypted_size(std::size_t n) noexcept {
  return kAesBlock + kAesBlock * (n / kAesBlock + 1);
}

/// Incremental SHA-256.
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(std::span<const std::uint8_t> data);
  void update(std::string_view text);
  std::string hex_digest();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

std::string sha256_hex(std::span<const std::uint8_t> data);
std::string sha256_hex(std::string_view text);

}  // namespace encod
