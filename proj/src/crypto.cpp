#include "encod/crypto.hpp"

#include <openssl/evp.h>
#include <openssl/rand.h>

#include <stdexcept>

namespace encod {
namespace {

struct CipherCtxDeleter {
  void operator()(EVP_CIPHER_CTX* ctx) const { EVP_CIPHER_CTX_free(ctx); }
};
using CipherCtx = std::unique_ptr<EVP_CIPHER_CTX, CipherCtxDeleter>;

void check_key(std::span<const std::uint8_t> key) {
  if (key.size() != 32)
    throw std::invalid_argument("AES-256 key must be 32 bytes, got " + std::to_string(key.size()));
}

}  // namespace

std::vector<std::uint8_t> encrypt_file(std::span<const std::uint8_t> plaintext,
                                       std::span<const std::uint8_t> key) {
  check_key(key);
  Iv128 iv{};
  if (RAND_bytes(iv.data(), static_cast<int>(iv.size())) != 1)
    throw std::runtime_error("RAND_bytes failed");
  return encrypt_file(plaintext, key, iv);
}

std::vector<std::uint8_t> encrypt_file(std::span<const std::uint8_t> plaintext,
                                       std::span<const std::uint8_t> key, const Iv128& iv) {
  check_key(key);
  CipherCtx ctx(EVP_CIPHER_CTX_new());
  if (!ctx || EVP_EncryptInit_ex(ctx.get(), EVP_aes_256_cbc(), nullptr, key.data(), iv.data()) != 1)
    throw std::runtime_error("EVP_EncryptInit_ex failed");

  std::vector<std::uint8_t> out(encrypted_size(plaintext.size()));
  std::copy(iv.begin(), iv.end(), out.begin());
  std::size_t written = kAesBlock;
  // EVP takes int lengths; feed large inputs in chunks.
  constexpr std::size_t kChunk = 1u << 30;
  for (std::size_t pos = 0; pos < plaintext.size(); pos += kChunk) {
    const std::size_t len = std::min(kChunk, plaintext.size() - pos);
    int n = 0;
    if (EVP_EncryptUpdate(ctx.get(), out.data() + written, &n, plaintext.data() + pos,
                          static_cast<int>(len)) != 1)
      throw std::runtime_error("EVP_EncryptUpdate failed");
    written += static_cast<std::size_t>(n);
  }
  int n = 0;
  if (EVP_EncryptFinal_ex(ctx.get(), out.data() + written, &n) != 1)
    throw std::runtime_error("EVP_EncryptFinal_ex failed");
  written += static_cast<std::size_t>(n);
  if (written != out.size()) throw std::logic_error("unexpected ciphertext length");
  return out;
}

std::vector<std::uint8_t> decrypt_file(std::span<const std::uint8_t> blob,
                                       std::span<const std::uint8_t> key) {
  check_key(key);
  if (blob.size() < 2 * kAesBlock || blob.size() % kAesBlock != 0)
    throw std::runtime_error("ciphertext length is not IV + whole blocks");
  CipherCtx ctx(EVP_CIPHER_CTX_new());
  if (!ctx ||
      EVP_DecryptInit_ex(ctx.get(), EVP_aes_256_cbc(), nullptr, key.data(), blob.data()) != 1)
    throw std::runtime_error("EVP_DecryptInit_ex failed");
  const auto body = blob.subspan(kAesBlock);
  std::vector<std::uint8_t> out(body.size() + kAesBlock);
  int n = 0;
  if (EVP_DecryptUpdate(ctx.get(), out.data(), &n, body.data(), static_cast<int>(body.size())) != 1)
    throw std::runtime_error("EVP_DecryptUpdate failed");
  std::size_t written = static_cast<std::size_t>(n);
  if (EVP_DecryptFinal_ex(ctx.get(), out.data() + written, &n) != 1)
    throw std::runtime_error("bad PKCS#7 padding");
  out.resize(written + static_cast<std::size_t>(n));
  return out;
}

struct Sha256::Impl {
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  ~Impl() { EVP_MD_CTX_free(ctx); }
};

Sha256::Sha256() : impl_(std::make_unique<Impl>()) {
  if (!impl_->ctx || EVP_DigestInit_ex(impl_->ctx, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("EVP_DigestInit_ex failed");
}

Sha256::~Sha256() = default;

void Sha256::update(std::span<const std::uint8_t> data) {
  if (EVP_DigestUpdate(impl_->ctx, data.data(), data.size()) != 1)
    throw std::runtime_error("EVP_DigestUpdate failed");
}

void Sha256::update(std::string_view text) {
  update(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string Sha256::hex_digest() {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_DigestFinal_ex(impl_->ctx, md, &len) != 1)
    throw std::runtime_error("EVP_DigestFinal_ex failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[md[i] >> 4]);
    out.push_back(kHex[md[i] & 0xF]);
  }
  return out;
}

std::string sha256_hex(std::span<const std::uint8_t> data) {
  Sha256 h;
  h.update(data);
  return h.hex_digest();
}

std::string sha256_hex(std::string_view text) {
  Sha256 h;
  h.update(text);
  return h.hex_digest();
}

}  // namespace encod
