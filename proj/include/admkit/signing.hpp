#pragma once

// Pluggable detached signatures: "null" for development and Ed25519
// (libsodium) as the deployment default. Keys derive from 32-byte seeds.

#include <admkit/canonical.hpp>

#include <fstream>
#include <memory>
#include <sstream>

namespace admkit {

struct DetachedSignature {
  std::string scheme;  // "null" or "ed25519"
  std::string bytes;   // lowercase hex, empty for null
  bool operator==(const DetachedSignature&) const = default;
};

class Signer {
 public:
  virtual ~Signer() = default;
  virtual std::string scheme() const = 0;
  virtual DetachedSignature sign(std::string_view message) const = 0;
};

class NullSigner final : public Signer {
 public:
  std::string scheme() const override { return "null"; }
  DetachedSignature sign(std::string_view) const override { return {"null", ""}; }
};

class Ed25519Signer final : public Signer {
 public:
  explicit Ed25519Signer(const Bytes& seed) {
    ensure_sodium();
    if (seed.size() != crypto_sign_SEEDBYTES) throw SigningError("ed25519 seed must be 32 bytes");
    crypto_sign_seed_keypair(pk_, sk_, seed.data());
  }
  // Deterministic key from any label, for reproducible scenario runs.
  static Ed25519Signer from_label(std::string_view label) { return Ed25519Signer(from_hex(sha256_hex(label))); }
  ~Ed25519Signer() override { sodium_memzero(sk_, sizeof sk_); }

  std::string scheme() const override { return "ed25519"; }
  DetachedSignature sign(std::string_view m) const override {
    uint8_t sig[crypto_sign_BYTES];
    crypto_sign_detached(sig, nullptr, reinterpret_cast<const unsigned char*>(m.data()), m.size(), sk_);
    return {"ed25519", to_hex(sig, sizeof sig)};
  }
  std::string public_key_hex() const { return to_hex(pk_, sizeof pk_); }

 private:
  uint8_t pk_[crypto_sign_PUBLICKEYBYTES];
  uint8_t sk_[crypto_sign_SECRETKEYBYTES];
};

enum class SignatureStatus { valid, invalid, unsigned_record };

inline const char* to_string(SignatureStatus s) {
  switch (s) {
    case SignatureStatus::valid:
      return "valid";
    case SignatureStatus::invalid:
      return "invalid";
    case SignatureStatus::unsigned_record:
      return "unsigned";
  }
  return "?";
}

// public_key_hex may be empty when only null signatures are expected.
inline SignatureStatus verify_signature(const DetachedSignature& s, std::string_view message,
                                        const std::string& public_key_hex) {
  if (s.scheme == "null") return s.bytes.empty() ? SignatureStatus::unsigned_record : SignatureStatus::invalid;
  if (s.scheme != "ed25519") return SignatureStatus::invalid;
  ensure_sodium();
  Bytes sig, pk;
  try {
    sig = from_hex(s.bytes);
    pk = from_hex(public_key_hex);
  } catch (const ParseError&) {
    return SignatureStatus::invalid;
  }
  if (sig.size() != crypto_sign_BYTES || pk.size() != crypto_sign_PUBLICKEYBYTES) return SignatureStatus::invalid;
  const int rc = crypto_sign_verify_detached(sig.data(), reinterpret_cast<const unsigned char*>(message.data()),
                                             message.size(), pk.data());
  return rc == 0 ? SignatureStatus::valid : SignatureStatus::invalid;
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline std::string trim(std::string s) {
  while (!s.empty() && (s.back() == '\n' || s.back() == '\r' || s.back() == ' ')) s.pop_back();
  std::size_t i = 0;
  while (i < s.size() && s[i] == ' ') ++i;
  return s.substr(i);
}

// Key file: the 32-byte seed as hex. Missing or malformed files are a
// signing error so that no record is emitted.
inline std::unique_ptr<Signer> load_signer(const std::string& scheme, const std::string& key_path) {
  if (scheme == "null") return std::make_unique<NullSigner>();
  if (scheme != "ed25519") throw SigningError("unknown signing scheme '" + scheme + "'");
  std::string text;
  try {
    text = trim(read_text_file(key_path));
  } catch (const Error& e) {
    throw SigningError(std::string("signer unavailable: ") + e.what());
  }
  try {
    return std::make_unique<Ed25519Signer>(from_hex(text));
  } catch (const ParseError& e) {
    throw SigningError(std::string("signer key unreadable: ") + e.what());
  }
}

}  // namespace admkit
