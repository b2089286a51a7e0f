#pragma once

// Canonical JSON bytes (sorted keys, no whitespace, integers only), hex and
// SHA-256 helpers shared by weights files, certificates and version records.

#include <admkit/errors.hpp>

#include <json.hpp>
#include <sodium.h>

#include <charconv>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace admkit {

using json = nlohmann::json;
using Bytes = std::vector<uint8_t>;

inline void ensure_sodium() {
  static const bool ok = sodium_init() >= 0;
  if (!ok) throw SigningError("libsodium failed to initialise");
}

namespace detail {

inline void reject_floats(const json& j, const std::string& path) {
  if (j.is_number_float()) throw ParseError("non-integer number at " + path + " is not canonical");
  if (j.is_object())
    for (const auto& [k, v] : j.items()) reject_floats(v, path + "/" + k);
  if (j.is_array())
    for (std::size_t i = 0; i < j.size(); ++i) reject_floats(j[i], path + "/" + std::to_string(i));
}

}  // namespace detail

// nlohmann's object type is an ordered std::map, so dump() already sorts keys
// by UTF-8 bytes; strict error handling refuses invalid UTF-8.
inline std::string canonical(const json& j) {
  detail::reject_floats(j, "");
  return j.dump(-1, ' ', false, json::error_handler_t::strict);
}

// Parses text that must already be in canonical form.
inline json parse_canonical(std::string_view text, const std::string& what) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(what + ": " + e.what());
  }
  if (canonical(j) != text) throw ParseError(what + ": bytes are not in canonical form");
  return j;
}

inline std::string to_hex(const uint8_t* p, std::size_t n) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s(2 * n, '0');
  for (std::size_t i = 0; i < n; ++i) {
    s[2 * i] = digits[p[i] >> 4];
    s[2 * i + 1] = digits[p[i] & 15];
  }
  return s;
}
inline std::string to_hex(const Bytes& b) { return to_hex(b.data(), b.size()); }

// Lowercase only, so each byte string has exactly one spelling.
inline Bytes from_hex(std::string_view s) {
  auto nibble = [&](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    throw ParseError("bad hex digit in '" + std::string(s) + "'");
  };
  if (s.size() % 2) throw ParseError("odd-length hex string");
  Bytes b(s.size() / 2);
  for (std::size_t i = 0; i < b.size(); ++i) b[i] = static_cast<uint8_t>(nibble(s[2 * i]) * 16 + nibble(s[2 * i + 1]));
  return b;
}

inline std::string sha256_hex(std::string_view data) {
  ensure_sodium();
  uint8_t out[crypto_hash_sha256_BYTES];
  crypto_hash_sha256(out, reinterpret_cast<const unsigned char*>(data.data()), data.size());
  return to_hex(out, sizeof out);
}

// Shortest decimal that reads back to the same double.
inline std::string format_real(double x) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, r.ptr);
}

inline double parse_real(std::string_view s) {
  double x = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), x);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw ParseError("bad real '" + std::string(s) + "'");
  return x;
}

// Hex of a pattern without leading zeros ("0" for zero).
inline std::string uint_hex(uint64_t v) {
  char buf[20];
  const auto r = std::to_chars(buf, buf + sizeof buf, v, 16);
  return std::string(buf, r.ptr);
}

inline uint64_t parse_uint_hex(std::string_view s) {
  uint64_t v = 0;
  if (s.empty() || (s.size() > 1 && s[0] == '0')) throw ParseError("non-canonical hex '" + std::string(s) + "'");
  for (char c : s)
    if (!((c >= '0' && c <= '9') || (c >= 'a' && c <= 'f'))) throw ParseError("bad hex '" + std::string(s) + "'");
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v, 16);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw ParseError("bad hex '" + std::string(s) + "'");
  return v;
}

// Typed field access that reports the path on failure.
template <class V>
V field(const json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) throw ParseError(where + ": missing '" + key + "'");
  try {
    return j.at(key).get<V>();
  } catch (const json::exception&) {
    throw ParseError(where + ": field '" + key + "' has the wrong type");
  }
}

inline void expect_keys(const json& j, std::initializer_list<const char*> keys, const std::string& where) {
  if (!j.is_object()) throw ParseError(where + ": expected an object");
  if (j.size() != keys.size()) throw ParseError(where + ": unexpected set of fields");
  for (const char* k : keys)
    if (!j.contains(k)) throw ParseError(where + ": missing '" + std::string(k) + "'");
}

}  // namespace admkit
