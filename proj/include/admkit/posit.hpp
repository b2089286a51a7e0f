#pragma once

// Bounded-regime posit numbers: format descriptor, value type and the
// exact codec between bit patterns and extended-precision reals.
//
// Layout of an n-bit pattern (after two's complement for negatives):
//
//   sign | regime (2..rmax bits) | exponent (es bits) | fraction
//
// The regime is a run of identical bits closed by the opposite bit, except
// that a run reaching rmax bits carries no terminator. Exponent bits that do
// not fit are implicitly zero. value = 2^(k*2^es + e) * 1.f

#include <admkit/errors.hpp>

#include <boost/multiprecision/cpp_int.hpp>

#include <algorithm>
#include <atomic>
#include <memory>
#include <mutex>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

namespace admkit {

static_assert(std::numeric_limits<long double>::digits >= 64,
              "posit decode requires a 64-bit extended significand");

struct PositFormat {
  int nbits = 16;
  int es = 2;
  int rmax = 6;

  // Throws FormatError when the parameters are outside the supported range.
  void validate() const {
    if (nbits < 5 || nbits > 64)
      throw FormatError("posit nbits must be in [5, 64], got " + std::to_string(nbits));
    if (es < 0 || es > 4) throw FormatError("posit es must be in [0, 4], got " + std::to_string(es));
    if (rmax < 2 || rmax > 6)
      throw FormatError("posit rmax must be in [2, 6], got " + std::to_string(rmax));
    if (rmax > nbits - 1)
      throw FormatError("posit rmax must leave room for the sign bit: " + to_string());
  }

  uint64_t mask() const { return nbits == 64 ? ~uint64_t{0} : (uint64_t{1} << nbits) - 1; }
  uint64_t nar_bits() const { return uint64_t{1} << (nbits - 1); }
  uint64_t maxpos_bits() const { return nar_bits() - 1; }
  static constexpr uint64_t minpos_bits() { return 1; }

  std::string to_string() const {
    return "posit(" + std::to_string(nbits) + "," + std::to_string(es) + "," +
           std::to_string(rmax) + ")";
  }

  friend bool operator==(const PositFormat&, const PositFormat&) = default;
};

// Training default.
inline constexpr PositFormat kDefaultFormat{16, 2, 6};

// Unpacked magnitude of a nonzero, non-NaR pattern: value = ±significand * 2^exponent.
struct PositFields {
  bool negative = false;
  uint64_t significand = 0;
  int exponent = 0;
};

namespace detail {

inline uint64_t negate_bits(uint64_t bits, const PositFormat& f) { return (~bits + 1) & f.mask(); }

inline PositFields unpack(const PositFormat& f, uint64_t bits) {
  // Branch-free: quire accumulation unpacks two patterns per product.
  const int n = f.nbits;
  const uint64_t sign = (bits >> (n - 1)) & 1;
  const uint64_t mag = ((bits ^ (0 - sign)) + sign) & f.mask();
  // Left-align the n-1 body bits.
  const uint64_t body = mag << (65 - n);
  const uint64_t ones = body >> 63;
  const int run = std::min(std::countl_zero(body ^ (0 - ones)), f.rmax);
  const int rlen = run + (run < f.rmax);
  const int k = static_cast<int>(ones) * (2 * run - 1) - run;
  const uint64_t rest = body << rlen;
  const int e = static_cast<int>((rest >> 1) >> (63 - f.es));
  const int fb = std::max(0, n - 1 - rlen - f.es);
  const uint64_t frac = ((rest << f.es) >> 1) >> (63 - fb);
  PositFields out;
  out.negative = sign;
  out.significand = (uint64_t{1} << fb) | frac;
  out.exponent = k * (1 << f.es) + e - fb;
  return out;
}

// Largest positive body pattern whose value is <= a (a > 0). Returns 0 when a
// lies below every positive posit and maxpos when a is at or beyond it.
inline uint64_t floor_pattern(const PositFormat& f, long double a) {
  int s = 0;
  const long double fr = std::frexp(a, &s);
  const auto m = static_cast<uint64_t>(std::ldexp(fr, 64));
  const int scale = s - 1;
  const int k = scale >> f.es;
  const int e = scale - k * (1 << f.es);
  if (k > f.rmax - 1) return f.maxpos_bits();
  if (k < -f.rmax) return 0;

  unsigned __int128 stream = 0;
  int pos = 128;
  auto put = [&](uint64_t v, int len) {
    if (len == 0) return;
    pos -= len;
    stream |= static_cast<unsigned __int128>(v) << pos;
  };
  if (k >= 0) {
    const int run = k + 1;
    if (run < f.rmax)
      put(((uint64_t{1} << run) - 1) << 1, run + 1);
    else
      put((uint64_t{1} << f.rmax) - 1, f.rmax);
  } else {
    const int run = -k;
    if (run < f.rmax)
      put(1, run + 1);
    else
      put(0, f.rmax);
  }
  put(static_cast<uint64_t>(e), f.es);
  put(m & ~(uint64_t{1} << 63), 63);
  return static_cast<uint64_t>(stream >> (128 - (f.nbits - 1)));
}

inline long double to_real(const PositFields& p) {
  const long double v = std::ldexp(static_cast<long double>(p.significand), p.exponent);
  return p.negative ? -v : v;
}

}  // namespace detail

// A posit value: a format plus an nbits-wide pattern.
class Posit {
 public:
  Posit() = default;

  static Posit from_bits(PositFormat f, uint64_t bits) { return Posit(f, bits & f.mask()); }
  static Posit zero(PositFormat f) { return Posit(f, 0); }
  static Posit nar(PositFormat f) { return Posit(f, f.nar_bits()); }
  static Posit maxpos(PositFormat f) { return Posit(f, f.maxpos_bits()); }
  static Posit minpos(PositFormat f) { return Posit(f, PositFormat::minpos_bits()); }

  const PositFormat& format() const { return fmt_; }
  uint64_t bits() const { return bits_; }
  bool is_zero() const { return bits_ == 0; }
  bool is_nar() const { return bits_ == fmt_.nar_bits(); }
  bool is_negative() const { return !is_nar() && ((bits_ >> (fmt_.nbits - 1)) & 1); }

  // Pattern as a sign-extended integer; posit order equals integer order.
  int64_t signed_bits() const {
    const int sh = 64 - fmt_.nbits;
    return static_cast<int64_t>(bits_ << sh) >> sh;
  }

  PositFields fields() const { return detail::unpack(fmt_, bits_); }

  // Exact value; NaR maps to quiet NaN.
  long double to_long_double() const {
    if (is_zero()) return 0.0L;
    if (is_nar()) return std::numeric_limits<long double>::quiet_NaN();
    return detail::to_real(fields());
  }
  double to_double() const { return static_cast<double>(to_long_double()); }

  // Exact negation (two's complement of the pattern).
  Posit operator-() const {
    if (is_zero() || is_nar()) return *this;
    return Posit(fmt_, detail::negate_bits(bits_, fmt_));
  }

  friend bool operator==(const Posit& a, const Posit& b) { return a.fmt_ == b.fmt_ && a.bits_ == b.bits_; }

 private:
  Posit(PositFormat f, uint64_t b) : fmt_(f), bits_(b) {}

  PositFormat fmt_{};
  uint64_t bits_ = 0;
};

// Round-to-nearest posit, ties to the even pattern. Magnitudes beyond maxpos
// saturate to maxpos and nonzero magnitudes below minpos go to minpos. NaN and
// infinities encode as NaR.
inline Posit encode(long double x, PositFormat f) {
  if (std::isnan(x) || std::isinf(x)) return Posit::nar(f);
  if (x == 0.0L) return Posit::zero(f);
  const bool neg = x < 0;
  const long double a = std::fabs(x);
  const uint64_t lo = detail::floor_pattern(f, a);
  uint64_t p = 0;
  if (lo == 0) {
    p = PositFormat::minpos_bits();
  } else if (lo >= f.maxpos_bits()) {
    p = f.maxpos_bits();
  } else {
    const long double vlo = detail::to_real(detail::unpack(f, lo));
    const long double vhi = detail::to_real(detail::unpack(f, lo + 1));
    // Exact: adjacent posits carry at most 62 significant bits.
    const long double mid = vlo / 2 + vhi / 2;
    if (a < mid)
      p = lo;
    else if (a > mid)
      p = lo + 1;
    else
      p = (lo & 1) ? lo + 1 : lo;
  }
  return Posit::from_bits(f, neg ? detail::negate_bits(p, f) : p);
}

inline long double decode(const Posit& p) { return p.to_long_double(); }

// Length in bits of the regime field of a pattern (0 for zero and NaR).
inline int regime_length(const Posit& p) {
  if (p.is_zero() || p.is_nar()) return 0;
  const PositFormat& f = p.format();
  const uint64_t mag = p.is_negative() ? detail::negate_bits(p.bits(), f) : p.bits();
  const uint64_t body = mag << (65 - f.nbits);
  const bool ones = body >> 63;
  const int run = std::min(ones ? std::countl_one(body) : std::countl_zero(body), f.rmax);
  return run < f.rmax ? run + 1 : run;
}

// Exact decimal expansion of the value (every posit is a dyadic rational).
inline std::string exact_decimal(const Posit& p) {
  if (p.is_nar()) return "NaR";
  if (p.is_zero()) return "0";
  const PositFields f = p.fields();
  boost::multiprecision::cpp_int n = f.significand;
  int scale = 0;  // digits after the point
  if (f.exponent >= 0) {
    n <<= f.exponent;
  } else {
    n *= boost::multiprecision::pow(boost::multiprecision::cpp_int(5), -f.exponent);
    scale = -f.exponent;
  }
  std::string d = n.str();
  if (scale > 0) {
    if (static_cast<int>(d.size()) <= scale) d.insert(0, static_cast<std::size_t>(scale) + 1 - d.size(), '0');
    d.insert(d.size() - static_cast<std::size_t>(scale), ".");
    while (d.back() == '0') d.pop_back();
    if (d.back() == '.') d.pop_back();
  }
  return (f.negative ? "-" : "") + d;
}

// Unpacked fields of every pattern of a format, for hot loops. Built on first
// use; only formats up to kDecodeTableMaxBits wide have one.
struct DecodedPattern {
  uint32_t significand = 0;
  int16_t exponent = 0;
  uint8_t negative = 0;
  uint8_t special = 0;  // 1 zero, 2 NaR
};

inline constexpr int kDecodeTableMaxBits = 16;

inline const DecodedPattern* decode_table(const PositFormat& f) {
  if (f.nbits > kDecodeTableMaxBits) return nullptr;
  constexpr int kSlots = (kDecodeTableMaxBits + 1) * 5 * 7;
  static std::atomic<const DecodedPattern*> slots[kSlots];
  static std::mutex build;
  static std::vector<std::unique_ptr<DecodedPattern[]>> owned;
  std::atomic<const DecodedPattern*>& slot = slots[(f.nbits * 5 + f.es) * 7 + f.rmax];
  if (const auto* t = slot.load(std::memory_order_acquire)) return t;
  std::lock_guard<std::mutex> lock(build);
  if (const auto* t = slot.load(std::memory_order_relaxed)) return t;
  f.validate();
  const uint64_t count = uint64_t{1} << f.nbits;
  auto table = std::make_unique<DecodedPattern[]>(count);
  for (uint64_t b = 0; b < count; ++b) {
    DecodedPattern& d = table[b];
    if (b == 0) {
      d.special = 1;
    } else if (b == f.nar_bits()) {
      d.special = 2;
    } else {
      const PositFields p = detail::unpack(f, b);
      d.significand = static_cast<uint32_t>(p.significand);
      d.exponent = static_cast<int16_t>(p.exponent);
      d.negative = p.negative;
    }
  }
  owned.push_back(std::move(table));
  slot.store(owned.back().get(), std::memory_order_release);
  return owned.back().get();
}

}  // namespace admkit
