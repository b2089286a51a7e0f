#pragma once

// Exact fixed-point accumulator for posit products.
//
// The accumulator is a two's complement integer scaled by 2^-frac_bits, wide
// enough that every product of two format values lands on an integer and at
// least 2^31 extreme products can be summed without overflow. Rounding to a
// posit happens once, in round().
//
// Storage is carry-save: signed 64-bit limbs holding 32-bit digits, so an
// accumulation touches a few limbs with no carry chain. Limbs are folded back
// into digits (normalized) before any read and every 2^30 accumulations.

#include <admkit/errors.hpp>
#include <admkit/posit.hpp>

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace admkit {

struct QuireLayout {
  int frac_bits = 0;  // accumulator is scaled by 2^-frac_bits
  int words = 0;      // 64-bit words in use

  int width_bits() const { return words * 64; }

  static QuireLayout for_format(const PositFormat& f) {
    constexpr int kCarryBits = 31;
    const PositFields minpos = detail::unpack(f, PositFormat::minpos_bits());
    const PositFields maxpos = detail::unpack(f, f.maxpos_bits());
    const int top = maxpos.exponent + 64 - std::countl_zero(maxpos.significand);  // maxpos < 2^top
    QuireLayout l;
    l.frac_bits = -2 * minpos.exponent;
    const int needed = l.frac_bits + 2 * top + kCarryBits + 1;
    const int width = std::max(16 * f.nbits, needed);
    l.words = (width + 63) / 64;
    return l;
  }
};

namespace detail {

inline constexpr int kQuireMaxWords = 16;
// One spare word so that doubled magnitudes fit during rounding.
using WideWords = std::array<uint64_t, kQuireMaxWords + 1>;

// Adds (or subtracts) mag * 2^pos into w[0..words). Subtraction adds the
// two's complement across the full width, so the sign costs no branch.
inline void add_shifted(uint64_t* w, int words, unsigned __int128 mag, int pos, bool subtract) {
  const int idx = pos >> 6;
  const int sh = pos & 63;
  const uint64_t m0 = static_cast<uint64_t>(mag);
  const uint64_t m1 = static_cast<uint64_t>(mag >> 64);
  // (x >> 1) >> (63 - sh) is x >> (64 - sh) without the shift-by-64 case.
  const uint64_t parts[3] = {m0 << sh, (m1 << sh) | ((m0 >> 1) >> (63 - sh)), (m1 >> 1) >> (63 - sh)};
  const uint64_t flip = 0 - static_cast<uint64_t>(subtract);
  uint64_t carry = subtract;
  for (int i = 0; i < words; ++i) {
    const int j = i - idx;
    const uint64_t part = (j >= 0 && j < 3) ? parts[j] : 0;
    const unsigned __int128 s = static_cast<unsigned __int128>(w[i]) + (part ^ flip) + carry;
    w[i] = static_cast<uint64_t>(s);
    carry = static_cast<uint64_t>(s >> 64);
  }
}

inline int compare_words(const uint64_t* a, const uint64_t* b, int words) {
  for (int i = words - 1; i >= 0; --i) {
    if (a[i] != b[i]) return a[i] < b[i] ? -1 : 1;
  }
  return 0;
}

}  // namespace detail

class Quire {
 public:
  Quire() = default;
  explicit Quire(PositFormat f) : fmt_(f), layout_(QuireLayout::for_format(f)), table_(decode_table(f)) {
    f.validate();
    if (layout_.words > detail::kQuireMaxWords)
      throw FormatError("quire for " + f.to_string() + " exceeds the supported width");
  }

  const PositFormat& format() const { return fmt_; }
  const QuireLayout& layout() const { return layout_; }
  bool is_nar() const { return nar_; }
  bool is_zero() const {
    if (nar_) return false;
    const auto w = words();
    for (int i = 0; i < layout_.words; ++i)
      if (w[i]) return false;
    return true;
  }

  void clear() {
    d_.fill(0);
    pending_ = 0;
    nar_ = false;
  }

  // acc += a * b, exactly.
  void fma(const Posit& a, const Posit& b) { accumulate_product(a, b, false); }
  // acc -= a * b, exactly.
  void fms(const Posit& a, const Posit& b) { accumulate_product(a, b, true); }

  void add(const Posit& a) {
    check(a);
    if (a.is_nar()) {
      nar_ = true;
      return;
    }
    if (a.is_zero()) return;
    const PositFields p = a.fields();
    deposit(p.significand, p.exponent + layout_.frac_bits, p.negative);
  }
  void sub(const Posit& a) { add(-a); }

  // Fixed-point addition of another accumulator of the same format.
  void merge(const Quire& other) {
    if (!(other.fmt_ == fmt_)) throw FormatError("quire merge across formats");
    nar_ = nar_ || other.nar_;
    if (pending_ + other.pending_ >= kNormalizeEvery) normalize();
    if (pending_ + other.pending_ >= kNormalizeEvery) {
      Quire o = other;
      o.normalize();
      add_limbs(o);
    } else {
      add_limbs(other);
    }
  }

  // The accumulator as two's complement words, least significant first.
  std::array<uint64_t, detail::kQuireMaxWords> words() const {
    Quire q = *this;
    q.normalize();
    std::array<uint64_t, detail::kQuireMaxWords> w{};
    for (int i = 0; i < layout_.words; ++i)
      w[i] = static_cast<uint64_t>(q.d_[2 * i]) | (static_cast<uint64_t>(q.d_[2 * i + 1]) << 32);
    return w;
  }

  // Single rounding of the exact accumulated value to the format.
  Posit round() const {
    if (nar_) return Posit::nar(fmt_);
    const int words = layout_.words;
    const auto w = this->words();
    detail::WideWords mag{};
    const bool negative = (w[words - 1] >> 63) & 1;
    if (negative) {
      uint64_t carry = 1;
      for (int i = 0; i < words; ++i) {
        const unsigned __int128 s = static_cast<unsigned __int128>(~w[i]) + carry;
        mag[i] = static_cast<uint64_t>(s);
        carry = static_cast<uint64_t>(s >> 64);
      }
    } else {
      for (int i = 0; i < words; ++i) mag[i] = w[i];
    }
    int top_word = words - 1;
    while (top_word >= 0 && mag[top_word] == 0) --top_word;
    if (top_word < 0) return Posit::zero(fmt_);

    // Truncate the magnitude to 64 significant bits; the floor pattern of the
    // truncated value equals the floor pattern of the exact value because no
    // posit carries more than 62 significant bits.
    const int hi_bit = top_word * 64 + 63 - std::countl_zero(mag[top_word]);
    const uint64_t top64 = extract64(mag, hi_bit - 63);
    const long double truncated =
        std::ldexp(static_cast<long double>(top64), hi_bit - 63 - layout_.frac_bits);

    const uint64_t lo = detail::floor_pattern(fmt_, truncated);
    uint64_t p = 0;
    if (lo == 0) {
      p = PositFormat::minpos_bits();
    } else if (lo >= fmt_.maxpos_bits()) {
      p = fmt_.maxpos_bits();
    } else {
      // Compare 2*|acc| against lo + hi in fixed point.
      detail::WideWords mid{};
      place(mid, lo);
      place(mid, lo + 1);
      detail::WideWords twice{};
      uint64_t carry = 0;
      for (int i = 0; i <= words; ++i) {
        twice[i] = (mag[i] << 1) | carry;
        carry = mag[i] >> 63;
      }
      const int c = detail::compare_words(twice.data(), mid.data(), words + 1);
      if (c < 0)
        p = lo;
      else if (c > 0)
        p = lo + 1;
      else
        p = (lo & 1) ? lo + 1 : lo;
    }
    return Posit::from_bits(fmt_, negative ? detail::negate_bits(p, fmt_) : p);
  }

 private:
  void check(const Posit& a) const {
    if (!(a.format() == fmt_)) [[unlikely]]
      format_mismatch(a.format());
  }

  [[noreturn, gnu::cold, gnu::noinline]] void format_mismatch(const PositFormat& f) const {
    throw FormatError("posit " + f.to_string() + " fed to quire of " + fmt_.to_string());
  }

  void accumulate_product(const Posit& a, const Posit& b, bool subtract) {
    check(a);
    check(b);
    if (table_) {
      const DecodedPattern& x = table_[a.bits()];
      const DecodedPattern& y = table_[b.bits()];
      if ((x.special | y.special) != 0) {
        nar_ = nar_ || x.special == 2 || y.special == 2;
        return;
      }
      deposit_narrow(static_cast<uint64_t>(x.significand) * y.significand,
                     x.exponent + y.exponent + layout_.frac_bits, (x.negative != y.negative) != subtract);
      return;
    }
    if (a.is_nar() || b.is_nar()) {
      nar_ = true;
      return;
    }
    if (a.is_zero() || b.is_zero()) return;
    const PositFields pa = a.fields();
    const PositFields pb = b.fields();
    const unsigned __int128 mag = static_cast<unsigned __int128>(pa.significand) * pb.significand;
    deposit(mag, pa.exponent + pb.exponent + layout_.frac_bits, (pa.negative != pb.negative) != subtract);
  }

  static constexpr uint32_t kNormalizeEvery = uint32_t{1} << 30;
  // Digits needed for the widest layout plus the reach of one deposit.
  static constexpr int kLimbs = 2 * detail::kQuireMaxWords + 6;

  // d += (-1)^neg * mag * 2^pos
  void deposit(unsigned __int128 mag, int pos, bool neg) {
    const int li = pos >> 5;
    const int sh = pos & 31;
    const int64_t sgn = 1 - 2 * static_cast<int64_t>(neg);
    int64_t* d = d_.data() + li;
    const auto hi = static_cast<uint64_t>(mag >> 64);
    if (hi == 0) {
      const unsigned __int128 v = static_cast<unsigned __int128>(static_cast<uint64_t>(mag)) << sh;
      d[0] += sgn * static_cast<int64_t>(static_cast<uint32_t>(v));
      d[1] += sgn * static_cast<int64_t>(static_cast<uint32_t>(v >> 32));
      d[2] += sgn * static_cast<int64_t>(static_cast<uint32_t>(v >> 64));
    } else {
      const unsigned __int128 v = mag << sh;
      const uint64_t top = sh ? static_cast<uint64_t>(mag >> (128 - sh)) : 0;
      for (int i = 0; i < 4; ++i) d[i] += sgn * static_cast<int64_t>(static_cast<uint32_t>(v >> (32 * i)));
      d[4] += sgn * static_cast<int64_t>(top);
    }
    if (++pending_ >= kNormalizeEvery) normalize();
  }

  // Table products are below 2^28, so the shifted value spans two digits.
  void deposit_narrow(uint64_t mag, int pos, bool neg) {
    const int64_t m = -static_cast<int64_t>(neg);
    const uint64_t v = mag << (pos & 31);
    int64_t* d = d_.data() + (pos >> 5);
    d[0] += (static_cast<int64_t>(v & 0xffffffffu) ^ m) - m;
    d[1] += (static_cast<int64_t>(v >> 32) ^ m) - m;
    if (++pending_ >= kNormalizeEvery) [[unlikely]]
      normalize();
  }

  void add_limbs(const Quire& o) {
    for (int i = 0; i < kLimbs; ++i) d_[i] += o.d_[i];
    pending_ += o.pending_;
  }

  // Folds carries so that every digit is in [0, 2^32); the value is kept
  // modulo 2^width, i.e. as two's complement.
  void normalize() {
    const int digits = 2 * layout_.words;
    int64_t carry = 0;
    for (int i = 0; i < digits; ++i) {
      const __int128 t = static_cast<__int128>(d_[i]) + carry;
      d_[i] = static_cast<int64_t>(static_cast<uint32_t>(static_cast<uint64_t>(t)));
      carry = static_cast<int64_t>((t - d_[i]) >> 32);
    }
    for (int i = digits; i < kLimbs; ++i) d_[i] = 0;
    pending_ = 1;
  }

  // Positive pattern value placed into fixed point (added to dst).
  void place(detail::WideWords& dst, uint64_t pattern) const {
    const PositFields f = detail::unpack(fmt_, pattern);
    detail::add_shifted(dst.data(), layout_.words + 1, f.significand, f.exponent + layout_.frac_bits, false);
  }

  static uint64_t extract64(const detail::WideWords& m, int lowest_bit) {
    if (lowest_bit <= 0) {
      // Whole magnitude fits in 64 bits; left-align is unnecessary since the
      // exponent bookkeeping uses lowest_bit directly.
      return lowest_bit == 0 ? m[0] : m[0] << (-lowest_bit);
    }
    const int idx = lowest_bit >> 6;
    const int sh = lowest_bit & 63;
    if (sh == 0) return m[idx];
    return (m[idx] >> sh) | (m[idx + 1] << (64 - sh));
  }

  PositFormat fmt_{};
  QuireLayout layout_{};
  const DecodedPattern* table_ = nullptr;
  std::array<int64_t, kLimbs> d_{};
  uint32_t pending_ = 0;  // bound on |limb| in units of 2^32
  bool nar_ = false;
};

// Exact dot product rounded once. Identical bits for any ordering of the pairs.
inline Posit quire_dot(std::span<const Posit> xs, std::span<const Posit> ys, PositFormat f) {
  if (xs.size() != ys.size()) throw FormatError("quire_dot: operand lengths differ");
  Quire q(f);
  for (std::size_t i = 0; i < xs.size(); ++i) q.fma(xs[i], ys[i]);
  return q.round();
}

// Sums partial accumulators in fixed point and rounds once.
inline Posit distributed_reduce(std::span<const Quire> partials) {
  if (partials.empty()) throw FormatError("distributed_reduce needs at least one partial");
  Quire total = partials.front();
  for (std::size_t i = 1; i < partials.size(); ++i) total.merge(partials[i]);
  return total.round();
}

// Scalar arithmetic: exact in the quire, one rounding.
inline Posit operator+(const Posit& a, const Posit& b) {
  Quire q(a.format());
  q.add(a);
  q.add(b);
  return q.round();
}
inline Posit operator-(const Posit& a, const Posit& b) {
  Quire q(a.format());
  q.add(a);
  q.sub(b);
  return q.round();
}
inline Posit operator*(const Posit& a, const Posit& b) {
  Quire q(a.format());
  q.fma(a, b);
  return q.round();
}
// Division goes through the 64-bit extended quotient, so it can round twice.
inline Posit operator/(const Posit& a, const Posit& b) {
  if (!(a.format() == b.format())) throw FormatError("posit division across formats");
  if (a.is_nar() || b.is_nar() || b.is_zero()) return Posit::nar(a.format());
  return encode(a.to_long_double() / b.to_long_double(), a.format());
}
inline Posit& operator+=(Posit& a, const Posit& b) { return a = a + b; }
inline Posit& operator-=(Posit& a, const Posit& b) { return a = a - b; }
inline Posit& operator*=(Posit& a, const Posit& b) { return a = a * b; }

inline bool operator<(const Posit& a, const Posit& b) { return a.signed_bits() < b.signed_bits(); }

}  // namespace admkit
