#pragma once

// Scalar back ends for the algebra: posits with a quire, or float64 ("shadow
// mode") with optional truncation to a short fraction after every multiply-add.

#include <admkit/quire.hpp>

#include <cmath>
#include <cstring>
#include <string>

namespace admkit {

struct Float64Context {
  // 0 keeps full double precision; f > 0 truncates results to f fraction bits.
  int fraction_bits = 0;
  bool operator==(const Float64Context&) const = default;
  std::string to_string() const {
    return fraction_bits == 0 ? "float64" : "float64-trunc" + std::to_string(fraction_bits);
  }
};

// Truncates the significand of x toward zero, keeping f bits after the leading one.
inline double truncate_fraction(double x, int f) {
  if (f <= 0 || x == 0.0 || !std::isfinite(x)) return x;
  int e = 0;
  const double m = std::frexp(x, &e);  // |m| in [0.5, 1)
  return std::ldexp(std::trunc(std::ldexp(m, f + 1)), e - f - 1);
}

class Float64Accumulator {
 public:
  explicit Float64Accumulator(Float64Context c = {}) : ctx_(c) {}
  void fma(double a, double b) { acc_ = truncate_fraction(acc_ + a * b, ctx_.fraction_bits); }
  void fms(double a, double b) { acc_ = truncate_fraction(acc_ - a * b, ctx_.fraction_bits); }
  void add(double a) { acc_ = truncate_fraction(acc_ + a, ctx_.fraction_bits); }
  void sub(double a) { acc_ = truncate_fraction(acc_ - a, ctx_.fraction_bits); }
  void merge(const Float64Accumulator& o) { add(o.acc_); }
  void clear() { acc_ = 0.0; }
  double round() const { return acc_; }

 private:
  Float64Context ctx_;
  double acc_ = 0.0;
};

template <class T>
struct scalar_traits;

template <>
struct scalar_traits<Posit> {
  using context = PositFormat;
  using accumulator = Quire;
  static Posit zero(const context& c) { return Posit::zero(c); }
  static Posit from_real(long double x, const context& c) { return encode(x, c); }
  static long double to_real(const Posit& x) { return decode(x); }
  static accumulator make_accumulator(const context& c) { return Quire(c); }
  static Posit add(const Posit& a, const Posit& b, const context&) { return a + b; }
  static Posit sub(const Posit& a, const Posit& b, const context&) { return a - b; }
  static Posit mul(const Posit& a, const Posit& b, const context&) { return a * b; }
  static Posit neg(const Posit& a) { return -a; }
  static bool is_zero(const Posit& a) { return a.is_zero(); }
  static bool same(const Posit& a, const Posit& b) { return a == b; }
  static std::string describe(const context& c) { return c.to_string(); }
};

template <>
struct scalar_traits<double> {
  using context = Float64Context;
  using accumulator = Float64Accumulator;
  static double zero(const context&) { return 0.0; }
  static double from_real(long double x, const context& c) {
    return truncate_fraction(static_cast<double>(x), c.fraction_bits);
  }
  static long double to_real(double x) { return x; }
  static accumulator make_accumulator(const context& c) { return Float64Accumulator(c); }
  static double add(double a, double b, const context& c) { return truncate_fraction(a + b, c.fraction_bits); }
  static double sub(double a, double b, const context& c) { return truncate_fraction(a - b, c.fraction_bits); }
  static double mul(double a, double b, const context& c) { return truncate_fraction(a * b, c.fraction_bits); }
  static double neg(double a) { return -a; }
  static bool is_zero(double a) { return a == 0.0; }
  // Bitwise identity, so that -0.0 and 0.0 differ and NaNs compare by payload.
  static bool same(double a, double b) { return std::memcmp(&a, &b, sizeof(double)) == 0; }
  static std::string describe(const context& c) { return c.to_string(); }
};

}  // namespace admkit
