#pragma once

// SI dimension vectors with rational exponents, a unit-literal parser and
// layer-chain consistency checks.

#include <admkit/errors.hpp>

#include <boost/rational.hpp>

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace admkit {

using Exponent = boost::rational<int64_t>;

enum class BaseDim : int { metre = 0, kilogram, second, ampere, kelvin, mole, candela };
inline constexpr int kBaseDims = 7;

class DimVec {
 public:
  DimVec() { e_.fill(Exponent(0)); }

  static DimVec dimensionless() { return DimVec(); }
  static DimVec base(BaseDim d, Exponent power = 1) {
    DimVec v;
    v.e_[static_cast<int>(d)] = power;
    return v;
  }
  // Parses a unit literal such as "kg m^-2 s^-2" or "m^1/2".
  static DimVec parse(std::string_view text);

  const Exponent& operator[](BaseDim d) const { return e_[static_cast<int>(d)]; }
  const std::array<Exponent, kBaseDims>& exponents() const { return e_; }

  bool is_dimensionless() const {
    for (const auto& x : e_)
      if (x.numerator() != 0) return false;
    return true;
  }

  DimVec operator*(const DimVec& o) const {
    DimVec r;
    for (int i = 0; i < kBaseDims; ++i) r.e_[i] = e_[i] + o.e_[i];
    return r;
  }
  DimVec operator/(const DimVec& o) const {
    DimVec r;
    for (int i = 0; i < kBaseDims; ++i) r.e_[i] = e_[i] - o.e_[i];
    return r;
  }
  DimVec inverse() const { return DimVec() / *this; }
  DimVec pow(Exponent p) const {
    DimVec r;
    for (int i = 0; i < kBaseDims; ++i) r.e_[i] = e_[i] * p;
    return r;
  }

  bool operator==(const DimVec& o) const { return e_ == o.e_; }
  bool operator!=(const DimVec& o) const { return !(*this == o); }
  bool operator<(const DimVec& o) const { return e_ < o.e_; }

  // Canonical literal: kg m s A K mol cd order, zero exponents omitted, "1"
  // for dimensionless. parse(to_string()) round-trips.
  std::string to_string() const;

 private:
  std::array<Exponent, kBaseDims> e_;
};

enum class DimOp { mul, div };

inline DimVec dim_combine(const DimVec& a, const DimVec& b, DimOp op) { return op == DimOp::mul ? a * b : a / b; }
inline DimVec dim_pow(const DimVec& a, Exponent p) { return a.pow(p); }

namespace detail {

struct UnitSymbol {
  std::string_view symbol;
  std::array<int, kBaseDims> exps;  // m kg s A K mol cd
};

// Scale prefixes are accepted on the listed symbols but only the dimension is kept.
inline constexpr UnitSymbol kUnits[] = {
    {"m", {1, 0, 0, 0, 0, 0, 0}},    {"kg", {0, 1, 0, 0, 0, 0, 0}},  {"s", {0, 0, 1, 0, 0, 0, 0}},
    {"A", {0, 0, 0, 1, 0, 0, 0}},    {"K", {0, 0, 0, 0, 1, 0, 0}},   {"mol", {0, 0, 0, 0, 0, 1, 0}},
    {"cd", {0, 0, 0, 0, 0, 0, 1}},   {"g", {0, 1, 0, 0, 0, 0, 0}},   {"mm", {1, 0, 0, 0, 0, 0, 0}},
    {"cm", {1, 0, 0, 0, 0, 0, 0}},   {"km", {1, 0, 0, 0, 0, 0, 0}},  {"ms", {0, 0, 1, 0, 0, 0, 0}},
    {"us", {0, 0, 1, 0, 0, 0, 0}},   {"mA", {0, 0, 0, 1, 0, 0, 0}},  {"Hz", {0, 0, -1, 0, 0, 0, 0}},
    {"kHz", {0, 0, -1, 0, 0, 0, 0}}, {"N", {1, 1, -2, 0, 0, 0, 0}},  {"Pa", {-1, 1, -2, 0, 0, 0, 0}},
    {"J", {2, 1, -2, 0, 0, 0, 0}},   {"W", {2, 1, -3, 0, 0, 0, 0}},  {"C", {0, 0, 1, 1, 0, 0, 0}},
    {"V", {2, 1, -3, -1, 0, 0, 0}},  {"mV", {2, 1, -3, -1, 0, 0, 0}}, {"ohm", {2, 1, -3, -2, 0, 0, 0}},
};

inline Exponent parse_exponent(std::string_view s, std::string_view whole) {
  if (!s.empty() && s.front() == '(' && s.back() == ')') s = s.substr(1, s.size() - 2);
  auto parse_int = [&](std::string_view t) -> int64_t {
    if (t.empty()) throw ParseError("bad exponent in unit literal '" + std::string(whole) + "'");
    std::size_t i = 0;
    bool neg = false;
    if (t[0] == '-' || t[0] == '+') {
      neg = t[0] == '-';
      i = 1;
    }
    if (i == t.size()) throw ParseError("bad exponent in unit literal '" + std::string(whole) + "'");
    int64_t v = 0;
    for (; i < t.size(); ++i) {
      if (t[i] < '0' || t[i] > '9') throw ParseError("bad exponent in unit literal '" + std::string(whole) + "'");
      v = v * 10 + (t[i] - '0');
    }
    return neg ? -v : v;
  };
  const auto slash = s.find('/');
  if (slash == std::string_view::npos) return Exponent(parse_int(s));
  const int64_t den = parse_int(s.substr(slash + 1));
  if (den == 0) throw ParseError("zero denominator in unit literal '" + std::string(whole) + "'");
  return Exponent(parse_int(s.substr(0, slash)), den);
}

inline std::string exponent_string(const Exponent& e) {
  std::ostringstream os;
  os << e.numerator();
  if (e.denominator() != 1) os << '/' << e.denominator();
  return os.str();
}

}  // namespace detail

inline DimVec DimVec::parse(std::string_view text) {
  DimVec out;
  std::size_t i = 0;
  bool any = false;
  while (i < text.size()) {
    while (i < text.size() && (text[i] == ' ' || text[i] == '\t' || text[i] == '*' || text[i] == '.')) ++i;
    if (i >= text.size()) break;
    std::size_t j = i;
    while (j < text.size() && text[j] != ' ' && text[j] != '\t' && text[j] != '*') ++j;
    const std::string_view tok = text.substr(i, j - i);
    i = j;
    any = true;
    if (tok == "1") continue;
    const auto caret = tok.find('^');
    const std::string_view sym = tok.substr(0, caret);
    const Exponent power = caret == std::string_view::npos ? Exponent(1) : detail::parse_exponent(tok.substr(caret + 1), text);
    bool found = false;
    for (const auto& u : detail::kUnits) {
      if (u.symbol != sym) continue;
      for (int k = 0; k < kBaseDims; ++k) out.e_[k] += power * u.exps[k];
      found = true;
      break;
    }
    if (!found) throw ParseError("unknown unit '" + std::string(sym) + "' in '" + std::string(text) + "'");
  }
  if (!any) return DimVec();
  return out;
}

inline std::string DimVec::to_string() const {
  static constexpr std::pair<BaseDim, const char*> order[] = {
      {BaseDim::kilogram, "kg"}, {BaseDim::metre, "m"},   {BaseDim::second, "s"}, {BaseDim::ampere, "A"},
      {BaseDim::kelvin, "K"},    {BaseDim::mole, "mol"}, {BaseDim::candela, "cd"}};
  std::string s;
  for (auto [d, sym] : order) {
    const Exponent& e = (*this)[d];
    if (e.numerator() == 0) continue;
    if (!s.empty()) s += ' ';
    s += sym;
    if (e != Exponent(1)) s += "^" + detail::exponent_string(e);
  }
  return s.empty() ? "1" : s;
}

inline std::ostream& operator<<(std::ostream& os, const DimVec& d) { return os << "<" << d.to_string() << ">"; }

struct LayerDims {
  DimVec in;
  DimVec out;
};

// Outcome of a chain check. On mismatch, boundary is the index of the layer
// whose output disagrees with the next layer's input.
struct ChainReport {
  bool ok = true;
  std::size_t boundary = 0;
  DimVec left_out;
  DimVec right_in;

  explicit operator bool() const { return ok; }
  std::string message() const {
    if (ok) return "ok";
    std::ostringstream os;
    os << "dimension mismatch at boundary " << boundary << "/" << boundary + 1 << ": layer " << boundary
       << " produces " << left_out << " but layer " << boundary + 1 << " expects " << right_in;
    return os.str();
  }
};

inline ChainReport check_chain(const std::vector<LayerDims>& layers) {
  if (layers.empty()) throw DimensionError("check_chain needs at least one layer");
  for (std::size_t i = 0; i + 1 < layers.size(); ++i) {
    if (layers[i].out != layers[i + 1].in) return ChainReport{false, i, layers[i].out, layers[i + 1].in};
  }
  return ChainReport{};
}

}  // namespace admkit
