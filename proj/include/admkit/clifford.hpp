#pragma once

// Signatures, blades, grade sets and Cayley tables for Cl(p,q,r).
//
// Basis vector i is bit i of a blade mask. The first r vectors are degenerate
// (e0 in PGA), then p square to +1, then q square to -1.

#include <admkit/errors.hpp>

#include <array>
#include <bit>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

namespace admkit {

using Blade = uint32_t;

inline int grade_of(Blade b) { return std::popcount(b); }

struct Signature {
  int p = 3;
  int q = 0;
  int r = 0;

  int dims() const { return p + q + r; }
  int blade_count() const { return 1 << dims(); }

  void validate() const {
    if (p < 0 || q < 0 || r < 0) throw SignatureMismatch("negative signature count");
    if (dims() > 5) throw SignatureMismatch("signature " + to_string() + " exceeds 5 generators");
  }

  // Square of basis vector i: 0, +1 or -1.
  int metric(int i) const {
    if (i < r) return 0;
    if (i < r + p) return 1;
    return -1;
  }

  std::string to_string() const { return std::to_string(p) + "," + std::to_string(q) + "," + std::to_string(r); }

  // Basis labels start at e0 when the algebra has a degenerate vector, e1 otherwise.
  int first_label() const { return r > 0 ? 0 : 1; }

  std::string blade_name(Blade b) const {
    if (b == 0) return "1";
    std::string s = "e";
    for (int i = 0; i < dims(); ++i)
      if (b & (Blade{1} << i)) s += std::to_string(i + first_label());
    return s;
  }

  Blade parse_blade(std::string_view name) const {
    if (name == "1" || name == "s") return 0;
    if (name.size() < 2 || name[0] != 'e') throw ParseError("bad blade name '" + std::string(name) + "'");
    Blade b = 0;
    for (std::size_t i = 1; i < name.size(); ++i) {
      const int idx = (name[i] - '0') - first_label();
      if (name[i] < '0' || name[i] > '9' || idx < 0 || idx >= dims())
        throw ParseError("blade '" + std::string(name) + "' not in Cl(" + to_string() + ")");
      const Blade bit = Blade{1} << idx;
      if (b & bit) throw ParseError("repeated basis vector in blade '" + std::string(name) + "'");
      b |= bit;
    }
    return b;
  }

  bool operator==(const Signature&) const = default;
  auto operator<=>(const Signature&) const = default;
};

// Set of grades 0..5 as a bitmask.
class GradeSet {
 public:
  constexpr GradeSet() = default;
  constexpr explicit GradeSet(uint32_t bits) : bits_(bits) {}
  GradeSet(std::initializer_list<int> grades) {
    for (int g : grades) insert(g);
  }

  static GradeSet all(int dims) { return GradeSet((1u << (dims + 1)) - 1); }
  static GradeSet even(int dims) {
    GradeSet s;
    for (int g = 0; g <= dims; g += 2) s.insert(g);
    return s;
  }
  // "0,2" style list; empty string is the empty set.
  static GradeSet parse(std::string_view text) {
    GradeSet s;
    std::size_t i = 0;
    while (i < text.size()) {
      while (i < text.size() && (text[i] == ',' || text[i] == ' ' || text[i] == '{' || text[i] == '}')) ++i;
      if (i >= text.size()) break;
      if (text[i] < '0' || text[i] > '5') throw ParseError("bad grade list '" + std::string(text) + "'");
      s.insert(text[i] - '0');
      ++i;
    }
    return s;
  }

  bool contains(int g) const { return g >= 0 && g < 32 && ((bits_ >> g) & 1); }
  void insert(int g) {
    if (g < 0 || g > 5) throw GradeError("grade " + std::to_string(g) + " out of range");
    bits_ |= 1u << g;
  }
  bool empty() const { return bits_ == 0; }
  uint32_t bits() const { return bits_; }
  bool subset_of(GradeSet o) const { return (bits_ & ~o.bits_) == 0; }
  int max_grade() const { return bits_ == 0 ? -1 : 31 - std::countl_zero(bits_); }

  std::vector<int> to_vector() const {
    std::vector<int> v;
    for (int g = 0; g < 32; ++g)
      if (contains(g)) v.push_back(g);
    return v;
  }
  std::string to_string() const {
    std::string s;
    for (int g : to_vector()) {
      if (!s.empty()) s += ',';
      s += std::to_string(g);
    }
    return s;
  }

  GradeSet operator|(GradeSet o) const { return GradeSet(bits_ | o.bits_); }
  GradeSet operator&(GradeSet o) const { return GradeSet(bits_ & o.bits_); }
  bool operator==(const GradeSet&) const = default;

 private:
  uint32_t bits_ = 0;
};

struct CayleyEntry {
  Blade out = 0;
  int sign = 0;  // -1, 0 or +1; 0 is a structural zero
};

class CayleyTable {
 public:
  explicit CayleyTable(Signature sig) : sig_(sig), n_(sig.blade_count()), entries_(n_ * n_) {
    sig.validate();
    for (Blade a = 0; a < static_cast<Blade>(n_); ++a) {
      for (Blade b = 0; b < static_cast<Blade>(n_); ++b) entries_[a * n_ + b] = compute(a, b);
    }
    for (Blade a = 0; a < static_cast<Blade>(n_); ++a) {
      for (Blade b = 0; b < static_cast<Blade>(n_); ++b) {
        const CayleyEntry& e = at(a, b);
        if (e.sign != 0) reach_[grade_of(a)][grade_of(b)] |= 1u << grade_of(e.out);
      }
    }
  }

  const Signature& signature() const { return sig_; }
  int blade_count() const { return n_; }
  const CayleyEntry& at(Blade a, Blade b) const { return entries_[a * n_ + b]; }

  // Output grades reachable through nonzero entries from a grade-j by grade-k pair.
  GradeSet reach(int j, int k) const { return GradeSet(reach_[j][k]); }

 private:
  CayleyEntry compute(Blade a, Blade b) const {
    // Moving each vector of b left past the higher-indexed vectors of a.
    int swaps = 0;
    for (int i = 0; i < sig_.dims(); ++i) {
      if (b & (Blade{1} << i)) swaps += std::popcount(a >> (i + 1));
    }
    int sign = (swaps & 1) ? -1 : 1;
    const Blade common = a & b;
    for (int i = 0; i < sig_.dims(); ++i) {
      if (common & (Blade{1} << i)) sign *= sig_.metric(i);
    }
    return CayleyEntry{a ^ b, sign};
  }

  Signature sig_;
  int n_;
  std::vector<CayleyEntry> entries_;
  std::array<std::array<uint32_t, 6>, 6> reach_{};
};

inline CayleyTable build_cayley(Signature sig) { return CayleyTable(sig); }

// Shared, immutable table per signature.
inline std::shared_ptr<const CayleyTable> cayley(Signature sig) {
  static std::mutex mu;
  static std::map<Signature, std::shared_ptr<const CayleyTable>> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(sig);
  if (it != cache.end()) return it->second;
  auto t = std::make_shared<const CayleyTable>(sig);
  cache.emplace(sig, t);
  return t;
}

inline GradeSet grade_infer(GradeSet a, GradeSet b, Signature sig) {
  const auto table = cayley(sig);
  GradeSet out;
  for (int j : a.to_vector()) {
    if (j > sig.dims()) continue;
    for (int k : b.to_vector()) {
      if (k > sig.dims()) continue;
      out = out | table->reach(j, k);
    }
  }
  return out;
}

// Blades of the given grades in ascending mask order, with the reverse lookup.
struct BladeLayout {
  std::vector<Blade> blades;
  std::array<int8_t, 32> slot{};

  static const BladeLayout& get(int dims, GradeSet grades) {
    static const auto layouts = [] {
      std::vector<BladeLayout> all(6 * 64);
      for (int n = 0; n <= 5; ++n) {
        for (uint32_t g = 0; g < 64; ++g) {
          BladeLayout& l = all[n * 64 + g];
          l.slot.fill(-1);
          for (Blade b = 0; b < (Blade{1} << n); ++b) {
            if ((g >> grade_of(b)) & 1) {
              l.slot[b] = static_cast<int8_t>(l.blades.size());
              l.blades.push_back(b);
            }
          }
        }
      }
      return all;
    }();
    return layouts[dims * 64 + (grades.bits() & 63)];
  }
};

// Nonzero Cayley entries between blades of two grade sets: the sparsity
// structure a product layer instantiates.
struct EntryTriple {
  Blade a;
  Blade b;
  Blade out;
  int sign;
  auto operator<=>(const EntryTriple&) const = default;
};

inline std::vector<EntryTriple> instantiated_entries(Signature sig, GradeSet ga, GradeSet gb) {
  const auto table = cayley(sig);
  std::vector<EntryTriple> v;
  for (Blade a : BladeLayout::get(sig.dims(), ga).blades) {
    for (Blade b : BladeLayout::get(sig.dims(), gb).blades) {
      const CayleyEntry& e = table->at(a, b);
      if (e.sign != 0) v.push_back({a, b, e.out, e.sign});
    }
  }
  return v;
}

struct SliceSparsity {
  int grade_a = 0;
  int grade_b = 0;
  int grade_out = 0;
  uint64_t total = 0;
  uint64_t nonzero = 0;
  double sparsity() const { return total == 0 ? 1.0 : 1.0 - static_cast<double>(nonzero) / static_cast<double>(total); }
};

struct SparsityReport {
  Signature signature;
  uint64_t total = 0;    // (2^n)^3 tensor entries
  uint64_t nonzero = 0;  // entries (i, j, k) with Cayley(i, j) = (k, +-1)
  std::vector<SliceSparsity> slices;
  double sparsity() const { return 1.0 - static_cast<double>(nonzero) / static_cast<double>(total); }
};

inline SparsityReport sparsity_report(Signature sig) {
  sig.validate();
  const auto table = cayley(sig);
  const int n = sig.dims();
  const uint64_t N = static_cast<uint64_t>(sig.blade_count());
  SparsityReport rep;
  rep.signature = sig;
  rep.total = N * N * N;
  std::vector<uint64_t> counts((n + 1) * (n + 1) * (n + 1), 0);
  for (Blade a = 0; a < N; ++a) {
    for (Blade b = 0; b < N; ++b) {
      const CayleyEntry& e = table->at(a, b);
      if (e.sign == 0) continue;
      ++rep.nonzero;
      ++counts[(grade_of(a) * (n + 1) + grade_of(b)) * (n + 1) + grade_of(e.out)];
    }
  }
  auto binom = [](int m, int k) {
    uint64_t r = 1;
    for (int i = 1; i <= k; ++i) r = r * static_cast<uint64_t>(m - k + i) / static_cast<uint64_t>(i);
    return r;
  };
  for (int ga = 0; ga <= n; ++ga)
    for (int gb = 0; gb <= n; ++gb)
      for (int go = 0; go <= n; ++go)
        rep.slices.push_back({ga, gb, go, binom(n, ga) * binom(n, gb) * binom(n, go),
                              counts[(ga * (n + 1) + gb) * (n + 1) + go]});
  return rep;
}

}  // namespace admkit
