#pragma once

// Grade-masked multivectors. Storage exists only for blades whose grade is in
// the declared grade set; writing any other blade is a GradeError.

#include <admkit/clifford.hpp>
#include <admkit/dimension.hpp>
#include <admkit/memory.hpp>
#include <admkit/scalar.hpp>

#include <algorithm>
#include <cmath>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace admkit {

// Counted coefficient storage.
template <class T>
class CoeffStorage {
 public:
  CoeffStorage() = default;
  CoeffStorage(std::size_t n, const T& fill) : v_(n, fill) { memory::acquire(v_.size()); }
  CoeffStorage(const CoeffStorage& o) : v_(o.v_) { memory::acquire(v_.size()); }
  CoeffStorage(CoeffStorage&& o) noexcept : v_(std::move(o.v_)) { o.v_.clear(); }
  CoeffStorage& operator=(const CoeffStorage& o) {
    if (this != &o) {
      memory::release(v_.size());
      v_ = o.v_;
      memory::acquire(v_.size());
    }
    return *this;
  }
  CoeffStorage& operator=(CoeffStorage&& o) noexcept {
    if (this != &o) {
      memory::release(v_.size());
      v_ = std::move(o.v_);
      o.v_.clear();
    }
    return *this;
  }
  ~CoeffStorage() { memory::release(v_.size()); }

  std::size_t size() const { return v_.size(); }
  T& operator[](std::size_t i) { return v_[i]; }
  const T& operator[](std::size_t i) const { return v_[i]; }
  std::span<const T> view() const { return v_; }

 private:
  std::vector<T> v_;
};

// Arithmetic performed by the product kernels on this thread.
struct ProductStats {
  uint64_t multiplies = 0;        // accumulated blade-pair products
  uint64_t structural_skips = 0;  // sign-0 Cayley entries met (no arithmetic)
  uint64_t elided = 0;            // nonzero entries landing outside the output storage
};

inline ProductStats& product_stats() {
  thread_local ProductStats s;
  return s;
}

template <class T>
class Multivector {
 public:
  using traits = scalar_traits<T>;
  using context = typename traits::context;

  Multivector() = default;
  Multivector(Signature sig, GradeSet grades, context ctx, DimVec dim = {})
      : sig_(sig), grades_(grades), ctx_(ctx), dim_(std::move(dim)) {
    sig.validate();
    if (!grades.subset_of(GradeSet::all(sig.dims())))
      throw GradeError("grade set {" + grades.to_string() + "} exceeds Cl(" + sig.to_string() + ")");
    layout_ = &BladeLayout::get(sig.dims(), grades);
    c_ = CoeffStorage<T>(layout_->blades.size(), traits::zero(ctx));
  }

  static Multivector scalar(long double v, Signature sig, context ctx, DimVec dim = {}) {
    Multivector m(sig, GradeSet{0}, ctx, std::move(dim));
    m.c_[0] = traits::from_real(v, ctx);
    return m;
  }

  const Signature& signature() const { return sig_; }
  GradeSet grades() const { return grades_; }
  const context& ctx() const { return ctx_; }
  const DimVec& dim() const { return dim_; }
  void set_dim(DimVec d) { dim_ = std::move(d); }

  std::size_t size() const { return c_.size(); }
  std::span<const Blade> blades() const {
    return layout_ ? std::span<const Blade>(layout_->blades) : std::span<const Blade>();
  }
  std::span<const T> coeffs() const { return c_.view(); }
  const T& coeff(std::size_t slot) const { return c_[slot]; }
  T& coeff(std::size_t slot) { return c_[slot]; }

  bool has(Blade b) const { return layout_ && b < 32 && layout_->slot[b] >= 0; }
  int slot_of(Blade b) const { return has(b) ? layout_->slot[b] : -1; }

  // Absent blades read as zero.
  T get(Blade b) const { return has(b) ? c_[layout_->slot[b]] : traits::zero(ctx_); }
  long double real(Blade b) const { return traits::to_real(get(b)); }

  void set(Blade b, const T& v) {
    if (!has(b))
      throw GradeError("blade " + sig_.blade_name(b) + " has no storage in grade set {" + grades_.to_string() + "}");
    c_[layout_->slot[b]] = v;
  }
  void set_real(Blade b, long double v) { set(b, traits::from_real(v, ctx_)); }

  std::string to_string() const {
    std::ostringstream os;
    bool first = true;
    for (std::size_t i = 0; i < size(); ++i) {
      const long double v = traits::to_real(c_[i]);
      if (v == 0) continue;
      if (!first) os << " + ";
      os << static_cast<double>(v);
      if (blades()[i] != 0) os << '*' << sig_.blade_name(blades()[i]);
      first = false;
    }
    return first ? "0" : os.str();
  }

 private:
  Signature sig_{};
  GradeSet grades_{};
  context ctx_{};
  DimVec dim_{};
  const BladeLayout* layout_ = nullptr;
  CoeffStorage<T> c_;
};

// Same shape, dimension and bit-identical coefficients.
template <class T>
bool identical(const Multivector<T>& a, const Multivector<T>& b) {
  if (!(a.signature() == b.signature()) || !(a.grades() == b.grades()) || !(a.ctx() == b.ctx()) || a.dim() != b.dim())
    return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!scalar_traits<T>::same(a.coeff(i), b.coeff(i))) return false;
  return true;
}

namespace detail {

template <class T>
void check_compatible(const Multivector<T>& a, const Multivector<T>& b) {
  if (!(a.signature() == b.signature()))
    throw SignatureMismatch("Cl(" + a.signature().to_string() + ") vs Cl(" + b.signature().to_string() + ")");
  if (!(a.ctx() == b.ctx()))
    throw FormatError("operands in " + scalar_traits<T>::describe(a.ctx()) + " and " +
                      scalar_traits<T>::describe(b.ctx()));
}

template <class T>
using Accumulators = std::vector<typename scalar_traits<T>::accumulator>;

template <class T>
Accumulators<T> make_accumulators(const Multivector<T>& out) {
  return Accumulators<T>(out.size(), scalar_traits<T>::make_accumulator(out.ctx()));
}

// accs[slot(k)] += sign * a_i * b_j for every nonzero Cayley entry (i, j) -> k
// whose output blade has storage in out.
template <class T>
void accumulate_product(Accumulators<T>& accs, const Multivector<T>& out, const Multivector<T>& a,
                        const Multivector<T>& b, const CayleyTable& table) {
  ProductStats& st = product_stats();
  const auto ab = a.blades();
  const auto bb = b.blades();
  for (std::size_t i = 0; i < ab.size(); ++i) {
    const T& x = a.coeff(i);
    for (std::size_t j = 0; j < bb.size(); ++j) {
      const CayleyEntry& e = table.at(ab[i], bb[j]);
      if (e.sign == 0) {
        ++st.structural_skips;
        continue;
      }
      const int s = out.slot_of(e.out);
      if (s < 0) {
        ++st.elided;
        continue;
      }
      ++st.multiplies;
      if (e.sign > 0)
        accs[s].fma(x, b.coeff(j));
      else
        accs[s].fms(x, b.coeff(j));
    }
  }
}

template <class T>
void round_into(Multivector<T>& out, const Accumulators<T>& accs) {
  for (std::size_t s = 0; s < out.size(); ++s) out.coeff(s) = accs[s].round();
}

}  // namespace detail

// a*b with storage restricted to out_grades; each stored coefficient is one
// exact accumulation rounded once.
template <class T>
Multivector<T> product_into(GradeSet out_grades, const Multivector<T>& a, const Multivector<T>& b) {
  detail::check_compatible(a, b);
  Multivector<T> out(a.signature(), out_grades, a.ctx(), a.dim() * b.dim());
  auto accs = detail::make_accumulators(out);
  detail::accumulate_product(accs, out, a, b, *cayley(a.signature()));
  detail::round_into(out, accs);
  return out;
}

template <class T>
Multivector<T> geometric_product(const Multivector<T>& a, const Multivector<T>& b) {
  detail::check_compatible(a, b);
  return product_into(grade_infer(a.grades(), b.grades(), a.signature()), a, b);
}

template <class T>
Multivector<T> reverse(const Multivector<T>& a) {
  Multivector<T> out = a;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const int g = grade_of(out.blades()[i]);
    if ((g * (g - 1) / 2) % 2 == 1) out.coeff(i) = scalar_traits<T>::neg(out.coeff(i));
  }
  return out;
}

template <class T>
Multivector<T> grade_project(const Multivector<T>& a, GradeSet keep) {
  Multivector<T> out(a.signature(), a.grades() & keep, a.ctx(), a.dim());
  for (std::size_t i = 0; i < out.size(); ++i) out.coeff(i) = a.get(out.blades()[i]);
  return out;
}

namespace detail {

template <class T, class Op>
Multivector<T> combine(const Multivector<T>& a, const Multivector<T>& b, Op op) {
  check_compatible(a, b);
  if (a.dim() != b.dim())
    throw DimensionError("adding " + a.dim().to_string() + " to " + b.dim().to_string());
  Multivector<T> out(a.signature(), a.grades() | b.grades(), a.ctx(), a.dim());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const Blade bl = out.blades()[i];
    out.coeff(i) = op(a.get(bl), b.get(bl));
  }
  return out;
}

}  // namespace detail

template <class T>
Multivector<T> operator+(const Multivector<T>& a, const Multivector<T>& b) {
  const auto& c = a.ctx();
  return detail::combine(a, b, [&](const T& x, const T& y) { return scalar_traits<T>::add(x, y, c); });
}

template <class T>
Multivector<T> operator-(const Multivector<T>& a, const Multivector<T>& b) {
  const auto& c = a.ctx();
  return detail::combine(a, b, [&](const T& x, const T& y) { return scalar_traits<T>::sub(x, y, c); });
}

template <class T>
Multivector<T> scale(const Multivector<T>& a, const T& s, const DimVec& s_dim = {}) {
  Multivector<T> out(a.signature(), a.grades(), a.ctx(), a.dim() * s_dim);
  for (std::size_t i = 0; i < out.size(); ++i) out.coeff(i) = scalar_traits<T>::mul(a.coeff(i), s, a.ctx());
  return out;
}

// Sum of squared coefficients on stored blades whose grade is outside declared.
template <class T>
long double off_grade_energy(const Multivector<T>& x, GradeSet declared) {
  long double e = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (declared.contains(grade_of(x.blades()[i]))) continue;
    const long double v = scalar_traits<T>::to_real(x.coeff(i));
    e += v * v;
  }
  return e;
}

template <class U, class T>
Multivector<U> convert(const Multivector<T>& x, typename scalar_traits<U>::context ctx) {
  Multivector<U> out(x.signature(), x.grades(), ctx, x.dim());
  for (std::size_t i = 0; i < x.size(); ++i)
    out.coeff(i) = scalar_traits<U>::from_real(scalar_traits<T>::to_real(x.coeff(i)), ctx);
  return out;
}

inline constexpr long double kDefaultRotorTolerance = 1.0L / 256;

struct RotorCheck {
  bool pass = false;
  long double residual = 0;  // max(|<RR~>_0 - 1|, max |non-scalar part of RR~|)
};

template <class T>
bool is_even(const Multivector<T>& r) {
  return r.grades().subset_of(GradeSet::even(r.signature().dims()));
}

template <class T>
RotorCheck rotor_check(const Multivector<T>& r, long double tol = kDefaultRotorTolerance) {
  if (!is_even(r)) throw RotorError("rotor has odd grades {" + r.grades().to_string() + "}");
  const Multivector<T> rr = geometric_product(r, reverse(r));
  long double residual = 0;
  for (std::size_t i = 0; i < rr.size(); ++i) {
    const long double v = scalar_traits<T>::to_real(rr.coeff(i));
    residual = std::max(residual, std::fabs(rr.blades()[i] == 0 ? v - 1 : v));
  }
  if (!rr.has(0)) residual = std::max(residual, 1.0L);
  return RotorCheck{residual <= tol, residual};
}

namespace detail {

// R X R~ with output storage limited to X's grades. No rotor validation.
template <class T>
Multivector<T> sandwich_unchecked(const Multivector<T>& r, const Multivector<T>& x) {
  const Multivector<T> rx = geometric_product(r, x);
  Multivector<T> out = product_into(x.grades(), rx, reverse(r));
  out.set_dim(x.dim() * r.dim() * r.dim());
  return out;
}

}  // namespace detail

template <class T>
Multivector<T> sandwich(const Multivector<T>& r, const Multivector<T>& x, long double tol = kDefaultRotorTolerance) {
  detail::check_compatible(r, x);
  const RotorCheck rc = rotor_check(r, tol);
  if (!rc.pass)
    throw RotorError("rotor residual " + std::to_string(static_cast<double>(rc.residual)) + " exceeds tolerance " +
                     std::to_string(static_cast<double>(tol)));
  return detail::sandwich_unchecked(r, x);
}

// exp(-theta/2 * plane). For a Euclidean plane this is cos(theta/2) -
// sin(theta/2) * plane, a rotation by theta; for a degenerate plane it is the
// translator 1 - theta/2 * plane; hyperbolic planes give cosh/sinh.
template <class T>
Multivector<T> make_rotor(Signature sig, Blade plane, long double theta, typename scalar_traits<T>::context ctx) {
  if (grade_of(plane) != 2) throw RotorError("rotor plane must be a bivector");
  const int square = cayley(sig)->at(plane, plane).sign;
  long double c = 1, s = theta / 2;
  if (square < 0) {
    c = std::cos(theta / 2);
    s = std::sin(theta / 2);
  } else if (square > 0) {
    c = std::cosh(theta / 2);
    s = std::sinh(theta / 2);
  }
  Multivector<T> r(sig, GradeSet{0, 2}, ctx);
  r.set_real(0, c);
  r.set_real(plane, -s);
  return r;
}

}  // namespace admkit
