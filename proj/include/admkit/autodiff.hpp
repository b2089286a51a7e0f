#pragma once

// Forward-mode differentiation over grade-masked multivectors.
//
// A DualMultivector carries a tangent with exactly the primal's grade set. A
// LossGraph is a chain of product / sandwich / projection / scalar
// nonlinearity layers ending in a squared-error loss. Trainable weights live
// outside the graph in a Params vector so the same graph serves inference,
// dual passes and finite differences.

#include <admkit/multivector.hpp>

#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace admkit {

template <class T>
struct DualMultivector {
  Multivector<T> primal;
  Multivector<T> tangent;

  DualMultivector(Multivector<T> p, Multivector<T> t) : primal(std::move(p)), tangent(std::move(t)) {
    detail::check_compatible(primal, tangent);
    if (!(primal.grades() == tangent.grades()))
      throw GradeError("tangent grades {" + tangent.grades().to_string() + "} differ from primal grades {" +
                       primal.grades().to_string() + "}");
  }
};

// (a, da)(b, db) = (ab, da b + a db); the tangent of each output blade is a
// single accumulation over both product sets.
template <class T>
DualMultivector<T> dual_product(const DualMultivector<T>& a, const DualMultivector<T>& b) {
  detail::check_compatible(a.primal, b.primal);
  const Signature& sig = a.primal.signature();
  const GradeSet out_grades = grade_infer(a.primal.grades(), b.primal.grades(), sig);
  const CayleyTable& table = *cayley(sig);
  Multivector<T> p(sig, out_grades, a.primal.ctx(), a.primal.dim() * b.primal.dim());
  Multivector<T> t(sig, out_grades, a.primal.ctx(), a.tangent.dim() * b.primal.dim());
  auto pa = detail::make_accumulators(p);
  detail::accumulate_product(pa, p, a.primal, b.primal, table);
  detail::round_into(p, pa);
  auto ta = detail::make_accumulators(t);
  detail::accumulate_product(ta, t, a.tangent, b.primal, table);
  detail::accumulate_product(ta, t, a.primal, b.tangent, table);
  detail::round_into(t, ta);
  return DualMultivector<T>(std::move(p), std::move(t));
}

// Dual times constant: the constant contributes no tangent storage.
template <class T>
DualMultivector<T> dual_product(const DualMultivector<T>& a, const Multivector<T>& b) {
  return DualMultivector<T>(geometric_product(a.primal, b), product_into(grade_infer(a.primal.grades(), b.grades(), b.signature()), a.tangent, b));
}

enum class LayerKind { product, sandwich, project, nonlinearity };
enum class Activation { identity, tanh, softplus };

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::identity:
      return "identity";
    case Activation::tanh:
      return "tanh";
    case Activation::softplus:
      return "softplus";
  }
  return "?";
}

inline Activation parse_activation(std::string_view s) {
  if (s == "identity") return Activation::identity;
  if (s == "tanh") return Activation::tanh;
  if (s == "softplus") return Activation::softplus;
  throw ParseError("unknown activation '" + std::string(s) + "'");
}

namespace detail {

inline long double activate(Activation a, long double x) {
  switch (a) {
    case Activation::identity:
      return x;
    case Activation::tanh:
      return std::tanh(x);
    case Activation::softplus:
      return x > 30 ? x : std::log1p(std::exp(x));
  }
  return x;
}

inline long double activate_slope(Activation a, long double x) {
  switch (a) {
    case Activation::identity:
      return 1;
    case Activation::tanh: {
      const long double t = std::tanh(x);
      return 1 - t * t;
    }
    case Activation::softplus:
      return 1 / (1 + std::exp(-x));
  }
  return 1;
}

}  // namespace detail

template <class T>
using Params = std::vector<Multivector<T>>;

template <class T>
struct Sample {
  Multivector<T> x;
  Multivector<T> y;
};

template <class T>
using Dataset = std::vector<Sample<T>>;

template <class T>
struct Layer {
  LayerKind kind = LayerKind::product;
  std::string name;
  LayerDims dims;
  GradeSet weight_grades;           // product: declared grades of the trainable weight
  DimVec weight_dim;                // product: declared dimension of the weight
  std::optional<Multivector<T>> rotor;  // sandwich: frozen rotor
  GradeSet keep;                    // project
  Activation activation = Activation::identity;
};

template <class T>
class LossGraph {
 public:
  using context = typename scalar_traits<T>::context;

  LossGraph(Signature sig, context ctx, GradeSet input_grades, DimVec input_dim = {})
      : sig_(sig), ctx_(ctx), input_grades_(input_grades), input_dim_(std::move(input_dim)) {
    sig.validate();
  }

  const Signature& signature() const { return sig_; }
  const context& ctx() const { return ctx_; }
  GradeSet input_grades() const { return input_grades_; }
  const DimVec& input_dim() const { return input_dim_; }
  const std::vector<Layer<T>>& layers() const { return layers_; }
  std::size_t trainable_count() const { return trainable_; }

  // Trainable product h -> W h. With no declared in/out the chain continues
  // from the previous layer.
  void add_product(std::string name, GradeSet grades, DimVec weight_dim, std::optional<LayerDims> declared = {}) {
    Layer<T> l;
    l.kind = LayerKind::product;
    l.name = std::move(name);
    l.weight_grades = grades;
    l.weight_dim = weight_dim;
    l.dims = declared ? *declared : LayerDims{current_out(), weight_dim * current_out()};
    if (l.dims.out != weight_dim * l.dims.in)
      throw DimensionError("layer " + l.name + ": weight " + weight_dim.to_string() + " maps " +
                           l.dims.in.to_string() + " to " + (weight_dim * l.dims.in).to_string() + ", not " +
                           l.dims.out.to_string());
    if (!grades.subset_of(GradeSet::all(sig_.dims()))) throw GradeError("layer " + l.name + ": grades out of range");
    layers_.push_back(std::move(l));
    ++trainable_;
  }

  // Frozen rotor sandwich h -> R h R~. The rotor is checked here, once.
  void add_sandwich(std::string name, Multivector<T> rotor, long double tol = kDefaultRotorTolerance) {
    if (!(rotor.signature() == sig_)) throw SignatureMismatch("rotor " + name + " signature");
    if (!rotor.dim().is_dimensionless()) throw DimensionError("rotor " + name + " must be dimensionless");
    const RotorCheck rc = rotor_check(rotor, tol);
    if (!rc.pass)
      throw RotorError("rotor " + name + " residual " + std::to_string(static_cast<double>(rc.residual)));
    Layer<T> l;
    l.kind = LayerKind::sandwich;
    l.name = std::move(name);
    l.dims = {current_out(), current_out()};
    l.rotor = std::move(rotor);
    layers_.push_back(std::move(l));
  }

  void add_project(std::string name, GradeSet keep) {
    Layer<T> l;
    l.kind = LayerKind::project;
    l.name = std::move(name);
    l.keep = keep;
    l.dims = {current_out(), current_out()};
    layers_.push_back(std::move(l));
  }

  // Scalar nonlinearity on the grade-0 component; other grades pass through.
  void add_nonlinearity(std::string name, Activation a) {
    if (a != Activation::identity && !current_out().is_dimensionless())
      throw DimensionError(to_string(a) + " applied to dimensional value " + current_out().to_string());
    Layer<T> l;
    l.kind = LayerKind::nonlinearity;
    l.name = std::move(name);
    l.activation = a;
    l.dims = {current_out(), current_out()};
    layers_.push_back(std::move(l));
  }

  std::vector<LayerDims> dim_chain() const {
    std::vector<LayerDims> v{{input_dim_, input_dim_}};
    for (const auto& l : layers_) v.push_back(l.dims);
    return v;
  }

  ChainReport check_dims() const { return check_chain(dim_chain()); }

  DimVec output_dim() const { return current_out(); }

  // Output grade set of every layer given the declared input grades.
  std::vector<GradeSet> grade_flow() const {
    std::vector<GradeSet> v;
    GradeSet g = input_grades_;
    for (const auto& l : layers_) {
      switch (l.kind) {
        case LayerKind::product:
          g = grade_infer(l.weight_grades, g, sig_);
          break;
        case LayerKind::sandwich:
        case LayerKind::nonlinearity:
          break;
        case LayerKind::project:
          g = g & l.keep;
          break;
      }
      v.push_back(g);
    }
    return v;
  }

  // Zero weights with the declared shapes.
  Params<T> zero_params() const {
    Params<T> p;
    for (const auto& l : layers_)
      if (l.kind == LayerKind::product) p.emplace_back(sig_, l.weight_grades, ctx_, l.weight_dim);
    return p;
  }

  // Throws unless params match the declared weight shapes exactly.
  void check_params(const Params<T>& p) const {
    if (p.size() != trainable_) throw GradeError("expected " + std::to_string(trainable_) + " weights");
    std::size_t k = 0;
    for (const auto& l : layers_) {
      if (l.kind != LayerKind::product) continue;
      const auto& w = p[k++];
      if (!(w.signature() == sig_)) throw SignatureMismatch("weight " + l.name);
      if (!(w.ctx() == ctx_)) throw FormatError("weight " + l.name + " format");
      if (!(w.grades() == l.weight_grades))
        throw GradeError("weight " + l.name + " has grades {" + w.grades().to_string() + "}, declared {" +
                         l.weight_grades.to_string() + "}");
      if (w.dim() != l.weight_dim) throw DimensionError("weight " + l.name + " dimension " + w.dim().to_string());
    }
  }

  void validate() const {
    const ChainReport r = check_dims();
    if (!r.ok) throw DimensionError(r.message());
  }

  Multivector<T> predict(const Params<T>& theta, const Multivector<T>& x) const {
    std::size_t k = 0;
    Multivector<T> h = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) h = apply_layer(i, theta, k, h);
    return h;
  }

  // Layer i of the forward pass; k is the index of the next trainable weight
  // and advances past a product layer.
  Multivector<T> apply_layer(std::size_t i, const Params<T>& theta, std::size_t& k, Multivector<T> h) const {
    const Layer<T>& l = layers_.at(i);
    switch (l.kind) {
      case LayerKind::product:
        return geometric_product(theta.at(k++), h);
      case LayerKind::sandwich:
        return detail::sandwich_unchecked(*l.rotor, h);
      case LayerKind::project:
        return grade_project(h, l.keep);
      case LayerKind::nonlinearity:
        apply_activation(l.activation, h);
        return h;
    }
    return h;
  }

  // Forward pass seeding each weight's tangent with direction v. Until the
  // first trainable layer the running value is a constant with no tangent.
  DualMultivector<T> predict_dual(const Params<T>& theta, const Params<T>& v, const Multivector<T>& x) const {
    std::size_t k = 0;
    Multivector<T> c = x;
    std::optional<DualMultivector<T>> h;
    for (const auto& l : layers_) {
      if (!h) {
        if (l.kind == LayerKind::product) {
          const DualMultivector<T> w(theta[k], v[k]);
          ++k;
          h.emplace(dual_product(w, c));
          c = Multivector<T>();
        } else {
          c = apply_constant(l, c);
        }
        continue;
      }
      switch (l.kind) {
        case LayerKind::product: {
          const DualMultivector<T> w(theta[k], v[k]);
          ++k;
          h.emplace(dual_product(w, *h));
          break;
        }
        case LayerKind::sandwich:
          h.emplace(detail::sandwich_unchecked(*l.rotor, h->primal), detail::sandwich_unchecked(*l.rotor, h->tangent));
          break;
        case LayerKind::project:
          h.emplace(grade_project(h->primal, l.keep), grade_project(h->tangent, l.keep));
          break;
        case LayerKind::nonlinearity:
          apply_activation_dual(l.activation, *h);
          break;
      }
    }
    if (!h) {
      Multivector<T> z(c.signature(), c.grades(), c.ctx(), c.dim());
      return DualMultivector<T>(std::move(c), std::move(z));
    }
    return std::move(*h);
  }

 private:
  DimVec current_out() const { return layers_.empty() ? input_dim_ : layers_.back().dims.out; }

  Multivector<T> apply_constant(const Layer<T>& l, const Multivector<T>& h) const {
    switch (l.kind) {
      case LayerKind::sandwich:
        return detail::sandwich_unchecked(*l.rotor, h);
      case LayerKind::project:
        return grade_project(h, l.keep);
      case LayerKind::nonlinearity: {
        Multivector<T> c = h;
        apply_activation(l.activation, c);
        return c;
      }
      case LayerKind::product:
        break;
    }
    return h;
  }

  void apply_activation(Activation a, Multivector<T>& h) const {
    if (a == Activation::identity || !h.has(0)) return;
    const long double s = scalar_traits<T>::to_real(h.get(0));
    h.set(0, scalar_traits<T>::from_real(detail::activate(a, s), h.ctx()));
  }

  void apply_activation_dual(Activation a, DualMultivector<T>& h) const {
    if (a == Activation::identity || !h.primal.has(0)) return;
    const long double s = scalar_traits<T>::to_real(h.primal.get(0));
    const long double ds = scalar_traits<T>::to_real(h.tangent.get(0));
    h.primal.set(0, scalar_traits<T>::from_real(detail::activate(a, s), h.primal.ctx()));
    h.tangent.set(0, scalar_traits<T>::from_real(detail::activate_slope(a, s) * ds, h.tangent.ctx()));
  }

  Signature sig_;
  context ctx_;
  GradeSet input_grades_;
  DimVec input_dim_;
  std::vector<Layer<T>> layers_;
  std::size_t trainable_ = 0;
};

struct LossValue {
  long double loss = 0;
  long double derivative = 0;  // <grad L, v>; zero for plain evaluation
};

namespace detail {

template <class T>
T divide_by_count(const T& x, std::size_t n, const typename scalar_traits<T>::context& ctx) {
  if constexpr (std::is_same_v<T, Posit>) {
    return x / encode(static_cast<long double>(n), ctx);
  } else {
    return scalar_traits<T>::from_real(scalar_traits<T>::to_real(x) / static_cast<long double>(n), ctx);
  }
}

}  // namespace detail

// Mean over samples of the squared error summed over the union of predicted
// and target blades. The whole sum is one accumulation.
template <class T>
T loss(const LossGraph<T>& g, const Params<T>& theta, const Dataset<T>& data) {
  auto acc = scalar_traits<T>::make_accumulator(g.ctx());
  for (const auto& s : data) {
    const Multivector<T> err = g.predict(theta, s.x) - s.y;
    for (std::size_t i = 0; i < err.size(); ++i) acc.fma(err.coeff(i), err.coeff(i));
  }
  return detail::divide_by_count(acc.round(), data.size(), g.ctx());
}

// Loss and <grad L, v> from one dual pass per sample; the derivative is the
// exact sum of 2 err * d(err) rounded once, then scaled.
template <class T>
std::pair<T, T> directional_derivative(const LossGraph<T>& g, const Params<T>& theta, const Params<T>& v,
                                       const Dataset<T>& data) {
  g.check_params(theta);
  auto acc = scalar_traits<T>::make_accumulator(g.ctx());
  auto dacc = scalar_traits<T>::make_accumulator(g.ctx());
  for (const auto& s : data) {
    DualMultivector<T> out = g.predict_dual(theta, v, s.x);
    const Multivector<T> err = out.primal - s.y;
    for (std::size_t i = 0; i < err.size(); ++i) {
      const Blade b = err.blades()[i];
      acc.fma(err.coeff(i), err.coeff(i));
      dacc.fma(err.coeff(i), out.tangent.get(b));
    }
  }
  const T l = detail::divide_by_count(acc.round(), data.size(), g.ctx());
  auto two = scalar_traits<T>::make_accumulator(g.ctx());
  const T d = dacc.round();
  two.add(d);
  two.add(d);
  return {l, detail::divide_by_count(two.round(), data.size(), g.ctx())};
}

// Rademacher directions: every stored coefficient is +1 or -1 with equal
// probability, so E[v v^T] = I and (grad . v) v is unbiased.
class DirectionSampler {
 public:
  explicit DirectionSampler(uint64_t seed) : rng_(seed) {}

  template <class T>
  Params<T> draw(const Params<T>& shape) {
    Params<T> v;
    v.reserve(shape.size());
    for (const auto& w : shape) {
      Multivector<T> d(w.signature(), w.grades(), w.ctx(), w.dim());
      for (std::size_t i = 0; i < d.size(); ++i)
        d.coeff(i) = scalar_traits<T>::from_real((rng_() & 1) ? 1.0L : -1.0L, w.ctx());
      v.push_back(std::move(d));
    }
    return v;
  }

  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

namespace detail {

// Per-coefficient exact sums of d_i * v_i.
template <class T>
class GradientSum {
 public:
  explicit GradientSum(const Params<T>& theta) {
    for (const auto& w : theta) acc_.emplace_back(w.size(), scalar_traits<T>::make_accumulator(w.ctx()));
  }
  void add(const T& d, const Params<T>& v) {
    for (std::size_t k = 0; k < acc_.size(); ++k)
      for (std::size_t i = 0; i < acc_[k].size(); ++i) acc_[k][i].fma(d, v[k].coeff(i));
  }
  Params<T> mean(const Params<T>& theta, const DimVec& loss_dim, std::size_t n) const {
    Params<T> est;
    for (std::size_t k = 0; k < theta.size(); ++k) {
      Multivector<T> e(theta[k].signature(), theta[k].grades(), theta[k].ctx(), loss_dim / theta[k].dim());
      for (std::size_t i = 0; i < e.size(); ++i) e.coeff(i) = divide_by_count(acc_[k][i].round(), n, e.ctx());
      est.push_back(std::move(e));
    }
    return est;
  }

 private:
  std::vector<std::vector<typename scalar_traits<T>::accumulator>> acc_;
};

}  // namespace detail

// (1/n) sum_i <grad L, v_i> v_i over the given directions. Each component is
// an exact accumulation of the n products d_i * v_i, rounded once, then divided
// by n. The estimate has the weight's grade set by construction.
template <class T>
Params<T> forward_gradient(const LossGraph<T>& g, const Params<T>& theta, const Dataset<T>& data,
                           const std::vector<Params<T>>& directions, T* loss_out = nullptr) {
  if (directions.empty()) throw Error("forward_gradient needs at least one direction");
  detail::GradientSum<T> sum(theta);
  for (std::size_t s = 0; s < directions.size(); ++s) {
    const auto [l, d] = directional_derivative(g, theta, directions[s], data);
    if (loss_out && s == 0) *loss_out = l;
    sum.add(d, directions[s]);
  }
  return sum.mean(theta, g.output_dim() * g.output_dim(), directions.size());
}

// Forward gradient from n Rademacher directions, drawn one at a time so only
// one direction is live.
template <class T>
Params<T> forward_gradient(const LossGraph<T>& g, const Params<T>& theta, const Dataset<T>& data,
                           DirectionSampler& sampler, std::size_t n, T* loss_out = nullptr) {
  if (n == 0) throw Error("forward_gradient needs at least one sample");
  detail::GradientSum<T> sum(theta);
  for (std::size_t s = 0; s < n; ++s) {
    const Params<T> v = sampler.draw(theta);
    const auto [l, d] = directional_derivative(g, theta, v, data);
    if (loss_out && s == 0) *loss_out = l;
    sum.add(d, v);
  }
  return sum.mean(theta, g.output_dim() * g.output_dim(), n);
}

// W - eta * g, each coefficient fused and rounded once. The update must keep
// W's grade set and dimension.
template <class T>
Multivector<T> grade_restricted_step(const Multivector<T>& w, const Multivector<T>& grad, const T& eta,
                                     const DimVec& eta_dim) {
  detail::check_compatible(w, grad);
  if (!(w.grades() == grad.grades()))
    throw GradeError("update grades {" + grad.grades().to_string() + "} do not match weight grades {" +
                     w.grades().to_string() + "}");
  if (eta_dim * grad.dim() != w.dim())
    throw DimensionError("step " + (eta_dim * grad.dim()).to_string() + " does not match weight " +
                         w.dim().to_string());
  Multivector<T> out(w.signature(), w.grades(), w.ctx(), w.dim());
  for (std::size_t i = 0; i < out.size(); ++i) {
    auto acc = scalar_traits<T>::make_accumulator(w.ctx());
    acc.add(w.coeff(i));
    acc.fms(eta, grad.coeff(i));
    out.coeff(i) = acc.round();
  }
  return out;
}

// Learning-rate dimension that makes eta * grad commensurate with the weight.
template <class T>
DimVec step_dim(const Multivector<T>& w, const Multivector<T>& grad) {
  return w.dim() / grad.dim();
}

// Live-value accounting for one sample through the graph.
struct MemoryReport {
  int64_t inference_peak = 0;     // params + frozen rotors + sample + activations
  int64_t training_peak = 0;      // the same plus weight directions and activation tangents
  int64_t parameter_tangents = 0; // one tangent per trainable coefficient
  int64_t auxiliary = 0;          // training - inference - parameter_tangents
  int64_t tape_estimate = 0;      // what a reverse-mode tape would add: every activation kept
  double ratio() const { return static_cast<double>(training_peak) / static_cast<double>(inference_peak); }
};

template <class T>
MemoryReport memory_profile(const LossGraph<T>& g, const Params<T>& theta, const Sample<T>& sample) {
  MemoryReport r;
  const int64_t resident = memory::live();
  // Values the pass reads that are already resident: theta, rotors, sample.
  int64_t owned = 0;
  for (const auto& w : theta) owned += static_cast<int64_t>(w.size());
  for (const auto& l : g.layers())
    if (l.rotor) owned += static_cast<int64_t>(l.rotor->size());
  owned += static_cast<int64_t>(sample.x.size() + sample.y.size());

  const int64_t inf = memory::measure_peak([&] {
    const Multivector<T> out = g.predict(theta, sample.x);
    (void)out;
  });
  r.inference_peak = owned + inf;

  DirectionSampler sampler(0);
  int64_t train = 0;
  {
    Params<T> v = sampler.draw(theta);
    const int64_t v_size = memory::live() - resident;
    r.parameter_tangents = v_size;
    train = memory::measure_peak([&] {
      DualMultivector<T> out = g.predict_dual(theta, v, sample.x);
      (void)out;
    });
    train += v_size;
  }
  r.training_peak = owned + train;
  r.auxiliary = r.training_peak - r.inference_peak - r.parameter_tangents;

  int64_t tape = 0;
  const auto flow = g.grade_flow();
  for (const GradeSet gs : flow) tape += static_cast<int64_t>(BladeLayout::get(g.signature().dims(), gs).blades.size());
  r.tape_estimate = tape;
  return r;
}

}  // namespace admkit
