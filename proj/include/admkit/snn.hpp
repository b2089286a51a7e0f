#pragma once

// Leaky integrate-and-fire neurons, trace-based STDP, coincidence detection and
// rate encoding. Times are in ms and potentials in mV throughout.

#include <admkit/dimension.hpp>
#include <admkit/errors.hpp>
#include <admkit/multivector.hpp>
#include <admkit/scalar.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace admkit {

enum class Integrator { exact, euler };

struct LIFParams {
  double tau_m = 20.0;
  double v_theta = 10.0;
  double v_reset = 0.0;
  double dt = 1.0;
  Integrator integrator = Integrator::exact;

  void validate() const {
    if (!(tau_m > 0)) throw Error("LIF tau_m must be positive");
    if (!(dt > 0)) throw Error("LIF dt must be positive");
    if (!(v_theta > v_reset)) throw Error("LIF threshold must exceed the reset potential");
  }
  // Per-step multiplier on V with no input.
  double decay() const { return integrator == Integrator::exact ? std::exp(-dt / tau_m) : 1.0 - dt / tau_m; }
};

template <class T>
struct NeuronState {
  T v;
  std::optional<double> t_last_spike;
};

template <class T>
struct LIFResult {
  NeuronState<T> state;
  bool fired = false;
};

// One step: V <- V*decay + input, rounded once; fire at V >= threshold.
template <class T>
LIFResult<T> lif_step(const NeuronState<T>& s, const LIFParams& p, const T& input, double t,
                      const typename scalar_traits<T>::context& ctx) {
  using tr = scalar_traits<T>;
  auto acc = tr::make_accumulator(ctx);
  acc.fma(s.v, tr::from_real(p.decay(), ctx));
  acc.add(input);
  LIFResult<T> r{{acc.round(), s.t_last_spike}, false};
  if (tr::to_real(r.state.v) >= p.v_theta) {
    r.fired = true;
    r.state.v = tr::from_real(p.v_reset, ctx);
    r.state.t_last_spike = t;
  }
  return r;
}

// Potential, time and weight dimensions of a network: an incoming spike adds
// weight * dt to V, so dim(weight) * dim(time) must be dim(potential).
struct SpikingDims {
  DimVec potential = DimVec::parse("mV");
  DimVec time = DimVec::parse("ms");

  DimVec weight() const { return potential / time; }
  void check_weight(const DimVec& w, const std::string& where) const {
    if (w * time != potential)
      throw DimensionError(where + ": weight [" + w.to_string() + "] times dt [" + time.to_string() +
                           "] is not a potential [" + potential.to_string() + "]");
  }
};

struct StdpParams {
  double a_plus = 0.01;
  double a_minus = 0.012;
  double tau_plus = 20.0;
  double tau_minus = 20.0;
};

// Pairwise rule. dt_spike = t_post - t_pre; 0 takes the potentiation limit.
inline double stdp_closed_form(double dt_spike, const StdpParams& p) {
  if (dt_spike >= 0) return p.a_plus * std::exp(-dt_spike / p.tau_plus);
  return -p.a_minus * std::exp(dt_spike / p.tau_minus);
}

template <class T>
struct SynapseState {
  T w;
  T x_pre;   // presynaptic trace
  T y_post;  // postsynaptic trace
  StdpParams params;
  double t = 0;  // time the traces were last brought up to date

  static constexpr std::size_t auxiliary_state = 2;
};

template <class T>
SynapseState<T> make_synapse(long double w, const StdpParams& p, const typename scalar_traits<T>::context& ctx,
                             double t0 = 0) {
  using tr = scalar_traits<T>;
  return {tr::from_real(w, ctx), tr::zero(ctx), tr::zero(ctx), p, t0};
}

enum class SpikeEvent { pre, post };

namespace detail {

template <class T>
T decay_to(const T& x, double elapsed, double tau, const typename scalar_traits<T>::context& ctx) {
  using tr = scalar_traits<T>;
  if (elapsed == 0 || tr::is_zero(x)) return x;
  return tr::mul(x, tr::from_real(std::exp(-elapsed / tau), ctx), ctx);
}

}  // namespace detail

// Brings both traces to time t without a spike.
template <class T>
SynapseState<T> stdp_decay(SynapseState<T> s, double t, const typename scalar_traits<T>::context& ctx) {
  if (t < s.t) throw OrderingError("synapse event at t=" + std::to_string(t) + " ms precedes t=" + std::to_string(s.t));
  s.x_pre = detail::decay_to(s.x_pre, t - s.t, s.params.tau_plus, ctx);
  s.y_post = detail::decay_to(s.y_post, t - s.t, s.params.tau_minus, ctx);
  s.t = t;
  return s;
}

template <class T>
SynapseState<T> stdp_update(const SynapseState<T>& syn, SpikeEvent e, double t,
                            const typename scalar_traits<T>::context& ctx) {
  using tr = scalar_traits<T>;
  SynapseState<T> s = stdp_decay(syn, t, ctx);
  const T one = tr::from_real(1, ctx);
  auto acc = tr::make_accumulator(ctx);
  acc.add(s.w);
  if (e == SpikeEvent::pre) {
    acc.fms(tr::from_real(s.params.a_minus, ctx), s.y_post);
    s.x_pre = tr::add(s.x_pre, one, ctx);
  } else {
    acc.fma(tr::from_real(s.params.a_plus, ctx), s.x_pre);
    s.y_post = tr::add(s.y_post, one, ctx);
  }
  s.w = acc.round();
  return s;
}

// True when some k of the given times lie within tau of each other.
inline bool coincidence_fire(std::vector<double> times, std::size_t k, double tau) {
  if (k == 0) throw Error("coincidence needs k >= 1");
  if (times.size() < k) return false;
  std::sort(times.begin(), times.end());
  for (std::size_t i = 0; i + k - 1 < times.size(); ++i)
    if (times[i + k - 1] - times[i] <= tau) return true;
  return false;
}

struct Spike {
  std::size_t neuron = 0;
  double t = 0;
  bool operator==(const Spike&) const = default;
};

// Hyperedge form: fires when k distinct sources spike within tau. A source
// spiking twice inside the window still counts once.
inline bool coincidence_fire(std::vector<Spike> spikes, std::size_t k, double tau) {
  if (k == 0) throw Error("coincidence needs k >= 1");
  std::sort(spikes.begin(), spikes.end(), [](const Spike& a, const Spike& b) { return a.t < b.t; });
  std::map<std::size_t, int> in_window;
  std::size_t lo = 0;
  for (std::size_t hi = 0; hi < spikes.size(); ++hi) {
    ++in_window[spikes[hi].neuron];
    while (spikes[hi].t - spikes[lo].t > tau) {
      if (--in_window[spikes[lo].neuron] == 0) in_window.erase(spikes[lo].neuron);
      ++lo;
    }
    if (in_window.size() >= k) return true;
  }
  return false;
}

struct SpikeTrain {
  std::vector<double> times;  // ms
  double rate = 0;            // spikes per unit of the rate dimension
  DimVec rate_dim;
};

// Evenly spaced train at rate (x * scale) * r_max over [0, window). The scale
// must cancel x's dimension so that x * scale is a pure number in [0, 1].
inline SpikeTrain rate_encode(double x, const DimVec& x_dim, double scale, const DimVec& scale_dim, double window,
                              double r_max, const DimVec& r_max_dim = DimVec::parse("ms^-1")) {
  const DimVec u_dim = x_dim * scale_dim;
  if (!u_dim.is_dimensionless())
    throw DimensionError("rate encoding scale [" + scale_dim.to_string() + "] does not cancel input [" +
                         x_dim.to_string() + "]; product is [" + u_dim.to_string() + "]");
  const double u = x * scale;
  if (!(u >= 0 && u <= 1)) throw Error("scaled input " + std::to_string(u) + " is outside [0, 1]");
  SpikeTrain out;
  out.rate = u * r_max;
  out.rate_dim = u_dim * r_max_dim;
  if (out.rate <= 0) return out;
  const double isi = 1.0 / out.rate;
  // Tolerance absorbs the rounding in rate * window.
  const auto n = static_cast<std::size_t>(std::floor(out.rate * window * (1 + 1e-12)));
  for (std::size_t i = 0; i < n; ++i) out.times.push_back(static_cast<double>(i) * isi);
  return out;
}

inline void write_spikes_csv(std::ostream& os, const std::vector<Spike>& spikes) {
  os << "neuron_id,t_ms\n";
  char buf[64];
  for (const Spike& s : spikes) {
    const auto r = std::to_chars(buf, buf + sizeof buf, s.t);
    os << s.neuron << ',' << std::string_view(buf, static_cast<std::size_t>(r.ptr - buf)) << '\n';
  }
}

inline std::vector<Spike> read_spikes_csv(std::istream& is) {
  std::vector<Spike> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (lineno == 1 && line == "neuron_id,t_ms") continue;
    const auto comma = line.find(',');
    Spike s;
    const char* end = line.data() + line.size();
    if (comma == std::string::npos) throw ParseError("spike csv line " + std::to_string(lineno) + ": missing comma");
    auto a = std::from_chars(line.data(), line.data() + comma, s.neuron);
    auto b = std::from_chars(line.data() + comma + 1, end, s.t);
    if (a.ec != std::errc() || a.ptr != line.data() + comma || b.ec != std::errc() || b.ptr != end)
      throw ParseError("spike csv line " + std::to_string(lineno) + ": bad field in '" + line + "'");
    out.push_back(s);
  }
  return out;
}

struct SynapseSpec {
  std::size_t pre = 0;
  std::size_t post = 0;
  double w = 0;
  DimVec w_dim = DimVec::parse("mV ms^-1");
};

// Fixed-topology network stepped on a dt grid. Potentials, weights and traces
// live in counted storage; traces are the only per-synapse state besides w.
template <class T>
class SpikingNetwork {
  using tr = scalar_traits<T>;

 public:
  using context = typename tr::context;

  SpikingNetwork(std::size_t neurons, const std::vector<SynapseSpec>& synapses, LIFParams lif, StdpParams stdp,
                 const context& ctx, SpikingDims dims = {})
      : lif_(lif),
        stdp_(stdp),
        ctx_(ctx),
        v_(neurons, tr::from_real(lif.v_reset, ctx)),
        w_(synapses.size(), tr::zero(ctx)),
        traces_(2 * synapses.size(), tr::zero(ctx)) {
    lif_.validate();
    for (std::size_t i = 0; i < synapses.size(); ++i) {
      const SynapseSpec& s = synapses[i];
      if (s.pre >= neurons || s.post >= neurons)
        throw Error("synapse " + std::to_string(i) + " refers to a missing neuron");
      dims.check_weight(s.w_dim, "synapse " + std::to_string(i));
      w_[i] = tr::from_real(s.w, ctx);
      pre_.push_back(s.pre);
      post_.push_back(s.post);
    }
    decay_plus_ = tr::from_real(std::exp(-lif_.dt / stdp_.tau_plus), ctx);
    decay_minus_ = tr::from_real(std::exp(-lif_.dt / stdp_.tau_minus), ctx);
  }

  // Layers of the given widths, all-to-all between consecutive layers.
  static std::vector<SynapseSpec> feedforward(const std::vector<std::size_t>& widths, double w) {
    std::vector<SynapseSpec> out;
    std::size_t base = 0;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      for (std::size_t i = 0; i < widths[l]; ++i)
        for (std::size_t j = 0; j < widths[l + 1]; ++j) out.push_back({base + i, base + widths[l] + j, w, SpikingDims{}.weight()});
      base += widths[l];
    }
    return out;
  }

  std::size_t neurons() const { return v_.size(); }
  std::size_t synapses() const { return w_.size(); }
  std::size_t auxiliary_values() const { return traces_.size(); }
  const T& weight(std::size_t s) const { return w_[s]; }
  const T& potential(std::size_t n) const { return v_[n]; }
  double time() const { return static_cast<double>(step_) * lif_.dt; }
  void set_plasticity(bool on) { plastic_ = on; }

  // Advances one dt. Neurons listed in forced spike regardless of potential
  // (external inputs). Returns the neurons that spiked.
  std::vector<std::size_t> step(const std::vector<std::size_t>& forced = {}) {
    ++step_;
    const double t = time();
    std::vector<auto_acc> in;
    in.reserve(v_.size());
    const T decay = tr::from_real(lif_.decay(), ctx_);
    for (std::size_t n = 0; n < v_.size(); ++n) {
      in.push_back(tr::make_accumulator(ctx_));
      in.back().fma(v_[n], decay);
    }
    const T dt = tr::from_real(lif_.dt, ctx_);
    for (std::size_t s = 0; s < w_.size(); ++s)
      if (last_fired_[pre_[s]]) in[post_[s]].fma(w_[s], dt);

    std::vector<std::size_t> fired;
    std::vector<char> now(v_.size(), 0);
    for (std::size_t n : forced)
      if (n < v_.size()) now[n] = 1;
    for (std::size_t n = 0; n < v_.size(); ++n) {
      v_[n] = in[n].round();
      if (now[n] || tr::to_real(v_[n]) >= lif_.v_theta) {
        now[n] = 1;
        v_[n] = tr::from_real(lif_.v_reset, ctx_);
        fired.push_back(n);
      }
    }
    if (plastic_) plasticity(now);
    last_fired_ = std::move(now);
    for (std::size_t n : fired) log_.push_back({n, t});
    return fired;
  }

  const std::vector<Spike>& spikes() const { return log_; }

 private:
  using auto_acc = typename tr::accumulator;

  void plasticity(const std::vector<char>& now) {
    const T one = tr::from_real(1, ctx_);
    const T a_plus = tr::from_real(stdp_.a_plus, ctx_);
    const T a_minus = tr::from_real(stdp_.a_minus, ctx_);
    for (std::size_t s = 0; s < w_.size(); ++s) {
      T& x = traces_[2 * s];
      T& y = traces_[2 * s + 1];
      x = tr::mul(x, decay_plus_, ctx_);
      y = tr::mul(y, decay_minus_, ctx_);
      const bool pre = now[pre_[s]];
      const bool post = now[post_[s]];
      if (!pre && !post) continue;
      auto acc = tr::make_accumulator(ctx_);
      acc.add(w_[s]);
      if (pre) {
        acc.fms(a_minus, y);
        x = tr::add(x, one, ctx_);
      }
      if (post) {
        acc.fma(a_plus, x);
        y = tr::add(y, one, ctx_);
      }
      w_[s] = acc.round();
    }
  }

  LIFParams lif_;
  StdpParams stdp_;
  context ctx_;
  CoeffStorage<T> v_;
  CoeffStorage<T> w_;
  CoeffStorage<T> traces_;  // x_pre, y_post interleaved per synapse
  std::vector<std::size_t> pre_, post_;
  std::vector<char> last_fired_ = std::vector<char>(v_.size(), 0);
  T decay_plus_, decay_minus_;
  uint64_t step_ = 0;
  bool plastic_ = true;
  std::vector<Spike> log_;
};

}  // namespace admkit
