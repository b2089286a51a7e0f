#pragma once

// Scenario runner. A scenario file wires a data stream, a grade-typed posit
// model, the shift detector and the rotation engine into one deterministic
// run; the same file drives the grade-corruption contrast experiment.

#include <admkit/adapt.hpp>
#include <admkit/rotation.hpp>
#include <admkit/snn.hpp>

#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <random>
#include <sstream>

namespace admkit {

enum class StreamKind { stationary, drift, spikes };

inline const char* to_string(StreamKind k) {
  switch (k) {
    case StreamKind::stationary:
      return "stationary";
    case StreamKind::drift:
      return "drift";
    case StreamKind::spikes:
      return "spikes";
  }
  return "?";
}

struct StreamSpec {
  StreamKind kind = StreamKind::stationary;
  int64_t drift_at = 5000;     // first drifted observation (drift and spikes)
  double shift = 2.0;          // added to the target's offset after drift_at
  double noise = 0.5;          // target noise sd
  double input_scale = 1.0;    // sd of every non-scalar input coefficient
  double offset = 0.5;         // target offset before drift
  double spike_window = 100;   // ms, spikes stream
  double spike_rate = 0.5;     // ms^-1 at full scale, spikes stream
};

enum class DetectorModel { normal, empirical };

struct TrainConfig {
  std::size_t samples = 1000;          // initial training set
  std::size_t retrain_samples = 400;   // fresh observations gathered after a trigger
  std::size_t steps = 1500;
  std::size_t batch = 8;
  std::size_t directions = 1;
  std::size_t steps_per_tick = 50;
  double rate = 0.05;
};

struct ContrastConfig {
  std::string weight;  // empty: the first single-grade product weight
  std::size_t steps = 10000;
  std::size_t samples = 16;
  int fraction_bits = 8;
  double rate = 0.002;
};

struct Scenario {
  std::string name = "scenario";
  uint64_t seed = 1;
  int64_t steps = 10000;
  ModelSpec model;
  StreamSpec stream;
  DetectorConfig detector{200, Binning{-4, 4, 16}, 1.0, std::nullopt};
  DetectorModel detector_model = DetectorModel::normal;
  std::size_t calibration_replicates = 400;
  double calibration_quantile = 0.999;
  uint64_t calibration_seed = 0x5eed;
  SigningPolicy policy = SigningPolicy::strict;
  std::string signing_scheme = "ed25519";
  std::string signing_key_label = "admkit-scenario";
  std::string signing_key_file;  // overrides the label when set
  unsigned inference_ticks = 3;
  unsigned training_ticks = 1;
  TrainConfig train;
  int64_t clock_start = 1700000000;
  int64_t clock_step = 1;
  std::vector<std::size_t> memory_depths{2, 8, 32, 64};
  std::size_t kl_stride = 100;
  ContrastConfig contrast;

  void validate() const;
};

namespace detail {

// Independent sub-seeds from one scenario seed.
inline uint64_t derive_seed(std::initializer_list<uint64_t> parts) {
  std::vector<uint32_t> words;
  for (uint64_t p : parts) {
    words.push_back(static_cast<uint32_t>(p));
    words.push_back(static_cast<uint32_t>(p >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  uint32_t out[2];
  seq.generate(out, out + 2);
  return (uint64_t{out[1]} << 32) | out[0];
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline std::vector<std::string> words(std::string_view s) {
  std::vector<std::string> out;
  std::istringstream in{std::string(s)};
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

template <class V>
V parse_number(const std::string& s, const std::string& where) {
  V v{};
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size() || s.empty())
    throw ParseError(where + ": '" + s + "' is not a valid number");
  return v;
}

inline std::vector<int> int_list(const std::string& s, const std::string& where) {
  std::vector<int> v;
  for (const auto& p : split(s, ',')) v.push_back(parse_number<int>(trim(p), where));
  return v;
}

inline GradeSet grade_list(const std::string& s, const std::string& where) {
  GradeSet g;
  for (int v : int_list(s, where)) {
    if (v < 0 || v > 5) throw ParseError(where + ": grade " + std::to_string(v) + " out of range");
    g.insert(v);
  }
  return g;
}

inline DimVec dim_literal(const std::string& s, const std::string& where) {
  try {
    return DimVec::parse(s);
  } catch (const std::exception& e) {
    throw ParseError(where + ": " + e.what());
  }
}

inline LayerSpec parse_layer(const std::string& value, const std::string& where) {
  const auto w = words(value);
  if (w.size() < 2) throw ParseError(where + ": layer needs '<kind> <name> [key=value ...]'");
  LayerSpec l;
  try {
    l.kind = parse_layer_kind(w[0]);
  } catch (const ParseError& e) {
    throw ParseError(where + ": " + e.what());
  }
  l.name = w[1];
  std::set<std::string> seen;
  for (std::size_t i = 2; i < w.size(); ++i) {
    const auto eq = w[i].find('=');
    if (eq == std::string::npos) throw ParseError(where + ": expected key=value, got '" + w[i] + "'");
    const std::string k = w[i].substr(0, eq), v = w[i].substr(eq + 1);
    if (!seen.insert(k).second) throw ParseError(where + ": repeated layer attribute '" + k + "'");
    if (k == "grades" && (l.kind == LayerKind::product || l.kind == LayerKind::sandwich))
      l.grades = grade_list(v, where);
    else if (k == "dim" && l.kind == LayerKind::product)
      l.dim = dim_literal(v, where);
    else if (k == "keep" && l.kind == LayerKind::project)
      l.keep = grade_list(v, where);
    else if (k == "activation" && l.kind == LayerKind::nonlinearity)
      l.activation = parse_activation(v);
    else
      throw ParseError(where + ": attribute '" + k + "' does not apply to a " + to_string(l.kind) + " layer");
  }
  const bool weighted = l.kind == LayerKind::product || l.kind == LayerKind::sandwich;
  if (weighted && !seen.count("grades")) throw ParseError(where + ": layer " + l.name + " needs grades=");
  if (l.kind == LayerKind::project && !seen.count("keep")) throw ParseError(where + ": layer " + l.name + " needs keep=");
  if (l.kind == LayerKind::nonlinearity && !seen.count("activation"))
    throw ParseError(where + ": layer " + l.name + " needs activation=");
  return l;
}

}  // namespace detail

// Line-oriented "key = value" text; '#' starts a comment. `layer` may repeat
// and the layers run in file order. Errors name the line.
inline Scenario parse_scenario(std::string_view text, const std::string& origin = "scenario") {
  Scenario s;
  s.model.layers.clear();
  std::set<std::string> seen;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = origin + ":" + std::to_string(lineno);
    if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(where + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key != "layer" && !seen.insert(key).second) throw ParseError(where + ": duplicate key '" + key + "'");
    auto num = [&]<class V>(V& out) { out = detail::parse_number<V>(value, where); };
    auto pair = [&](double& a, double& b) {
      const auto p = detail::split(value, ',');
      if (p.size() != 2) throw ParseError(where + ": expected 'a,b'");
      a = detail::parse_number<double>(trim(p[0]), where);
      b = detail::parse_number<double>(trim(p[1]), where);
    };
    try {
      if (key == "name") {
        s.name = value;
      } else if (key == "seed") {
        num(s.seed);
      } else if (key == "steps") {
        num(s.steps);
      } else if (key == "format") {
        const auto v = detail::int_list(value, where);
        if (v.size() != 3) throw ParseError(where + ": format is 'nbits,es,rmax'");
        s.model.format = PositFormat{v[0], v[1], v[2]};
      } else if (key == "signature") {
        const auto v = detail::int_list(value, where);
        if (v.size() != 3) throw ParseError(where + ": signature is 'p,q,r'");
        s.model.signature = Signature{v[0], v[1], v[2]};
      } else if (key == "input.grades") {
        s.model.input_grades = detail::grade_list(value, where);
      } else if (key == "input.dim") {
        s.model.input_dim = detail::dim_literal(value, where);
      } else if (key == "output.dim") {
        s.model.output_dim = detail::dim_literal(value, where);
      } else if (key == "rotor_tolerance") {
        num(s.model.rotor_tolerance);
      } else if (key == "layer") {
        LayerSpec l = detail::parse_layer(value, where);
        for (const auto& o : s.model.layers)
          if (o.name == l.name) throw ParseError(where + ": duplicate layer name '" + l.name + "'");
        s.model.layers.push_back(std::move(l));
      } else if (key == "stream") {
        if (value == "stationary")
          s.stream.kind = StreamKind::stationary;
        else if (value == "drift")
          s.stream.kind = StreamKind::drift;
        else if (value == "spikes")
          s.stream.kind = StreamKind::spikes;
        else
          throw ParseError(where + ": stream is stationary, drift or spikes");
      } else if (key == "stream.drift_at") {
        num(s.stream.drift_at);
      } else if (key == "stream.shift") {
        num(s.stream.shift);
      } else if (key == "stream.noise") {
        num(s.stream.noise);
      } else if (key == "stream.input_scale") {
        num(s.stream.input_scale);
      } else if (key == "stream.offset") {
        num(s.stream.offset);
      } else if (key == "stream.spike_window") {
        num(s.stream.spike_window);
      } else if (key == "stream.spike_rate") {
        num(s.stream.spike_rate);
      } else if (key == "detector.window") {
        num(s.detector.window_size);
      } else if (key == "detector.bins") {
        num(s.detector.binning.bins);
      } else if (key == "detector.range") {
        pair(s.detector.binning.lo, s.detector.binning.hi);
      } else if (key == "detector.alpha") {
        num(s.detector.alpha);
      } else if (key == "detector.epsilon") {
        if (value == "auto")
          s.detector.epsilon.reset();
        else
          s.detector.epsilon = detail::parse_number<double>(value, where);
      } else if (key == "detector.model") {
        if (value == "normal")
          s.detector_model = DetectorModel::normal;
        else if (value == "empirical")
          s.detector_model = DetectorModel::empirical;
        else
          throw ParseError(where + ": detector.model is normal or empirical");
      } else if (key == "calibration.replicates") {
        num(s.calibration_replicates);
      } else if (key == "calibration.quantile") {
        num(s.calibration_quantile);
      } else if (key == "calibration.seed") {
        num(s.calibration_seed);
      } else if (key == "signing.scheme") {
        s.signing_scheme = value;
      } else if (key == "signing.key_label") {
        s.signing_key_label = value;
      } else if (key == "signing.key_file") {
        s.signing_key_file = value;
      } else if (key == "signing.policy") {
        if (value == "strict")
          s.policy = SigningPolicy::strict;
        else if (value == "dev")
          s.policy = SigningPolicy::dev;
        else
          throw ParseError(where + ": signing.policy is strict or dev");
      } else if (key == "ticks") {
        const auto p = detail::split(value, ':');
        if (p.size() != 2) throw ParseError(where + ": ticks is 'inference:training'");
        s.inference_ticks = detail::parse_number<unsigned>(trim(p[0]), where);
        s.training_ticks = detail::parse_number<unsigned>(trim(p[1]), where);
      } else if (key == "train.samples") {
        num(s.train.samples);
      } else if (key == "train.retrain_samples") {
        num(s.train.retrain_samples);
      } else if (key == "train.steps") {
        num(s.train.steps);
      } else if (key == "train.batch") {
        num(s.train.batch);
      } else if (key == "train.directions") {
        num(s.train.directions);
      } else if (key == "train.steps_per_tick") {
        num(s.train.steps_per_tick);
      } else if (key == "train.rate") {
        num(s.train.rate);
      } else if (key == "clock.start") {
        num(s.clock_start);
      } else if (key == "clock.step") {
        num(s.clock_step);
      } else if (key == "memory.depths") {
        s.memory_depths.clear();
        for (int d : detail::int_list(value, where)) {
          if (d <= 0) throw ParseError(where + ": depths must be positive");
          s.memory_depths.push_back(static_cast<std::size_t>(d));
        }
      } else if (key == "report.kl_stride") {
        num(s.kl_stride);
      } else if (key == "contrast.weight") {
        s.contrast.weight = value;
      } else if (key == "contrast.steps") {
        num(s.contrast.steps);
      } else if (key == "contrast.samples") {
        num(s.contrast.samples);
      } else if (key == "contrast.fraction_bits") {
        num(s.contrast.fraction_bits);
      } else if (key == "contrast.rate") {
        num(s.contrast.rate);
      } else {
        throw ParseError(where + ": unknown key '" + key + "'");
      }
    } catch (const ParseError&) {
      throw;
    } catch (const std::exception& e) {
      throw ParseError(where + ": " + e.what());
    }
  }
  s.validate();
  return s;
}

inline Scenario load_scenario(const std::string& path) { return parse_scenario(read_text_file(path), path); }

inline void Scenario::validate() const {
  if (steps <= 0) throw ParseError(name + ": steps must be positive");
  try {
    model.validate();
    detector.validate();
  } catch (const ParseError&) {
    throw;
  } catch (const std::exception& e) {
    throw ParseError(name + ": " + e.what());
  }
  if (model.layers.empty()) throw ParseError(name + ": model has no layers");
  if (inference_ticks == 0) throw ParseError(name + ": ticks needs at least one inference tick");
  if (train.batch == 0 || train.directions == 0 || train.steps_per_tick == 0)
    throw ParseError(name + ": train batch, directions and steps_per_tick must be positive");
  if (train.retrain_samples == 0 || train.samples == 0) throw ParseError(name + ": training sets must be non-empty");
  if (!(calibration_quantile > 0 && calibration_quantile <= 1)) throw ParseError(name + ": quantile must be in (0, 1]");
  if (signing_scheme != "ed25519" && signing_scheme != "null")
    throw ParseError(name + ": signing.scheme is ed25519 or null");
  if (!model.input_grades.contains(0)) throw ParseError(name + ": input.grades must include 0 (the bias carrier)");
  // The structural checks a weights file would face, on a fresh draw.
  const Elaboration e = elaborate(initial_weights(model, seed), model);
  if (!e.ok()) throw ParseError(name + ": model does not elaborate: " + e.violations.front().to_string());
  if (stream.kind == StreamKind::spikes && !model.input_dim.is_dimensionless())
    throw ParseError(name + ": the spike source takes dimensionless input");
}

// Timestamps come from here so that replays can be byte-identical.
using Clock = std::function<int64_t()>;

inline Clock stepping_clock(int64_t start, int64_t step) {
  auto t = std::make_shared<int64_t>(start);
  return [t, step] {
    const int64_t now = *t;
    *t += step;
    return now;
  };
}

// Observations (x, y): x has the model's input grades with scalar part 1, y
// is a scalar target with a linear ground truth plus noise.
class DataStream {
 public:
  DataStream(const Scenario& s, uint64_t stream_id) : s_(s), rng_(detail::derive_seed({s.seed, stream_id})) {
    std::mt19937_64 truth(detail::derive_seed({s.seed, 0x7a11}));
    std::uniform_real_distribution<double> u(-1, 1);
    Multivector<Posit> shape(s.model.signature, s.model.input_grades, s.model.format, s.model.input_dim);
    for (std::size_t i = 0; i < shape.size(); ++i)
      if (shape.blades()[i] != 0) beta_.push_back({shape.blades()[i], u(truth)});
  }

  Sample<Posit> next(int64_t t) {
    const ModelSpec& m = s_.model;
    Multivector<Posit> x(m.signature, m.input_grades, m.format, m.input_dim);
    x.set_real(0, 1);
    double lin = 0;
    for (const auto& [b, w] : beta_) {
      const double v = s_.stream.input_scale * normal_(rng_);
      x.set_real(b, v);
      lin += w * decode(x.get(b));  // the model sees the rounded input
    }
    const bool drifted = s_.stream.kind != StreamKind::stationary && t >= s_.stream.drift_at;
    double y = 0;
    if (s_.stream.kind == StreamKind::spikes) {
      // Count from an evenly spaced train whose rate follows the input.
      const double u = std::clamp(0.5 + 0.2 * lin + 0.1 * s_.stream.noise * normal_(rng_) +
                                      (drifted ? 0.1 * s_.stream.shift : 0.0),
                                  0.0, 1.0);
      const SpikeTrain tr = rate_encode(u, {}, 1.0, {}, s_.stream.spike_window, s_.stream.spike_rate);
      y = static_cast<double>(tr.times.size()) / (s_.stream.spike_rate * s_.stream.spike_window) * 4.0;
    } else {
      y = s_.stream.offset + lin + s_.stream.noise * normal_(rng_) + (drifted ? s_.stream.shift : 0.0);
    }
    return {std::move(x), Multivector<Posit>::scalar(y, m.signature, m.format, m.output_dim)};
  }

  Dataset<Posit> take(std::size_t n, int64_t t) {
    Dataset<Posit> d;
    for (std::size_t i = 0; i < n; ++i) d.push_back(next(t));
    return d;
  }

 private:
  const Scenario& s_;
  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_{0, 1};
  std::vector<std::pair<Blade, double>> beta_;
};

// Minibatch forward-gradient descent, resumable in chunks so training can
// run inside the engine's training ticks.
class FitJob {
 public:
  FitJob(std::shared_ptr<const LossGraph<Posit>> g, Params<Posit> theta, Dataset<Posit> data, const TrainConfig& c,
         uint64_t seed)
      : g_(std::move(g)), theta_(std::move(theta)), data_(std::move(data)), cfg_(c), rng_(seed), sampler_(seed ^ 0xd1f) {
    g_->check_params(theta_);
    if (data_.empty()) throw Error("nothing to train on");
  }

  void run(std::size_t n) {
    const Posit eta = encode(cfg_.rate, g_->ctx());
    std::uniform_int_distribution<std::size_t> pick(0, data_.size() - 1);
    for (std::size_t i = 0; i < n && !done(); ++i, ++done_) {
      Dataset<Posit> batch;
      for (std::size_t b = 0; b < cfg_.batch; ++b) batch.push_back(data_[pick(rng_)]);
      const Params<Posit> grad = forward_gradient(*g_, theta_, batch, sampler_, cfg_.directions);
      for (std::size_t k = 0; k < theta_.size(); ++k)
        theta_[k] = grade_restricted_step(theta_[k], grad[k], eta, step_dim(theta_[k], grad[k]));
    }
  }
  void finish() { run(cfg_.steps); }

  bool done() const { return done_ >= cfg_.steps; }
  std::size_t steps_done() const { return done_; }
  const Params<Posit>& theta() const { return theta_; }
  const Dataset<Posit>& data() const { return data_; }
  const LossGraph<Posit>& graph() const { return *g_; }

 private:
  std::shared_ptr<const LossGraph<Posit>> g_;
  Params<Posit> theta_;
  Dataset<Posit> data_;
  TrainConfig cfg_;
  std::mt19937_64 rng_;
  DirectionSampler sampler_;
  std::size_t done_ = 0;
};

struct ResidualStats {
  double mean = 0;
  double sd = 1;
  std::vector<double> standardized;  // of the fitting set
};

inline ResidualStats residual_stats(const LossGraph<Posit>& g, const Params<Posit>& theta, const Dataset<Posit>& d) {
  std::vector<double> r;
  for (const auto& s : d) r.push_back(static_cast<double>(s.y.real(0) - g.predict(theta, s.x).real(0)));
  ResidualStats st;
  for (double v : r) st.mean += v;
  st.mean /= static_cast<double>(r.size());
  double ss = 0;
  for (double v : r) ss += (v - st.mean) * (v - st.mean);
  st.sd = std::sqrt(ss / static_cast<double>(std::max<std::size_t>(r.size(), 2) - 1));
  if (!(st.sd > 0)) st.sd = 1;
  for (double v : r) st.standardized.push_back((v - st.mean) / st.sd);
  return st;
}

// The detector compares standardized residuals against this histogram.
inline Histogram detector_model(const Scenario& s, const ResidualStats& st) {
  const auto& d = s.detector;
  if (s.detector_model == DetectorModel::normal)
    return normal_histogram(d.binning, 0, 1, static_cast<double>(d.window_size));
  Histogram h(d.binning);
  for (double z : st.standardized) h.add(z);
  const auto p = h.probabilities(d.alpha);
  return Histogram::from_probabilities(d.binning, p, static_cast<double>(d.window_size));
}

// Threshold calibration depends only on the detector and its model, so runs
// that share them share the (cached) result.
inline Calibration cached_calibration(const Histogram& model, const Scenario& s, std::size_t horizon) {
  static std::mutex mu;
  static std::map<std::string, Calibration> cache;
  json key{{"p", json::array()}, {"w", s.detector.window_size}, {"h", horizon}, {"r", s.calibration_replicates},
           {"s", s.calibration_seed}, {"q", format_real(s.calibration_quantile)}, {"a", format_real(s.detector.alpha)},
           {"b", {format_real(model.binning.lo), format_real(model.binning.hi), model.binning.bins}}};
  for (double c : model.counts) key["p"].push_back(format_real(c));
  const std::string k = canonical(key);
  std::lock_guard lock(mu);
  if (auto it = cache.find(k); it != cache.end()) return it->second;
  const Calibration c = calibrate_epsilon(model, s.detector.window_size, s.detector.alpha, horizon,
                                          s.calibration_replicates, s.calibration_seed, s.calibration_quantile);
  cache.emplace(k, c);
  return c;
}

struct MemoryRow {
  std::size_t depth = 0;
  MemoryReport report;
};

// Live-value accounting for chains of grade-{0,2} products of each depth.
inline std::vector<MemoryRow> memory_table(const Scenario& s) {
  std::vector<MemoryRow> rows;
  const ModelSpec& m = s.model;
  DataStream stream(s, 0x3e3);
  const Sample<Posit> sample = stream.next(0);
  GradeSet wg = GradeSet{0, 2} & GradeSet::all(m.signature.dims());
  for (std::size_t depth : s.memory_depths) {
    LossGraph<Posit> g(m.signature, m.format, m.input_grades, m.input_dim);
    for (std::size_t i = 0; i < depth; ++i) g.add_product("w" + std::to_string(i + 1), wg, {});
    Params<Posit> theta = g.zero_params();
    for (auto& w : theta) w.set_real(0, 1);
    rows.push_back({depth, memory_profile(g, theta, Sample<Posit>{sample.x, sample.y})});
  }
  return rows;
}

struct TriggerEvent {
  int64_t observation = 0;
  double kl = 0;
  uint64_t active_version = 0;
};

struct RotationEvent {
  int64_t observation = 0;  // observations submitted when the outcome was decided
  uint64_t version = 0;
  bool committed = false;
  std::string reason;
};

struct ScenarioReport {
  std::string name;
  uint64_t seed = 0;
  std::string stream;
  int64_t steps = 0;
  double epsilon = 0;
  bool epsilon_calibrated = false;
  std::vector<std::pair<int64_t, double>> kl_trajectory;
  double max_kl = 0;
  std::vector<TriggerEvent> triggers;
  std::vector<RotationEvent> rotations;
  std::vector<VersionRecord> chain;
  ChainVerdict chain_verdict;
  std::string public_key_hex;
  std::vector<MemoryRow> memory;
  json fingerprints_before;
  json fingerprints_after;
  uint64_t requests = 0;
  uint64_t responses = 0;
  bool retraining_pending = false;
  double initial_loss = 0;
  double final_loss = 0;

  std::size_t committed() const {
    return static_cast<std::size_t>(std::count_if(rotations.begin(), rotations.end(), [](auto& r) { return r.committed; }));
  }
  std::size_t refused() const { return rotations.size() - committed(); }
  bool sparsity_stable() const { return fingerprints_before == fingerprints_after; }

  json to_json() const {
    json kl = json::array();
    for (const auto& [t, v] : kl_trajectory) kl.push_back({t, format_real(v)});
    json trig = json::array();
    for (const auto& t : triggers)
      trig.push_back({{"observation", t.observation}, {"kl", format_real(t.kl)}, {"active_version", t.active_version}});
    json rot = json::array();
    for (const auto& r : rotations)
      rot.push_back({{"observation", r.observation}, {"version", r.version}, {"committed", r.committed}, {"reason", r.reason}});
    json chain_hashes = json::array();
    for (const auto& r : chain) chain_hashes.push_back(r.hash());
    json mem = json::array();
    for (const auto& m : memory)
      mem.push_back({{"depth", m.depth},
                     {"inference", m.report.inference_peak},
                     {"training", m.report.training_peak},
                     {"parameter_tangents", m.report.parameter_tangents},
                     {"auxiliary", m.report.auxiliary},
                     {"tape_estimate", m.report.tape_estimate}});
    return {{"name", name},
            {"seed", seed},
            {"stream", stream},
            {"steps", steps},
            {"epsilon", format_real(epsilon)},
            {"epsilon_calibrated", epsilon_calibrated},
            {"kl_trajectory", kl},
            {"max_kl", format_real(max_kl)},
            {"triggers", trig},
            {"rotations", rot},
            {"chain", chain_hashes},
            {"chain_verdict", chain_verdict.to_string()},
            {"public_key", public_key_hex},
            {"memory", mem},
            {"fingerprints_before", fingerprints_before},
            {"fingerprints_after", fingerprints_after},
            {"requests", requests},
            {"responses", responses},
            {"retraining_pending", retraining_pending},
            {"initial_loss", format_real(initial_loss)},
            {"final_loss", format_real(final_loss)}};
  }

  std::string summary() const {
    std::ostringstream o;
    o << "scenario " << name << " (seed " << seed << ", " << stream << ", " << steps << " observations)\n";
    o << "  epsilon " << epsilon << (epsilon_calibrated ? " (calibrated)" : " (fixed)") << ", max KL " << max_kl << "\n";
    o << "  initial model loss " << initial_loss << ", last model loss " << final_loss << "\n";
    for (const auto& t : triggers)
      o << "  trigger at observation " << t.observation << ": KL " << t.kl << " on version " << t.active_version << "\n";
    o << "  rotations: " << committed() << " committed, " << refused() << " refused"
      << (retraining_pending ? ", one retraining unfinished" : "") << "\n";
    for (const auto& r : rotations)
      o << "    v" << r.version << " " << (r.committed ? "committed" : "refused: " + r.reason) << " at observation "
        << r.observation << "\n";
    o << "  requests " << requests << ", responses " << responses << "\n";
    o << "  chain of " << chain.size() << " record(s): " << chain_verdict.to_string() << "\n";
    for (const auto& r : chain)
      o << "    v" << r.version_id << " " << r.hash().substr(0, 16) << " kl_at_trigger " << r.kl_at_trigger << "\n";
    o << "  sparsity fingerprints " << (sparsity_stable() ? "unchanged" : "CHANGED") << " across versions\n";
    o << "  memory (live values)   depth  inference  training  tangents  auxiliary  tape\n";
    for (const auto& m : memory) {
      char buf[128];
      std::snprintf(buf, sizeof buf, "                        %5zu  %9lld  %8lld  %8lld  %9lld  %4lld\n", m.depth,
                    static_cast<long long>(m.report.inference_peak), static_cast<long long>(m.report.training_peak),
                    static_cast<long long>(m.report.parameter_tangents), static_cast<long long>(m.report.auxiliary),
                    static_cast<long long>(m.report.tape_estimate));
      o << buf;
    }
    return o.str();
  }
};

inline std::unique_ptr<Signer> scenario_signer(const Scenario& s) {
  if (s.signing_scheme == "null") return std::make_unique<NullSigner>();
  if (!s.signing_key_file.empty()) return load_signer("ed25519", s.signing_key_file);
  return std::make_unique<Ed25519Signer>(Ed25519Signer::from_label(s.signing_key_label));
}

inline std::string scenario_public_key(const Scenario& s) {
  const auto signer = scenario_signer(s);
  if (auto* e = dynamic_cast<const Ed25519Signer*>(signer.get())) return e->public_key_hex();
  return "";
}

struct RunOptions {
  Clock clock;                        // default: the scenario's stepping clock
  std::optional<std::string> store;   // also persist records here
};

inline ScenarioReport run_scenario(const Scenario& s, RunOptions opt = {}) {
  s.validate();
  if (!build_graph(s.model, initial_weights(s.model, s.seed)).grade_flow().back().contains(0))
    throw ParseError(s.name + ": model output has no scalar part to compare with the target");
  Clock clock = opt.clock ? opt.clock : stepping_clock(s.clock_start, s.clock_step);
  const auto signer = scenario_signer(s);
  ScenarioReport rep;
  rep.name = s.name;
  rep.seed = s.seed;
  rep.stream = to_string(s.stream.kind);
  rep.steps = s.steps;
  rep.public_key_hex = scenario_public_key(s);
  std::optional<RecordStore> store;
  if (opt.store) {
    store.emplace(*opt.store);
    store->put_text("model.json", canonical(s.model.to_json()));
    store->put_text("pubkey", rep.public_key_hex + "\n");
  }

  // Initial model.
  DataStream stream(s, 1);
  DataStream history(s, 2);
  const WeightsFile w0 = initial_weights(s.model, s.seed);
  auto graph = std::make_shared<const LossGraph<Posit>>(build_graph(s.model, w0));
  FitJob first(graph, build_params(s.model, w0), history.take(s.train.samples, 0), s.train, s.seed ^ 0x1f);
  first.finish();
  const WeightsFile w1 = export_weights(*graph, first.theta());
  std::map<uint64_t, ResidualStats> stats{{1, residual_stats(*graph, first.theta(), first.data())}};
  rep.initial_loss = static_cast<double>(decode(loss(*graph, first.theta(), first.data())));
  rep.final_loss = rep.initial_loss;

  const Histogram model_hist = detector_model(s, stats[1]);
  double epsilon = 0;
  if (s.detector.epsilon) {
    epsilon = *s.detector.epsilon;
  } else {
    epsilon = cached_calibration(model_hist, s, static_cast<std::size_t>(std::max<int64_t>(
                                                    s.steps, static_cast<int64_t>(s.detector.window_size))))
                  .epsilon;
    rep.epsilon_calibrated = true;
  }
  rep.epsilon = epsilon;
  Histogram active_hist = model_hist;

  VersionRecord root = draft_record(nullptr, elaborate(w1, s.model).certificate, w1.hash(), 1, 0.0, clock());
  root.evidence_sources.push_back({"initial_training", -static_cast<int64_t>(s.train.samples), 0});
  root = sign_record(root, signer.get());
  if (store) {
    store->append(root);
    store->put_text(RecordStore::weights_name(1), w1.bytes());
  }

  EngineConfig ec;
  ec.policy = s.policy;
  ec.public_key_hex = rep.public_key_hex;
  ec.inference_ticks = s.inference_ticks;
  ec.training_ticks = s.training_ticks;
  RotationEngine engine(make_served(s.model, w1, 1), root, ec);
  std::map<uint64_t, WeightsFile> weights_by_version{{1, w1}};
  engine.on_commit([&](const VersionRecord& r) {
    if (store) {
      store->append(r);
      store->put_text(RecordStore::weights_name(r.version_id), weights_by_version.at(r.version_id).bytes());
    }
  });

  ShiftDetector detector(s.detector, epsilon);

  struct Retrain {
    int64_t trigger = 0;
    double kl = 0;
    int64_t from = 0;
    Dataset<Posit> data;
    std::optional<FitJob> fit;
    bool submitted = false;
    std::optional<ResidualStats> stats;
  };
  std::optional<Retrain> job;

  auto make_candidate = [&]() -> Candidate {
    const VersionRecord& head = engine.chain().back();
    const uint64_t v = head.version_id + 1;
    const WeightsFile w = export_weights(job->fit->graph(), job->fit->theta());
    job->stats = residual_stats(job->fit->graph(), job->fit->theta(), job->fit->data());
    VersionRecord r = draft_record(&head, elaborate(w, s.model).certificate, w.hash(), v, job->kl, clock());
    r.evidence_sources.push_back(
        {"residual_window", job->trigger - static_cast<int64_t>(s.detector.window_size) + 1, job->trigger});
    r.evidence_sources.push_back(
        {"retraining_sample", job->from, job->from + static_cast<int64_t>(job->data.size()) - 1});
    weights_by_version[v] = w;
    job->submitted = true;
    return {s.model, w, sign_record(r, signer.get())};
  };

  engine.set_trainer([&]() -> std::optional<Candidate> {
    if (!job || !job->fit || job->submitted) return std::nullopt;
    job->fit->run(s.train.steps_per_tick);
    if (!job->fit->done()) return std::nullopt;
    return make_candidate();
  });

  std::map<uint64_t, std::pair<int64_t, double>> waiting;  // request -> (observation, target)
  std::size_t seen_responses = 0, seen_outcomes = 0;
  int64_t submitted = 0;

  auto drain_events = [&] {
    const auto& rs = engine.responses();
    for (; seen_responses < rs.size(); ++seen_responses) {
      const Response& r = rs[seen_responses];
      const auto node = waiting.extract(r.request_id);
      const auto [obs, target] = node.mapped();
      if (job) continue;  // the detector waits out retraining and rotation
      const ResidualStats& st = stats.at(r.version);
      const double z = (target - static_cast<double>(r.y.real(0)) - st.mean) / st.sd;
      const ShiftSignal sig = detector.observe_and_check(z, active_hist);
      if (!sig.window_full) continue;
      rep.max_kl = std::max(rep.max_kl, sig.kl);
      if (s.kl_stride && obs % static_cast<int64_t>(s.kl_stride) == 0) rep.kl_trajectory.push_back({obs, sig.kl});
      if (sig.rotate) {
        rep.triggers.push_back({obs, sig.kl, r.version});
        job.emplace();
        job->trigger = obs;
        job->kl = sig.kl;
        job->from = submitted;
      }
    }
    const auto& os = engine.outcomes();
    for (; seen_outcomes < os.size(); ++seen_outcomes) {
      const RotationOutcome& o = os[seen_outcomes];
      rep.rotations.push_back(
          {submitted, o.candidate_version, o.committed, o.refusal ? std::string(to_string(*o.refusal)) + ": " + o.detail : ""});
      if (o.committed && job && job->stats) {
        stats[o.candidate_version] = *job->stats;
        active_hist = detector_model(s, *job->stats);
        rep.final_loss = static_cast<double>(decode(loss(job->fit->graph(), job->fit->theta(), job->fit->data())));
      }
      job.reset();
      detector.reset();
    }
  };

  const unsigned period = s.inference_ticks + s.training_ticks;
  for (int64_t t = 0; t < s.steps; ++t) {
    Sample<Posit> obs = stream.next(t);
    if (job && !job->fit) {
      job->data.push_back(obs);
      if (job->data.size() == s.train.retrain_samples) {
        const ServedModel& active = engine.active();
        job->fit.emplace(active.graph, active.params, std::move(job->data), s.train, s.seed ^ static_cast<uint64_t>(t));
        job->data.clear();
      }
    }
    const auto id = engine.submit(obs.x);
    if (!id) throw Error("engine refused a request");
    waiting[*id] = {t, static_cast<double>(obs.y.real(0))};
    ++submitted;
    for (unsigned i = 0; i < period; ++i) engine.step();
    // With no training ticks the retraining runs beside the loop.
    if (s.training_ticks == 0 && job && job->fit && !job->submitted) {
      job->fit->finish();
      engine.begin_rotation(make_candidate());
    }
    drain_events();
  }
  engine.clear_trainer();
  rep.retraining_pending = job.has_value() && !job->submitted;
  engine.drain();
  drain_events();

  rep.requests = engine.received();
  rep.responses = engine.responses().size();
  rep.chain = engine.chain();
  rep.chain_verdict = verify_chain(rep.chain, rep.public_key_hex, s.policy);
  rep.fingerprints_before = rep.chain.front().certificate.to_json().at("cayley");
  rep.fingerprints_after = rep.chain.back().certificate.to_json().at("cayley");
  rep.memory = memory_table(s);
  return rep;
}

// Canonical bytes of every record in order, for replay comparison.
inline std::string chain_bytes(const std::vector<VersionRecord>& chain) {
  std::string out;
  for (const auto& r : chain) out += r.bytes() + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Off-grade contamination: the same full-batch training of a single-grade
// weight run three ways.

struct ContrastReport {
  std::string weight;
  int grade = 0;
  int fraction_bits = 0;
  std::size_t steps = 0;
  std::vector<double> typed;    // grade-typed posit pipeline
  std::vector<double> dense;    // dense float64 truncated after every operation
  std::vector<double> control;  // dense exact float64

  static std::vector<double> moving_average(const std::vector<double>& v, std::size_t k) {
    std::vector<double> out;
    double s = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      s += v[i];
      if (i >= k) s -= v[i - k];
      if (i + 1 >= k) out.push_back(s / static_cast<double>(k));
    }
    return out;
  }
  double max_of(const std::vector<double>& v) const { return v.empty() ? 0 : *std::max_element(v.begin(), v.end()); }
  std::optional<std::size_t> first_positive(const std::vector<double>& v) const {
    for (std::size_t i = 0; i < v.size(); ++i)
      if (v[i] > 0) return i + 1;
    return std::nullopt;
  }
  // Number of places the k-step moving average goes down.
  std::size_t ma_decreases(const std::vector<double>& v, std::size_t k = 10) const {
    const auto ma = moving_average(v, k);
    std::size_t n = 0;
    for (std::size_t i = 1; i < ma.size(); ++i) n += ma[i] < ma[i - 1];
    return n;
  }

  json to_json(std::size_t stride = 100) const {
    json rows = json::array();
    for (std::size_t i = 0; i < steps; ++i)
      if ((i + 1) % stride == 0 || i == 0)
        rows.push_back({i + 1, format_real(typed[i]), format_real(dense[i]), format_real(control[i])});
    const auto fp = first_positive(dense);
    return {{"weight", weight},
            {"grade", grade},
            {"fraction_bits", fraction_bits},
            {"steps", steps},
            {"columns", {"step", "typed", "dense", "control"}},
            {"rows", rows},
            {"typed_max", format_real(max_of(typed))},
            {"control_max", format_real(max_of(control))},
            {"dense_final", format_real(dense.empty() ? 0.0 : dense.back())},
            {"dense_first_positive", fp ? json(*fp) : json(nullptr)},
            {"dense_ma10_decreases", ma_decreases(dense)}};
  }

  std::string summary(std::size_t stride = 1000) const {
    std::ostringstream o;
    o << "off-grade energy of weight " << weight << " (grade " << grade << "), " << steps << " steps\n";
    o << "   step        typed        dense(f=" << fraction_bits << ")   float64\n";
    for (std::size_t i = 0; i < steps; ++i) {
      if ((i + 1) % stride != 0 && i != 0) continue;
      char buf[128];
      std::snprintf(buf, sizeof buf, "  %6zu  %11.4g  %14.4g  %11.4g\n", i + 1, typed[i], dense[i], control[i]);
      o << buf;
    }
    const auto fp = first_positive(dense);
    o << "  typed max " << max_of(typed) << ", float64 max " << max_of(control) << ", dense first > 0 at step "
      << (fp ? std::to_string(*fp) : std::string("never")) << ", 10-step average decreases " << ma_decreases(dense)
      << " time(s)\n";
    return o.str();
  }
};

namespace detail {

// Full gradient by one forward pass per coefficient (unit tangents).
template <class T>
Params<T> coordinate_gradient(const LossGraph<T>& g, const Params<T>& theta, const Dataset<T>& data) {
  Params<T> grad;
  Params<T> dir = g.zero_params();
  for (std::size_t k = 0; k < theta.size(); ++k) {
    Multivector<T> gk(theta[k].signature(), theta[k].grades(), theta[k].ctx(),
                      g.output_dim() * g.output_dim() / theta[k].dim());
    for (std::size_t i = 0; i < theta[k].size(); ++i) {
      dir[k].coeff(i) = scalar_traits<T>::from_real(1, theta[k].ctx());
      gk.coeff(i) = directional_derivative(g, theta, dir, data).second;
      dir[k].coeff(i) = scalar_traits<T>::zero(theta[k].ctx());
    }
    grad.push_back(std::move(gk));
  }
  return grad;
}

template <class T>
double off_grade_energy(const Multivector<T>& w, int grade) {
  double e = 0;
  for (std::size_t i = 0; i < w.size(); ++i)
    if (grade_of(w.blades()[i]) != grade) {
      const double c = static_cast<double>(scalar_traits<T>::to_real(w.coeff(i)));
      e += c * c;
    }
  return e;
}

template <class T>
std::vector<double> contrast_run(const Signature& sig, typename scalar_traits<T>::context ctx, GradeSet in_grades,
                                 GradeSet w_grades, const Multivector<double>& w_true,
                                 const std::vector<std::pair<Multivector<double>, Multivector<double>>>& data_exact,
                                 int grade, std::size_t steps, double rate) {
  LossGraph<T> g(sig, ctx, in_grades);
  g.add_product("W", w_grades, {});
  const GradeSet out_grades = g.grade_flow().back();
  auto convert = [&](const Multivector<double>& m, GradeSet gs) {
    Multivector<T> r(sig, gs, ctx);
    for (std::size_t i = 0; i < m.size(); ++i) {
      const Blade b = m.blades()[i];
      if (!r.has(b)) continue;
      // Targets stay exact in the float pipelines; posits round once.
      if constexpr (std::is_same_v<T, double>)
        r.coeff(static_cast<std::size_t>(r.slot_of(b))) = m.coeff(i);
      else
        r.set_real(b, m.coeff(i));
    }
    return r;
  };
  Dataset<T> data;
  for (const auto& [x, y] : data_exact) data.push_back({convert(x, in_grades), convert(y, out_grades)});
  Params<T> theta{convert(w_true, w_grades)};
  const T eta = scalar_traits<T>::from_real(rate, ctx);
  std::vector<double> energy;
  energy.reserve(steps);
  for (std::size_t n = 0; n < steps; ++n) {
    const Params<T> grad = coordinate_gradient(g, theta, data);
    theta[0] = grade_restricted_step(theta[0], grad[0], eta, step_dim(theta[0], grad[0]));
    energy.push_back(off_grade_energy(theta[0], grade));
  }
  return energy;
}

}  // namespace detail

inline ContrastReport contrast_experiment(const Scenario& s) {
  const ModelSpec& m = s.model;
  const LayerSpec* w = nullptr;
  for (const auto& l : m.layers) {
    if (l.kind != LayerKind::product) continue;
    if (s.contrast.weight.empty() ? l.grades.to_vector().size() == 1 && !l.grades.contains(0) : l.name == s.contrast.weight) {
      w = &l;
      break;
    }
  }
  if (!w) throw ParseError(s.name + ": contrast needs a product weight of a single non-zero grade");
  const auto gv = w->grades.to_vector();
  if (gv.size() != 1 || gv[0] == 0) throw ParseError(s.name + ": contrast weight " + w->name + " must have one non-zero grade");
  const int k = gv[0];
  const Signature& sig = m.signature;
  const GradeSet all = GradeSet::all(sig.dims());
  // A bare scalar input would let the weight pass straight through.
  GradeSet in = m.input_grades & GradeSet(~1u);
  if (in.empty()) in = GradeSet{1};

  // Starting values carry 9 significant bits: exact in every pipeline, while
  // their products are not exact at 8 fraction bits.
  std::mt19937_64 rng(detail::derive_seed({s.seed, 0xc0de}));
  std::uniform_real_distribution<double> mag(0.25, 1.0);
  auto draw = [&] { return truncate_fraction((rng() & 1) ? mag(rng) : -mag(rng), 8); };
  const Float64Context exact{};
  Multivector<double> w_true(sig, all, exact);
  for (std::size_t i = 0; i < w_true.size(); ++i)
    if (grade_of(w_true.blades()[i]) == k) w_true.coeff(i) = draw();
  std::vector<std::pair<Multivector<double>, Multivector<double>>> data;
  for (std::size_t n = 0; n < s.contrast.samples; ++n) {
    Multivector<double> x(sig, all, exact);
    for (std::size_t i = 0; i < x.size(); ++i)
      if (in.contains(grade_of(x.blades()[i]))) x.coeff(i) = draw();
    Multivector<double> y = geometric_product(w_true, x);
    data.push_back({std::move(x), std::move(y)});
  }

  ContrastReport r;
  r.weight = w->name;
  r.grade = k;
  r.fraction_bits = s.contrast.fraction_bits;
  r.steps = s.contrast.steps;
  r.typed = detail::contrast_run<Posit>(sig, m.format, in, w->grades, w_true, data, k, r.steps, s.contrast.rate);
  r.dense = detail::contrast_run<double>(sig, Float64Context{s.contrast.fraction_bits}, all, all, w_true, data, k,
                                         r.steps, s.contrast.rate);
  r.control = detail::contrast_run<double>(sig, exact, all, all, w_true, data, k, r.steps, s.contrast.rate);
  return r;
}

}  // namespace admkit
