#pragma once

// Declared model structure and the canonical weights file. A ModelSpec says
// what the layers are and what each weight is allowed to be; a WeightsFile
// holds posit bit patterns for every product weight and rotor.

#include <admkit/autodiff.hpp>
#include <admkit/canonical.hpp>

#include <map>
#include <random>
#include <set>

namespace admkit {

struct LayerSpec {
  LayerKind kind = LayerKind::product;
  std::string name;
  GradeSet grades;  // product weight or rotor grades
  DimVec dim;       // product weight dimension
  GradeSet keep;    // project
  Activation activation = Activation::identity;
};

inline const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::product:
      return "product";
    case LayerKind::sandwich:
      return "sandwich";
    case LayerKind::project:
      return "project";
    case LayerKind::nonlinearity:
      return "nonlinearity";
  }
  return "?";
}

inline LayerKind parse_layer_kind(std::string_view s) {
  if (s == "product") return LayerKind::product;
  if (s == "sandwich") return LayerKind::sandwich;
  if (s == "project") return LayerKind::project;
  if (s == "nonlinearity") return LayerKind::nonlinearity;
  throw ParseError("unknown layer kind '" + std::string(s) + "'");
}

inline json grades_json(GradeSet g) { return json(g.to_vector()); }
inline GradeSet grades_from(const json& j, const std::string& where) {
  if (!j.is_array()) throw ParseError(where + ": grade list must be an array");
  GradeSet g;
  int last = -1;
  for (const auto& x : j) {
    if (!x.is_number_integer()) throw ParseError(where + ": grades must be integers");
    const int v = x.get<int>();
    if (v <= last) throw ParseError(where + ": grades must be strictly increasing");
    g.insert(v);
    last = v;
  }
  return g;
}

inline json format_json(const PositFormat& f) { return {{"nbits", f.nbits}, {"es", f.es}, {"rmax", f.rmax}}; }
inline PositFormat format_from(const json& j, const std::string& where) {
  expect_keys(j, {"nbits", "es", "rmax"}, where);
  PositFormat f{field<int>(j, "nbits", where), field<int>(j, "es", where), field<int>(j, "rmax", where)};
  f.validate();
  return f;
}

inline json signature_json(const Signature& s) { return json::array({s.p, s.q, s.r}); }
inline Signature signature_from(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 3) throw ParseError(where + ": signature must be [p,q,r]");
  Signature s{j[0].get<int>(), j[1].get<int>(), j[2].get<int>()};
  s.validate();
  return s;
}

struct ModelSpec {
  PositFormat format = kDefaultFormat;
  Signature signature{3, 0, 0};
  GradeSet input_grades{0, 1};
  DimVec input_dim;
  DimVec output_dim;
  double rotor_tolerance = static_cast<double>(kDefaultRotorTolerance);
  std::vector<LayerSpec> layers;

  void validate() const {
    format.validate();
    signature.validate();
    std::set<std::string> names;
    for (const auto& l : layers) {
      if (l.name.empty()) throw ParseError("layer with empty name");
      if (l.name == "input" || l.name == "output") throw ParseError("layer name '" + l.name + "' is reserved");
      if (!names.insert(l.name).second) throw ParseError("duplicate layer name '" + l.name + "'");
    }
    if (!(rotor_tolerance > 0)) throw ParseError("rotor tolerance must be positive");
  }

  // Names of the layers that own a weights-file record, in order.
  std::vector<const LayerSpec*> weighted() const {
    std::vector<const LayerSpec*> v;
    for (const auto& l : layers)
      if (l.kind == LayerKind::product || l.kind == LayerKind::sandwich) v.push_back(&l);
    return v;
  }

  json to_json() const {
    json ls = json::array();
    for (const auto& l : layers) {
      json o{{"kind", to_string(l.kind)}, {"name", l.name}};
      switch (l.kind) {
        case LayerKind::product:
          o["grades"] = grades_json(l.grades);
          o["dim"] = l.dim.to_string();
          break;
        case LayerKind::sandwich:
          o["grades"] = grades_json(l.grades);
          break;
        case LayerKind::project:
          o["keep"] = grades_json(l.keep);
          break;
        case LayerKind::nonlinearity:
          o["activation"] = admkit::to_string(l.activation);
          break;
      }
      ls.push_back(o);
    }
    return {{"format", format_json(format)},
            {"signature", signature_json(signature)},
            {"input", {{"grades", grades_json(input_grades)}, {"dim", input_dim.to_string()}}},
            {"output_dim", output_dim.to_string()},
            {"rotor_tolerance", format_real(rotor_tolerance)},
            {"layers", ls}};
  }

  static ModelSpec from_json(const json& j) {
    const std::string w = "model spec";
    expect_keys(j, {"format", "signature", "input", "output_dim", "rotor_tolerance", "layers"}, w);
    ModelSpec s;
    s.format = format_from(j.at("format"), w + " format");
    s.signature = signature_from(j.at("signature"), w);
    const json& in = j.at("input");
    expect_keys(in, {"grades", "dim"}, w + " input");
    s.input_grades = grades_from(in.at("grades"), w + " input");
    s.input_dim = DimVec::parse(field<std::string>(in, "dim", w));
    s.output_dim = DimVec::parse(field<std::string>(j, "output_dim", w));
    s.rotor_tolerance = parse_real(field<std::string>(j, "rotor_tolerance", w));
    for (const auto& o : j.at("layers")) {
      LayerSpec l;
      l.kind = parse_layer_kind(field<std::string>(o, "kind", w));
      l.name = field<std::string>(o, "name", w);
      const std::string lw = w + " layer " + l.name;
      switch (l.kind) {
        case LayerKind::product:
          expect_keys(o, {"kind", "name", "grades", "dim"}, lw);
          l.grades = grades_from(o.at("grades"), lw);
          l.dim = DimVec::parse(field<std::string>(o, "dim", lw));
          break;
        case LayerKind::sandwich:
          expect_keys(o, {"kind", "name", "grades"}, lw);
          l.grades = grades_from(o.at("grades"), lw);
          break;
        case LayerKind::project:
          expect_keys(o, {"kind", "name", "keep"}, lw);
          l.keep = grades_from(o.at("keep"), lw);
          break;
        case LayerKind::nonlinearity:
          expect_keys(o, {"kind", "name", "activation"}, lw);
          l.activation = parse_activation(field<std::string>(o, "activation", lw));
          break;
      }
      s.layers.push_back(l);
    }
    s.validate();
    return s;
  }
};

// One weight or rotor as stored: every instantiated blade with its bits.
struct WeightRecord {
  std::string name;
  Signature signature{3, 0, 0};
  GradeSet grade_mask;
  DimVec dim;
  std::map<Blade, uint64_t> coeffs;

  bool operator==(const WeightRecord& o) const {
    return name == o.name && signature == o.signature && grade_mask == o.grade_mask && dim == o.dim &&
           coeffs == o.coeffs;
  }
};

inline WeightRecord record_of(const std::string& name, const Multivector<Posit>& m) {
  WeightRecord r{name, m.signature(), m.grades(), m.dim(), {}};
  for (std::size_t i = 0; i < m.size(); ++i) r.coeffs[m.blades()[i]] = m.coeff(i).bits();
  return r;
}

// Throws GradeError when the record holds a blade its mask does not allow.
inline Multivector<Posit> to_multivector(const WeightRecord& r, const PositFormat& f) {
  Multivector<Posit> m(r.signature, r.grade_mask, f, r.dim);
  for (const auto& [b, bits] : r.coeffs) {
    if (b >= static_cast<Blade>(r.signature.blade_count()))
      throw GradeError("weight " + r.name + ": blade " + uint_hex(b) + " outside the algebra");
    if (!m.has(b))
      throw GradeError("weight " + r.name + ": blade " + r.signature.blade_name(b) + " (grade " +
                       std::to_string(grade_of(b)) + ") outside grade mask {" + r.grade_mask.to_string() + "}");
    m.set(b, Posit::from_bits(f, bits));
  }
  return m;
}

struct WeightsFile {
  PositFormat format = kDefaultFormat;
  std::vector<WeightRecord> weights;

  const WeightRecord* find(const std::string& name) const {
    for (const auto& w : weights)
      if (w.name == name) return &w;
    return nullptr;
  }
  WeightRecord* find(const std::string& name) {
    for (auto& w : weights)
      if (w.name == name) return &w;
    return nullptr;
  }

  json to_json() const {
    json ws = json::array();
    for (const auto& w : weights) {
      json c = json::object();
      for (const auto& [b, bits] : w.coeffs) c[uint_hex(b)] = uint_hex(bits);
      ws.push_back({{"name", w.name},
                    {"signature", signature_json(w.signature)},
                    {"grade_mask", grades_json(w.grade_mask)},
                    {"dim", w.dim.to_string()},
                    {"coeffs", c}});
    }
    return {{"format", format_json(format)}, {"weights", ws}};
  }

  static WeightsFile from_json(const json& j) {
    expect_keys(j, {"format", "weights"}, "weights file");
    WeightsFile f;
    f.format = format_from(j.at("format"), "weights file format");
    for (const auto& o : j.at("weights")) {
      const std::string w = "weights file record";
      expect_keys(o, {"name", "signature", "grade_mask", "dim", "coeffs"}, w);
      WeightRecord r;
      r.name = field<std::string>(o, "name", w);
      r.signature = signature_from(o.at("signature"), w + " " + r.name);
      r.grade_mask = grades_from(o.at("grade_mask"), w + " " + r.name);
      r.dim = DimVec::parse(field<std::string>(o, "dim", w));
      if (!o.at("coeffs").is_object()) throw ParseError(w + " " + r.name + ": coeffs must be an object");
      for (const auto& [k, v] : o.at("coeffs").items()) {
        if (!v.is_string()) throw ParseError(w + " " + r.name + ": coefficient bits must be hex strings");
        const uint64_t bits = parse_uint_hex(v.get<std::string>());
        if ((bits & ~f.format.mask()) != 0) throw ParseError(w + " " + r.name + ": bits wider than the format");
        r.coeffs[static_cast<Blade>(parse_uint_hex(k))] = bits;
      }
      f.weights.push_back(std::move(r));
    }
    return f;
  }

  std::string bytes() const { return canonical(to_json()); }
  std::string hash() const { return sha256_hex(bytes()); }
  static WeightsFile parse(std::string_view text) { return from_json(parse_canonical(text, "weights file")); }
};

// Rotors in the graph come from the weights file; a rotor that fails its
// check makes the graph unbuildable.
inline LossGraph<Posit> build_graph(const ModelSpec& spec, const WeightsFile& w) {
  spec.validate();
  LossGraph<Posit> g(spec.signature, spec.format, spec.input_grades, spec.input_dim);
  for (const auto& l : spec.layers) {
    switch (l.kind) {
      case LayerKind::product:
        g.add_product(l.name, l.grades, l.dim);
        break;
      case LayerKind::sandwich: {
        const WeightRecord* r = w.find(l.name);
        if (!r) throw Error("no rotor record for " + l.name);
        g.add_sandwich(l.name, to_multivector(*r, spec.format), spec.rotor_tolerance);
        break;
      }
      case LayerKind::project:
        g.add_project(l.name, l.keep);
        break;
      case LayerKind::nonlinearity:
        g.add_nonlinearity(l.name, l.activation);
        break;
    }
  }
  return g;
}

inline Params<Posit> build_params(const ModelSpec& spec, const WeightsFile& w) {
  Params<Posit> p;
  for (const auto& l : spec.layers) {
    if (l.kind != LayerKind::product) continue;
    const WeightRecord* r = w.find(l.name);
    if (!r) throw Error("no weight record for " + l.name);
    p.push_back(to_multivector(*r, spec.format));
  }
  return p;
}

// Uniform random product weights in [-scale, scale] on every declared blade;
// each rotor turns the first non-degenerate basis plane by `angle`.
inline WeightsFile initial_weights(const ModelSpec& spec, uint64_t seed, double scale = 0.5, double angle = 0.3) {
  spec.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  WeightsFile f{spec.format, {}};
  const Signature& sig = spec.signature;
  for (const LayerSpec* l : spec.weighted()) {
    Multivector<Posit> m(sig, l->grades, spec.format, l->kind == LayerKind::product ? l->dim : DimVec{});
    if (l->kind == LayerKind::product) {
      for (std::size_t i = 0; i < m.size(); ++i) m.set_real(m.blades()[i], u(rng));
    } else {
      const int lo = sig.r;
      const Blade plane = lo + 2 <= sig.dims() ? static_cast<Blade>((1u << lo) | (1u << (lo + 1))) : Blade{3};
      if (m.has(0)) m.set_real(0, 1);
      if (sig.dims() >= 2 && m.has(plane)) {
        const auto r = make_rotor<Posit>(sig, plane, angle, spec.format);
        m.set(0, r.get(0));
        m.set(plane, r.get(plane));
      }
    }
    f.weights.push_back(record_of(l->name, m));
  }
  return f;
}

// Weights file holding the current weights and the graph's frozen rotors.
inline WeightsFile export_weights(const LossGraph<Posit>& g, const Params<Posit>& theta) {
  WeightsFile f{g.ctx(), {}};
  std::size_t k = 0;
  for (const auto& l : g.layers()) {
    if (l.kind == LayerKind::product) f.weights.push_back(record_of(l.name, theta.at(k++)));
    if (l.kind == LayerKind::sandwich) f.weights.push_back(record_of(l.name, *l.rotor));
  }
  return f;
}

}  // namespace admkit
