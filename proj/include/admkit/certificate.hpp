#pragma once

// Structural certificate of a weights file against its model spec, and the
// annotation-level difference between two certificates.

#include <admkit/model.hpp>

namespace admkit {

struct Violation {
  std::string subject;  // weight, rotor or layer name
  std::string message;
  std::string to_string() const { return subject + ": " + message; }
};

// Sections: weights, rotors, dim_chain (keyed by layer name), cayley; plus the
// scalar fields format, signature, dim_chain_ok, dim_chain_message, valid.
class Certificate {
 public:
  Certificate() : j_(empty_json()) {}
  explicit Certificate(json j) : j_(std::move(j)) { check_shape(); }

  static json empty_json() {
    return {{"format", ""},
            {"signature", ""},
            {"weights", json::object()},
            {"rotors", json::object()},
            {"dim_chain", json::object()},
            {"dim_chain_ok", false},
            {"dim_chain_message", ""},
            {"cayley", json::object()},
            {"valid", false}};
  }

  const json& to_json() const { return j_; }
  json& raw() { return j_; }
  bool valid() const { return j_.at("valid").get<bool>(); }
  std::string bytes() const { return canonical(j_); }
  bool operator==(const Certificate& o) const { return j_ == o.j_; }

 private:
  void check_shape() const {
    expect_keys(j_,
                {"format", "signature", "weights", "rotors", "dim_chain", "dim_chain_ok", "dim_chain_message",
                 "cayley", "valid"},
                "certificate");
    for (const char* s : {"weights", "rotors", "dim_chain", "cayley"})
      if (!j_.at(s).is_object()) throw ParseError(std::string("certificate section ") + s + " must be an object");
    if (!j_.at("valid").is_boolean() || !j_.at("dim_chain_ok").is_boolean())
      throw ParseError("certificate verdicts must be booleans");
  }

  json j_;
};

struct Elaboration {
  Certificate certificate;
  std::vector<Violation> violations;
  bool ok() const { return violations.empty(); }
};

namespace detail {

inline std::string fingerprint(const std::vector<EntryTriple>& e) {
  json a = json::array();
  for (const auto& t : e) a.push_back({t.a, t.b, t.out, t.sign});
  return sha256_hex(canonical(a));
}

inline json blade_list(const WeightRecord& r) {
  json a = json::array();
  for (const auto& [b, bits] : r.coeffs) a.push_back(uint_hex(b));
  return a;
}

}  // namespace detail

// Runs every check and keeps going, so the violation list is complete.
inline Elaboration elaborate(const WeightsFile& w, const ModelSpec& spec) {
  Elaboration out;
  json c = Certificate::empty_json();
  auto fail = [&](const std::string& subject, const std::string& msg) { out.violations.push_back({subject, msg}); };

  c["format"] = w.format.to_string();
  c["signature"] = spec.signature.to_string();
  if (!(w.format == spec.format))
    fail("format", "weights are " + w.format.to_string() + ", spec requires " + spec.format.to_string());

  std::set<std::string> expected;
  for (const LayerSpec* l : spec.weighted()) expected.insert(l->name);
  for (const auto& r : w.weights)
    if (!expected.count(r.name)) fail(r.name, "record has no layer in the model spec");

  std::vector<LayerDims> chain{{spec.input_dim, spec.input_dim}};
  json entries = json::object();
  entries["input"] = {{"in", spec.input_dim.to_string()}, {"out", spec.input_dim.to_string()}};
  DimVec cur = spec.input_dim;   // declared flow
  GradeSet flow = spec.input_grades;
  for (const auto& l : spec.layers) {
    LayerDims d{cur, cur};
    const WeightRecord* r = (l.kind == LayerKind::product || l.kind == LayerKind::sandwich) ? w.find(l.name) : nullptr;
    if ((l.kind == LayerKind::product || l.kind == LayerKind::sandwich) && !r) fail(l.name, "missing from weights file");
    if (r) {
      if (!(r->signature == spec.signature))
        fail(l.name, "signature " + r->signature.to_string() + ", spec requires " + spec.signature.to_string());
      if (!(r->grade_mask == l.grades))
        fail(l.name, "grade mask {" + r->grade_mask.to_string() + "}, spec declares {" + l.grades.to_string() + "}");
      for (const auto& [b, bits] : r->coeffs) {
        if (b >= static_cast<Blade>(r->signature.blade_count()) || !r->grade_mask.contains(grade_of(b)))
          fail(l.name, "blade " + (b < static_cast<Blade>(r->signature.blade_count()) ? r->signature.blade_name(b)
                                                                                      : uint_hex(b)) +
                           " (grade " + std::to_string(grade_of(b)) + ") outside grade mask {" +
                           r->grade_mask.to_string() + "}");
        if ((bits & ~w.format.mask()) != 0 || (w.format.nbits < 64 && bits == w.format.nar_bits()))
          fail(l.name, "blade " + uint_hex(b) + " holds NaR or an out-of-format pattern");
      }
      c["weights"][l.name] = {{"grade_mask", r->grade_mask.to_string()},
                              {"blades", detail::blade_list(*r)},
                              {"dim", r->dim.to_string()},
                              {"kind", to_string(l.kind)}};
    }
    switch (l.kind) {
      case LayerKind::product: {
        const DimVec wd = r ? r->dim : l.dim;
        if (r && r->dim != l.dim) fail(l.name, "dimension [" + r->dim.to_string() + "], spec declares [" +
                                                   l.dim.to_string() + "]");
        d.out = wd * cur;
        cur = l.dim * cur;
        const GradeSet wg = r ? r->grade_mask : l.grades;
        const auto triples = instantiated_entries(spec.signature, wg & GradeSet::all(spec.signature.dims()), flow);
        c["cayley"][l.name] = {{"entries", triples.size()}, {"fingerprint", detail::fingerprint(triples)}};
        flow = grade_infer(wg & GradeSet::all(spec.signature.dims()), flow, spec.signature);
        break;
      }
      case LayerKind::sandwich: {
        if (r && !r->dim.is_dimensionless()) fail(l.name, "rotor must be dimensionless, got [" + r->dim.to_string() + "]");
        if (r) {
          json rot{{"tolerance", format_real(spec.rotor_tolerance)}, {"residual", ""}, {"pass", false}};
          try {
            WeightRecord even = *r;
            std::erase_if(even.coeffs, [&](const auto& kv) { return !r->grade_mask.contains(grade_of(kv.first)); });
            const auto m = to_multivector(even, w.format);
            const RotorCheck rc = rotor_check(m, spec.rotor_tolerance);
            rot["residual"] = format_real(static_cast<double>(rc.residual));
            rot["pass"] = rc.pass;
            if (!rc.pass)
              fail(l.name, "rotor residual " + format_real(static_cast<double>(rc.residual)) + " exceeds tolerance " +
                               format_real(spec.rotor_tolerance));
          } catch (const Error& e) {
            fail(l.name, std::string("rotor check failed: ") + e.what());
          }
          c["rotors"][l.name] = rot;
        }
        break;
      }
      case LayerKind::project:
        flow = flow & l.keep;
        break;
      case LayerKind::nonlinearity:
        if (l.activation != Activation::identity && !cur.is_dimensionless())
          fail(l.name, admkit::to_string(l.activation) + " applied to dimensional value [" + cur.to_string() + "]");
        break;
    }
    chain.push_back(d);
    entries[l.name] = {{"in", d.in.to_string()}, {"out", d.out.to_string()}};
  }
  chain.push_back({spec.output_dim, spec.output_dim});
  entries["output"] = {{"in", spec.output_dim.to_string()}, {"out", spec.output_dim.to_string()}};
  const ChainReport report = check_chain(chain);
  c["dim_chain"] = entries;
  c["dim_chain_ok"] = report.ok;
  c["dim_chain_message"] = report.ok ? "" : report.message();
  if (!report.ok) fail("dim_chain", report.message());
  c["valid"] = out.violations.empty();
  out.certificate = Certificate(std::move(c));
  return out;
}

struct DiffEntry {
  std::string section;
  std::string key;    // weight/rotor/layer name, empty for scalar fields
  std::string field;  // annotation name, empty for whole-entry adds/removes
  std::string change; // added | removed | changed
  json before;
  json after;

  json to_json() const {
    return {{"section", section}, {"key", key}, {"field", field}, {"change", change}, {"old", before}, {"new", after}};
  }
};

struct CertificateDiff {
  std::vector<DiffEntry> entries;
  bool empty() const { return entries.empty(); }
  json to_json() const {
    json a = json::array();
    for (const auto& e : entries) a.push_back(e.to_json());
    return a;
  }
  std::vector<const DiffEntry*> in(const std::string& section) const {
    std::vector<const DiffEntry*> v;
    for (const auto& e : entries)
      if (e.section == section) v.push_back(&e);
    return v;
  }
};

// Per-section symmetric difference; keyed sections are compared field by field.
inline CertificateDiff certificate_diff(const Certificate& a, const Certificate& b) {
  CertificateDiff d;
  const json& x = a.to_json();
  const json& y = b.to_json();
  for (const char* s : {"format", "signature", "dim_chain_ok", "dim_chain_message", "valid"})
    if (x.at(s) != y.at(s)) d.entries.push_back({s, "", "", "changed", x.at(s), y.at(s)});
  for (const char* s : {"weights", "rotors", "dim_chain", "cayley"}) {
    const json& xs = x.at(s);
    const json& ys = y.at(s);
    std::set<std::string> keys;
    for (const auto& [k, v] : xs.items()) keys.insert(k);
    for (const auto& [k, v] : ys.items()) keys.insert(k);
    for (const auto& k : keys) {
      const bool in_x = xs.contains(k), in_y = ys.contains(k);
      if (in_x && !in_y) {
        d.entries.push_back({s, k, "", "removed", xs.at(k), nullptr});
      } else if (!in_x && in_y) {
        d.entries.push_back({s, k, "", "added", nullptr, ys.at(k)});
      } else {
        const json& ex = xs.at(k);
        const json& ey = ys.at(k);
        std::set<std::string> fields;
        for (const auto& [f, v] : ex.items()) fields.insert(f);
        for (const auto& [f, v] : ey.items()) fields.insert(f);
        for (const auto& f : fields) {
          const json before = ex.contains(f) ? ex.at(f) : json(nullptr);
          const json after = ey.contains(f) ? ey.at(f) : json(nullptr);
          if (before != after) d.entries.push_back({s, k, f, "changed", before, after});
        }
      }
    }
  }
  return d;
}

}  // namespace admkit
