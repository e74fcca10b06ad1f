// Batch runner: reads a JSON experiment config, runs flow / pair / verify / sweep and
// writes a JSON report (plus a CSV table for sweeps).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "qtrace/cohomology.hpp"
#include "qtrace/models.hpp"
#include "qtrace/pairings.hpp"

#ifndef QTRACE_VERSION
#define QTRACE_VERSION "0.0.0"
#endif

using namespace qtrace;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitOther = 1;
constexpr int kExitSchema = 2;
constexpr int kExitCertificate = 3;
constexpr int kExitUnbounded = 4;
constexpr int kExitTolerance = 5;
constexpr int kExitIndeterminate = 6;

int exit_code(ErrorCode c) {
  switch (c) {
    case ErrorCode::schema:
    case ErrorCode::invalid_argument:
    case ErrorCode::dimension_mismatch:
      return kExitSchema;
    case ErrorCode::window_too_small:
    case ErrorCode::certificate_missing:
      return kExitCertificate;
    case ErrorCode::unbounded_support:
      return kExitUnbounded;
    case ErrorCode::formula_mismatch:
    case ErrorCode::validation_failed:
      return kExitTolerance;
    default:
      return kExitOther;
  }
}

json error_json(const Error& e) { return json{{"code", to_string(e.code())}, {"message", e.what()}}; }

struct Flags {
  std::string config;
  std::string out;
  std::optional<double> tolerance;
  std::optional<std::int64_t> window;
  std::optional<int> threads;
  std::optional<std::uint64_t> seed;
};

/// Config with every default filled in; flags override the file.
struct Config {
  std::string command;
  json doc;
  json model;
  json geometry;
  Flavor flavor = Flavor::kubo;
  std::optional<double> tolerance;
  std::int64_t window = 40;
  std::int64_t margin = 2;
  int threads = 1;
  std::uint64_t seed = 0;
  bool raw = false;
  std::vector<std::string> identities;
  int deform_sites = 10;
  std::int64_t deform_radius = 6;
  int trials = 1;
  json sweep;
};

template <class T>
T get(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::schema, std::string("config field '") + key + "': " + e.what());
  }
}

const std::vector<std::string> kIdentities = {"sum_rule", "equipartition", "kubo_kitaev",
                                              "deformation", "conjugation", "formula"};

Config load_config(const std::string& command, const Flags& flags) {
  std::ifstream in(flags.config);
  if (!in) throw Error(ErrorCode::schema, "cannot read config " + flags.config);
  Config c;
  try {
    c.doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::schema, std::string("config is not valid JSON: ") + e.what());
  }
  if (!c.doc.is_object()) throw Error(ErrorCode::schema, "config must be a JSON object");
  static const std::set<std::string> known = {"command", "model",  "geometry",   "flavor", "tolerance",
                                              "window",  "margin", "threads",    "seed",   "raw",
                                              "identities", "deformation", "sweep"};
  for (const auto& [k, v] : c.doc.items())
    if (!known.count(k)) throw Error(ErrorCode::schema, "unknown config field '" + k + "'");
  c.command = get<std::string>(c.doc, "command", command);
  if (c.command != command)
    throw Error(ErrorCode::schema, "config is for '" + c.command + "' but '" + command + "' was requested");
  if (!c.doc.contains("model")) throw Error(ErrorCode::schema, "config needs a 'model' document");
  c.model = c.doc["model"];
  c.geometry = c.doc.value("geometry", json{{"type", "standard"}, {"dim", 1}});
  const auto flavor = get<std::string>(c.doc, "flavor", "kubo");
  if (flavor == "kitaev") {
    c.flavor = Flavor::kitaev;
  } else if (flavor != "kubo") {
    throw Error(ErrorCode::schema, "flavor must be kubo or kitaev");
  }
  if (c.doc.contains("tolerance")) c.tolerance = get<double>(c.doc, "tolerance", 0.0);
  c.window = get<std::int64_t>(c.doc, "window", 40);
  c.margin = get<std::int64_t>(c.doc, "margin", 2);
  c.threads = get<int>(c.doc, "threads", 1);
  c.seed = get<std::uint64_t>(c.doc, "seed", 0);
  c.raw = get<bool>(c.doc, "raw", false);
  c.identities = get<std::vector<std::string>>(c.doc, "identities", kIdentities);
  for (const auto& id : c.identities)
    if (std::find(kIdentities.begin(), kIdentities.end(), id) == kIdentities.end())
      throw Error(ErrorCode::schema, "unknown identity '" + id + "'");
  const auto deformation = c.doc.value("deformation", json::object());
  c.deform_sites = get<int>(deformation, "sites", 10);
  c.deform_radius = get<std::int64_t>(deformation, "radius", 6);
  c.trials = get<int>(deformation, "trials", 1);
  c.sweep = c.doc.value("sweep", json());

  if (flags.tolerance) c.tolerance = flags.tolerance;
  if (flags.window) c.window = *flags.window;
  if (flags.threads) c.threads = *flags.threads;
  if (flags.seed) c.seed = *flags.seed;
  if (c.window < 1 || c.threads < 1 || c.margin < 0 || c.trials < 1 || c.deform_sites < 0)
    throw Error(ErrorCode::schema, "window, threads and trials must be positive");
  if (command == "sweep" && !c.sweep.is_object()) throw Error(ErrorCode::schema, "sweep needs a 'sweep' object");
  return c;
}

json resolved(const Config& c, const ModelInstance* m) {
  json j{{"command", c.command},
         {"model", m ? m->resolved : c.model},
         {"geometry", c.geometry},
         {"flavor", to_string(c.flavor)},
         {"tolerance", c.tolerance ? json(*c.tolerance) : json("default")},
         {"window", c.window},
         {"margin", c.margin},
         {"threads", c.threads},
         {"seed", c.seed},
         {"raw", c.raw}};
  if (c.command == "verify") {
    j["identities"] = c.identities;
    j["deformation"] = {{"sites", c.deform_sites}, {"radius", c.deform_radius}, {"trials", c.trials}};
  }
  if (c.command == "sweep") j["sweep"] = c.sweep;
  return j;
}

PairingOptions pairing_options(const Config& c) {
  PairingOptions o;
  o.trace.window = c.window;
  o.trace.margin = c.margin;
  o.trace.threads = c.threads;
  o.raw = c.raw;
  return o;
}

// ---------------------------------------------------------------------------
// geometry

struct Geometry {
  std::optional<HalfSpaceCollection> halfspaces;
  std::optional<Partition> partition;
};

std::vector<Region> regions_of(const json& arr, int dim) {
  std::vector<Region> out;
  for (auto r : arr) {
    if (r.is_object() && !r.contains("dim")) r["dim"] = dim;
    out.push_back(region_from_json(r));
  }
  return out;
}

Geometry geometry_from_json_impl(const json& g, std::uint64_t seed) {
  const auto type = get<std::string>(g, "type", "");
  const int dim = get<int>(g, "dim", 2);
  Geometry out;
  if (type == "standard") {
    const int d = get<int>(g, "dim", 1);
    const int n = get<int>(g, "n", d);
    if (n < 0 || n > d) throw Error(ErrorCode::schema, "standard geometry needs 0 <= n <= dim");
    auto x = standard_halfspaces(d);
    x.halfspaces.resize(static_cast<std::size_t>(n));
    // fewer half spaces than axes: the analytic bound no longer applies
    if (n < d) x.analytic.reset();
    out.halfspaces = x;
  } else if (type == "halfspaces") {
    HalfSpaceCollection x;
    x.halfspaces = regions_of(g.at("halfspaces"), dim);
    out.halfspaces = x;
  } else if (type == "partition") {
    Partition p;
    p.parts = regions_of(g.at("parts"), dim);
    if (p.parts.empty()) throw Error(ErrorCode::schema, "partition needs parts");
    out.partition = p;
  } else if (type == "sectors") {
    out.partition = sector_partition(get<std::array<double, 2>>(g, "center", {0.5, 0.5}),
                                     get<std::vector<double>>(g, "rays", {}));
  } else if (type == "random_sectors") {
    out.partition = random_sector_partition(get<std::uint64_t>(g, "seed", seed), get<int>(g, "parts", 3),
                                            get<double>(g, "min_angle", 0.7));
  } else {
    throw Error(ErrorCode::schema, "geometry type must be standard, halfspaces, partition, sectors or random_sectors");
  }
  return out;
}

Geometry geometry_from_json(const json& g, std::uint64_t seed) {
  if (!g.is_object()) throw Error(ErrorCode::schema, "geometry must be an object");
  try {
    return geometry_from_json_impl(g, seed);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::schema, std::string("geometry: ") + e.what());
  }
}

Partition kitaev_partition(const Geometry& g, int dim) {
  if (g.partition) return *g.partition;
  if (g.halfspaces->n() == 0) {
    Partition whole;
    whole.parts = {Region::full(dim)};
    return whole;
  }
  return partition_from_halfspaces(*g.halfspaces);
}

const HalfSpaceCollection& kubo_halfspaces(const Geometry& g) {
  if (!g.halfspaces) throw Error(ErrorCode::schema, "Kubo pairings need a half space geometry");
  return *g.halfspaces;
}

int model_dim(const ModelInstance& m) {
  return m.invertible ? m.unitary.u.space().dim() : m.idempotent.space().dim();
}

PairingReport run_pairing(const ModelInstance& m, const Geometry& g, Flavor flavor, const PairingOptions& opt) {
  const int dim = model_dim(m);
  if (flavor == Flavor::kitaev) {
    const auto a = kitaev_partition(g, dim);
    return m.invertible ? kitaev_invertible(m.unitary, a, opt) : kitaev_idempotent(m.idempotent, a, opt);
  }
  const auto x = indicators(kubo_halfspaces(g));
  return m.invertible ? kubo_invertible(m.unitary, x, opt) : kubo_idempotent(m.idempotent, x, opt);
}

double defect_tolerance(const Config& c, bool approximate) {
  if (c.tolerance) return *c.tolerance;
  return approximate ? 0.05 : 1e-8;
}

// ---------------------------------------------------------------------------
// commands

struct Outcome {
  json report;
  int code = kExitOk;
};

Outcome run_flow(const Config& c) {
  const auto m = model_from_json(c.model, c.seed, c.threads);
  if (!m.invertible) throw Error(ErrorCode::schema, "flow needs an invertible model");
  if (m.unitary.u.space().dim() != 1) throw Error(ErrorCode::schema, "flow needs a one-dimensional model");
  const auto f = flow(m.unitary, pairing_options(c));
  const double tol = defect_tolerance(c, false);
  Outcome o;
  o.report = {{"config", resolved(c, &m)}, {"result", to_json(f)}, {"tolerance", tol}};
  o.code = f.defect <= tol ? kExitOk : kExitTolerance;
  return o;
}

Outcome run_pair(const Config& c) {
  const auto m = model_from_json(c.model, c.seed, c.threads);
  const auto g = geometry_from_json(c.geometry, c.seed);
  const auto r = run_pairing(m, g, c.flavor, pairing_options(c));
  const double tol = defect_tolerance(c, r.approximate);
  Outcome o;
  o.report = {{"config", resolved(c, &m)}, {"result", to_json(r)}, {"tolerance", tol}};
  if (!m.details.is_null()) o.report["model_details"] = m.details;
  if (m.details.contains("chern_oracle")) o.report["matches_oracle"] = m.details["chern_oracle"] == r.integer;
  o.code = r.indeterminate ? kExitIndeterminate : (r.defect <= tol ? kExitOk : kExitTolerance);
  return o;
}

IdentityReport compare_integers(std::string name, const PairingReport& a, const PairingReport& b,
                                const std::optional<double>& tol, std::string note) {
  IdentityReport r;
  r.name = std::move(name);
  r.lhs = a.value;
  r.rhs = b.value;
  r.difference = std::abs(a.value - b.value);
  r.error_bound = a.error_bound + b.error_bound;
  const bool approximate = a.approximate || b.approximate;
  r.tolerance = tol ? *tol
                    : (approximate ? std::max(1e-6, 3.0 * r.error_bound)
                                   : 1e-10 * std::max({1.0, std::abs(a.value), std::abs(b.value)}));
  r.pass = a.integer == b.integer && !a.indeterminate && !b.indeterminate && r.difference <= r.tolerance;
  r.note = std::move(note) + "; integers " + std::to_string(a.integer) + " and " + std::to_string(b.integer);
  return r;
}

Outcome run_verify(const Config& c) {
  const auto m = model_from_json(c.model, c.seed, c.threads);
  const auto g = geometry_from_json(c.geometry, c.seed);
  const auto& x = kubo_halfspaces(g);
  const int n = x.n();
  const int dim = model_dim(m);
  const PairingInput input = m.invertible ? PairingInput{m.unitary} : PairingInput{m.idempotent};

  VerifyOptions vo;
  vo.pairing = pairing_options(c);
  vo.pair.trace = vo.pairing.trace;
  vo.tolerance = c.tolerance;

  json results = json::array();
  int code = kExitOk;
  auto record = [&](const std::string& name, const std::function<std::vector<IdentityReport>()>& fn) {
    try {
      for (const auto& r : fn()) {
        results.push_back(to_json(r));
        if (!r.pass && code == kExitOk) code = kExitTolerance;
      }
    } catch (const Error& e) {
      results.push_back({{"identity", name}, {"verdict", "error"}, {"error", error_json(e)}});
      if (code == kExitOk || code == kExitTolerance) code = exit_code(e.code());
    }
  };

  auto kitaev_on = [&](const Partition& a, const PairingInput& in) {
    return m.invertible ? kitaev_invertible(std::get<Invertible>(in), a, vo.pairing)
                        : kitaev_idempotent(std::get<UnitizedOperator>(in), a, vo.pairing);
  };

  for (const auto& id : c.identities) {
    if (id == "sum_rule") {
      record(id, [&] { return std::vector{verify_sum_rule(input, x, vo)}; });
    } else if (id == "equipartition") {
      record(id, [&] {
        std::vector<IdentityReport> out;
        for (const auto& p : permutations(n)) {
          if (n > 1 && std::is_sorted(p.image.begin(), p.image.end())) continue;
          out.push_back(verify_equipartition(input, x, p.image, vo));
        }
        return out;
      });
    } else if (id == "kubo_kitaev") {
      record(id, [&] { return std::vector{verify_kubo_kitaev_factor(input, x, vo)}; });
    } else if (id == "deformation") {
      record(id, [&] {
        const auto a = kitaev_partition(g, dim);
        const auto base = kitaev_on(a, input);
        std::vector<IdentityReport> out;
        const auto box = Box::centered(dim, c.deform_radius);
        for (int t = 0; t < c.trials; ++t) {
          std::vector<Site> sites;
          for (int i = 0; i < c.deform_sites; ++i) {
            Site s = Site::origin(dim);
            for (int d = 0; d < dim; ++d) {
              const auto h = mix_key(c.seed, {t, i, d});
              s[d] = box.lo[d] + static_cast<std::int64_t>(h % static_cast<std::uint64_t>(2 * c.deform_radius + 1));
            }
            sites.push_back(s);
          }
          const int target = static_cast<int>(mix_key(c.seed, {t, -1}) % a.parts.size());
          const auto moved = deform_partition(a, sites, target, c.window, c.margin);
          out.push_back(compare_integers("deformation", base, kitaev_on(moved, input), c.tolerance,
                                         std::to_string(sites.size()) + " sites moved to part " +
                                             std::to_string(target)));
        }
        return out;
      });
    } else if (id == "conjugation") {
      record(id, [&] {
        const auto a = kitaev_partition(g, dim);
        const auto base = kitaev_on(a, input);
        const int k = m.invertible ? m.unitary.u.k() : m.idempotent.k();
        std::vector<IdentityReport> out;
        for (int t = 0; t < c.trials; ++t) {
          const auto v = random_local_invertible(mix_key(c.seed, {t, 7}), 1, k, dim, 0);
          const PairingInput conj = m.invertible ? PairingInput{conjugate(v, m.unitary)}
                                                 : PairingInput{conjugate(v, m.idempotent)};
          out.push_back(compare_integers("conjugation", base, kitaev_on(a, conj), c.tolerance,
                                         "conjugated by a random local unitary"));
        }
        return out;
      });
    } else if (id == "formula") {
      record(id, [&] {
        if (!m.invertible) return std::vector{verify_two_path(m.idempotent, kitaev_partition(g, dim), vo)};
        const auto forms = kubo_invertible_forms(m.unitary, indicators(x), vo.pairing);
        IdentityReport r;
        r.name = "formula";
        r.lhs = forms.commutator_form.value;
        r.rhs = forms.difference_form.value;
        r.difference = std::abs(r.lhs - r.rhs);
        r.error_bound = forms.commutator_form.error_bound + forms.difference_form.error_bound;
        r.tolerance = c.tolerance ? *c.tolerance : 1e-10 * std::max(1.0, std::abs(r.lhs)) + r.error_bound;
        r.pass = r.difference <= r.tolerance;
        r.note = "commutator form against difference form";
        return std::vector{r};
      });
    }
  }
  Outcome o;
  o.report = {{"config", resolved(c, &m)}, {"identities", results}};
  if (!m.details.is_null()) o.report["model_details"] = m.details;
  std::size_t passed = 0;
  for (const auto& r : results) passed += r.value("verdict", "") == "pass" ? 1 : 0;
  o.report["summary"] = {{"passed", passed}, {"total", results.size()}};
  o.code = code;
  return o;
}

std::string trend_of(const std::vector<double>& d) {
  if (d.size() < 2) return "single";
  const auto [lo, hi] = std::minmax_element(d.begin(), d.end());
  if (*hi - *lo <= 1e-12) return "constant";
  bool down = true, up = true;
  for (std::size_t i = 1; i < d.size(); ++i) {
    down = down && d[i] <= d[i - 1];
    up = up && d[i] >= d[i - 1];
  }
  return down ? "decreasing" : (up ? "increasing" : "mixed");
}

Outcome run_sweep(const Config& c, std::ostringstream& csv) {
  const auto axis = get<std::string>(c.sweep, "axis", "");
  const auto values = get<std::vector<std::int64_t>>(c.sweep, "values", {});
  if (axis != "truncation_radius" && axis != "kgrid" && axis != "window")
    throw Error(ErrorCode::schema, "sweep axis must be truncation_radius, kgrid or window");
  if (values.empty()) throw Error(ErrorCode::schema, "sweep needs a nonempty 'values' list");
  if (axis != "window" && get<std::string>(c.model, "model", "") != "hofstadter")
    throw Error(ErrorCode::schema, "only the hofstadter model has a " + axis + " axis");
  const auto g = geometry_from_json(c.geometry, c.seed);

  csv << axis << ",integer,normalized_re,normalized_im,defect,error_bound,sites_visited\n";
  csv.precision(17);
  json rows = json::array();
  std::vector<double> defects;
  std::optional<ModelInstance> fixed;
  Outcome o;
  for (const auto v : values) {
    Config step = c;
    if (axis == "window") step.window = v;
    else step.model[axis] = v;
    try {
      if (axis != "window" || !fixed) fixed = model_from_json(step.model, c.seed, c.threads);
      const auto r = run_pairing(*fixed, g, c.flavor, pairing_options(step));
      json row = to_json(r);
      row[axis] = v;
      if (!fixed->details.is_null()) row["model_details"] = fixed->details;
      rows.push_back(row);
      defects.push_back(r.defect);
      csv << v << ',' << r.integer << ',' << r.normalized.real() << ',' << r.normalized.imag() << ',' << r.defect
          << ',' << r.error_bound << ',' << r.sites_visited << '\n';
    } catch (const Error& e) {
      rows.push_back({{axis, v}, {"error", error_json(e)}});
      o.code = exit_code(e.code());
      break;
    }
  }
  o.report = {{"config", resolved(c, fixed ? &*fixed : nullptr)},
              {"rows", rows},
              {"summary",
               {{"axis", axis},
                {"trend", trend_of(defects)},
                {"first_defect", defects.empty() ? json() : json(defects.front())},
                {"last_defect", defects.empty() ? json() : json(defects.back())}}}};
  return o;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::schema, "cannot write " + path);
  out << text;
}

int run(const std::string& command, const Flags& flags) {
  json report{{"version", QTRACE_VERSION}, {"command", command}};
  std::ostringstream csv;
  int code = kExitOk;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    const auto c = load_config(command, flags);
    Outcome o;
    if (command == "flow") o = run_flow(c);
    else if (command == "pair") o = run_pair(c);
    else if (command == "verify") o = run_verify(c);
    else o = run_sweep(c, csv);
    report.update(o.report);
    code = o.code;
  } catch (const Error& e) {
    report["error"] = error_json(e);
    code = exit_code(e.code());
  } catch (const std::exception& e) {
    report["error"] = {{"code", "internal"}, {"message", e.what()}};
    code = kExitOther;
  }
  report["exit_code"] = code;
  const std::string text = report.dump(2) + "\n";
  try {
    if (flags.out.empty()) {
      std::cout << text;
      if (command == "sweep") std::cout << csv.str();
    } else {
      write_text(flags.out, text);
      if (command == "sweep") write_text(std::filesystem::path(flags.out).replace_extension(".csv").string(), csv.str());
    }
  } catch (const Error& e) {
    std::cerr << e.what() << "\n";
    return kExitSchema;
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cerr << command << ": exit " << code << " after " << secs << " s\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Kubo and Kitaev trace pairings on lattice models"};
  app.require_subcommand(1);
  app.set_version_flag("--version", QTRACE_VERSION);
  Flags flags;
  app.add_option("--config", flags.config, "experiment config (JSON)")->check(CLI::ExistingFile);
  app.add_option("--out", flags.out, "report path; sweeps also write the CSV next to it");
  app.add_option("--tolerance", flags.tolerance, "acceptance tolerance on the defect");
  app.add_option("--window", flags.window, "certification window half-width");
  app.add_option("--threads", flags.threads, "worker threads");
  app.add_option("--seed", flags.seed, "seed for randomized fixtures");
  std::string command;
  for (const char* name : {"flow", "pair", "verify", "sweep"}) {
    auto* sub = app.add_subcommand(name)->fallthrough();
    sub->callback([&command, name] { command = name; });
  }
  app.get_subcommand("flow")->description("flow of a one-dimensional unitary with the Kubo cross-check");
  app.get_subcommand("pair")->description("Kubo or Kitaev pairing with quantization report");
  app.get_subcommand("verify")->description("identity suite: sum rule, equipartition, factor, invariances, formulas");
  app.get_subcommand("sweep")->description("defect against truncation radius, k grid or window");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitSchema;
  }
  if (flags.config.empty()) {
    std::cerr << "--config is required\n";
    return kExitSchema;
  }
  return run(command, flags);
}
