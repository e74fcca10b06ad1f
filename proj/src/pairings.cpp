#include "qtrace/pairings.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace qtrace {

const char* to_string(Flavor f) noexcept { return f == Flavor::kitaev ? "kitaev" : "kubo"; }

double PairingReport::default_tolerance() const {
  return approximate ? std::max(1e-6, 3.0 * error_bound) : 1e-8;
}

nlohmann::json to_json(const PairingReport& r) {
  return nlohmann::json{{"flavor", to_string(r.flavor)},
                        {"n", r.n},
                        {"value", {r.value.real(), r.value.imag()}},
                        {"normalized", {r.normalized.real(), r.normalized.imag()}},
                        {"integer", r.integer},
                        {"defect", r.defect},
                        {"error_bound", r.error_bound},
                        {"regime", r.approximate ? "approximate" : "exact"},
                        {"permutations_evaluated", r.permutations_evaluated},
                        {"sites_visited", r.sites_visited},
                        {"expected_zero", r.expected_zero},
                        {"indeterminate", r.indeterminate}};
}

namespace {

double factorial(int n) {
  double f = 1.0;
  for (int i = 2; i <= n; ++i) f *= i;
  return f;
}

Complex two_pi_i_pow(int m) {
  Complex c(1.0, 0.0);
  for (int i = 0; i < m; ++i) c *= Complex(0.0, 2.0 * std::numbers::pi);
  return c;
}

}  // namespace

Complex normalization(Flavor flavor, int n) {
  if (n < 0) throw Error(ErrorCode::invalid_argument, "negative degree");
  const int m = n / 2;
  const Complex base = two_pi_i_pow(m);
  if (n % 2 == 0) {
    return flavor == Flavor::kitaev ? base * factorial(2 * m) / factorial(m) : base / factorial(m);
  }
  return flavor == Flavor::kitaev ? base * factorial(m) : base * factorial(m) / factorial(2 * m + 1);
}

Quantized quantize(Complex value, Flavor flavor, int n) {
  Quantized q;
  q.normalized = value * normalization(flavor, n);
  const double re = q.normalized.real();
  const double fl = std::floor(re);
  const double frac = re - fl;
  double nearest;
  if (std::abs(frac - 0.5) < 1e-9) {
    q.indeterminate = true;
    nearest = re > 0 ? fl : fl + 1.0;  // toward zero
  } else {
    nearest = std::round(re);
  }
  q.integer = static_cast<std::int64_t>(nearest);
  q.defect = std::abs(re - nearest) + std::abs(q.normalized.imag());
  return q;
}

std::vector<Permutation> permutations(int n) {
  if (n < 0) throw Error(ErrorCode::invalid_argument, "negative permutation size");
  std::vector<Permutation> out;
  std::vector<int> a(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) a[static_cast<std::size_t>(i)] = i;
  int sign = 1;
  out.push_back({a, sign});
  // Heap's algorithm, iterative form; every swap flips the sign
  std::vector<int> c(static_cast<std::size_t>(n), 0);
  int i = 1;
  while (i < n) {
    auto& ci = c[static_cast<std::size_t>(i)];
    if (ci < i) {
      if (i % 2 == 0) std::swap(a[0], a[static_cast<std::size_t>(i)]);
      else std::swap(a[static_cast<std::size_t>(ci)], a[static_cast<std::size_t>(i)]);
      sign = -sign;
      out.push_back({a, sign});
      ++ci;
      i = 1;
    } else {
      ci = 0;
      ++i;
    }
  }
  std::sort(out.begin(), out.end(), [](const Permutation& x, const Permutation& y) { return x.image < y.image; });
  return out;
}

std::vector<SiteFunction> indicators(const HalfSpaceCollection& x) {
  std::vector<SiteFunction> f;
  for (std::size_t i = 0; i < x.halfspaces.size(); ++i)
    f.push_back(SiteFunction::of_region(x.halfspaces[i], "X" + std::to_string(i + 1)));
  return f;
}

namespace {

void guard(int n, const PairingOptions& opt) {
  if (n > opt.n_guard && !opt.override_guard)
    throw Error(ErrorCode::n_guard_exceeded,
                "degree " + std::to_string(n) + " exceeds the guard " + std::to_string(opt.n_guard) +
                    " ((n+1)! permutations); set the override to proceed");
}

Box window_box(int d, std::int64_t w) { return Box::centered(d, w); }

// Certification at W; when only 2W succeeds the window is reported too small, when
// neither does the geometry has no certificate.
template <class Check>
void certify_twice(Check&& check, std::int64_t w, const std::string& what) {
  try {
    check(w);
    return;
  } catch (const Error& e) {
    if (e.code() != ErrorCode::window_too_small) throw;
  }
  try {
    check(2 * w);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::window_too_small) throw;
    throw Error(ErrorCode::certificate_missing, what + " is not certified coarsely transverse on windows " +
                                                    std::to_string(w) + " and " + std::to_string(2 * w));
  }
  throw Error(ErrorCode::window_too_small,
              what + " needs a certification window larger than " + std::to_string(w));
}

void certify_partition(const LatticeSpace& sp, const Partition& a, std::int64_t r, const TraceOptions& opt) {
  if (a.dim() != sp.dim()) throw Error(ErrorCode::dimension_mismatch, "partition dimension");
  certify_twice([&](std::int64_t w) { certify(sp, a, {r}, window_box(sp.dim(), w)); }, opt.window, "partition");
}

void certify_switches(const LatticeSpace& sp, const std::vector<SiteFunction>& x, std::int64_t r,
                      const TraceOptions& opt) {
  std::vector<Region> regions;
  for (const auto& f : x) {
    if (f.dim != sp.dim()) throw Error(ErrorCode::dimension_mismatch, "switch function dimension");
    if (!f.support.valid() || !f.cosupport.valid())
      throw Error(ErrorCode::certificate_missing, "switch function without support data");
    regions.push_back(f.support);
    regions.push_back(f.cosupport);
  }
  certify_twice([&](std::int64_t w) { check_transversality(sp, regions, {r}, window_box(sp.dim(), w), opt.margin); },
                opt.window, "half space collection");
}

double validation_tolerance(bool approximate) { return approximate ? 1e-2 : 1e-10; }

void validate(const UnitizedOperator& p, const PairingOptions& opt) {
  if (opt.validate) verify_idempotent(p, validation_tolerance(p.approximate()), opt.validation_radius);
}

void validate(const Invertible& u, const PairingOptions& opt) {
  if (opt.validate)
    verify_invertible(u, validation_tolerance(u.u.approximate() || u.inv.approximate()), opt.validation_radius);
}

PairingReport finish(Flavor flavor, int n, const std::vector<Permutation>& perms,
                     const std::vector<TraceReport>& traces) {
  PairingReport r;
  r.flavor = flavor;
  r.n = n;
  Complex acc(0.0, 0.0);
  for (std::size_t i = 0; i < perms.size(); ++i) {
    acc += static_cast<double>(perms[i].sign) * traces[i].value;
    r.error_bound += traces[i].error_bound;
    r.sites_visited += traces[i].sites_visited;
    r.approximate = r.approximate || traces[i].approximate;
  }
  r.value = acc;
  r.permutations_evaluated = perms.size();
  const auto q = quantize(r.value, flavor, n);
  r.normalization = normalization(flavor, n);
  r.normalized = q.normalized;
  r.integer = q.integer;
  r.defect = q.defect;
  r.indeterminate = q.indeterminate;
  return r;
}

PairingReport single(Flavor flavor, int n, const TraceReport& t) {
  return finish(flavor, n, {Permutation{{}, 1}}, {t});
}

std::int64_t radius_of(const KernelOperator& a) { return a.propagation().radius; }

}  // namespace

PairingReport kitaev_idempotent(const UnitizedOperator& p, const Partition& a, const PairingOptions& opt) {
  const int n = a.n();
  if (n < 0) throw Error(ErrorCode::invalid_argument, "empty partition");
  guard(n, opt);
  validate(p, opt);
  const auto& sp = p.space();
  if (n == 0) {
    auto r = pairing_n0(p, opt);
    r.flavor = Flavor::kitaev;
    return r;
  }
  const KernelOperator q = opt.raw ? p.full() : p.part;
  certify_partition(sp, a, std::max<std::int64_t>(radius_of(q), 1), opt.trace);

  std::vector<KernelOperator> ind;
  for (std::size_t i = 0; i < a.parts.size(); ++i)
    ind.push_back(mult_operator(sp, SiteFunction::of_region(a.parts[i], "A" + std::to_string(i)), p.k()));
  const auto perms = permutations(n + 1);
  std::vector<std::vector<KernelOperator>> chains;
  for (const auto& s : perms) {
    std::vector<KernelOperator> c;
    for (int j : s.image) {
      c.push_back(ind[static_cast<std::size_t>(j)]);
      c.push_back(q);
    }
    chains.push_back(std::move(c));
  }
  auto r = finish(Flavor::kitaev, n, perms, trace_each(chains, opt.trace));
  r.expected_zero = n % 2 == 1;
  return r;
}

PairingReport kitaev_invertible(const Invertible& u, const Partition& a, const PairingOptions& opt) {
  const int n = a.n();
  if (n < 1 || n % 2 == 0)
    throw Error(ErrorCode::invalid_argument, "invertible pairings are defined for odd n only, got n = " + std::to_string(n));
  guard(n, opt);
  validate(u, opt);
  const auto& sp = u.u.space();
  const KernelOperator um = u.u.minus_one();
  const KernelOperator vm = u.inv.minus_one();
  certify_partition(sp, a, std::max<std::int64_t>({radius_of(um), radius_of(vm), 1}), opt.trace);

  std::vector<KernelOperator> ind;
  for (std::size_t i = 0; i < a.parts.size(); ++i)
    ind.push_back(mult_operator(sp, SiteFunction::of_region(a.parts[i], "A" + std::to_string(i)), u.u.k()));
  const auto perms = permutations(n + 1);
  std::vector<std::vector<KernelOperator>> chains;
  for (const auto& s : perms) {
    std::vector<KernelOperator> c;
    for (std::size_t j = 0; j < s.image.size(); ++j) {
      c.push_back(ind[static_cast<std::size_t>(s.image[j])]);
      c.push_back(j % 2 == 0 ? um : vm);
    }
    chains.push_back(std::move(c));
  }
  return finish(Flavor::kitaev, n, perms, trace_each(chains, opt.trace));
}

PairingReport kubo_idempotent(const UnitizedOperator& p, const std::vector<SiteFunction>& x,
                              const PairingOptions& opt) {
  const int n = static_cast<int>(x.size());
  guard(n, opt);
  if (n == 0) {
    auto r = pairing_n0(p, opt);
    r.flavor = Flavor::kubo;
    return r;
  }
  validate(p, opt);
  const auto& sp = p.space();
  const KernelOperator& q = p.part;
  certify_switches(sp, x, std::max<std::int64_t>(radius_of(q), 1), opt.trace);

  std::vector<KernelOperator> comm;
  for (const auto& f : x) comm.push_back(commutator(q, f));
  const KernelOperator full = p.full();
  const auto perms = permutations(n);
  std::vector<std::vector<KernelOperator>> chains;
  for (const auto& s : perms) {
    std::vector<KernelOperator> c{full};
    for (int j : s.image) c.push_back(comm[static_cast<std::size_t>(j)]);
    chains.push_back(std::move(c));
  }
  auto r = finish(Flavor::kubo, n, perms, trace_each(chains, opt.trace));
  r.expected_zero = n % 2 == 1;
  return r;
}

KuboInvertibleForms kubo_invertible_forms(const Invertible& u, const std::vector<SiteFunction>& x,
                                          const PairingOptions& opt) {
  const int n = static_cast<int>(x.size());
  if (n < 1 || n % 2 == 0)
    throw Error(ErrorCode::invalid_argument, "invertible pairings are defined for odd n only, got n = " + std::to_string(n));
  guard(n, opt);
  validate(u, opt);
  const auto& sp = u.u.space();
  const KernelOperator um = u.u.minus_one();
  const KernelOperator vm = u.inv.minus_one();
  const std::int64_t r_max = std::max({radius_of(um), radius_of(vm)});
  certify_switches(sp, x, std::max<std::int64_t>(r_max, 1), opt.trace);

  KuboInvertibleForms out;
  // U [X_s1, U^-1 - 1] [X_s2, U - 1] ... [X_sn, U^-1 - 1]
  {
    const KernelOperator full = u.u.full();
    const auto perms = permutations(n);
    std::vector<std::vector<KernelOperator>> chains;
    for (const auto& s : perms) {
      std::vector<KernelOperator> c{full};
      for (std::size_t j = 0; j < s.image.size(); ++j)
        c.push_back(commutator(x[static_cast<std::size_t>(s.image[j])], j % 2 == 0 ? vm : um));
      chains.push_back(std::move(c));
    }
    const auto traces = trace_each(chains, opt.trace);
    for (std::size_t i = 0; i < perms.size(); ++i) {
      out.commutator_form.value += static_cast<double>(perms[i].sign) * traces[i].value;
      out.commutator_form.error_bound += traces[i].error_bound;
      out.commutator_form.sites_visited += traces[i].sites_visited;
      out.commutator_form.region_radius = std::max(out.commutator_form.region_radius, traces[i].region_radius);
      out.commutator_form.approximate = out.commutator_form.approximate || traces[i].approximate;
    }
    out.permutations = perms.size();
  }
  // Antisymmetrized X_s0 (U - 1) X_s1 (U^-1 - 1) ... X_sn (U^-1 - 1) with X_0 = 1. Only the
  // sum is trace-class; it lives where every X_i meets its complement at distance R_tot.
  {
    const std::int64_t r_tot = (n + 1) * r_max;
    std::vector<Region> hits;
    for (const auto& f : x) {
      hits.push_back(thicken(sp, f.support, r_tot));
      hits.push_back(thicken(sp, f.cosupport, r_tot));
    }
    std::vector<KernelOperator> mults;
    for (const auto& f : x) mults.push_back(mult_operator(sp, f, u.u.k()));
    const auto perms = permutations(n + 1);
    std::vector<Complex> coef;
    std::vector<std::vector<KernelOperator>> chains;
    for (const auto& s : perms) {
      std::vector<KernelOperator> c;
      for (std::size_t j = 0; j < s.image.size(); ++j) {
        if (s.image[j] != 0) c.push_back(mults[static_cast<std::size_t>(s.image[j] - 1)]);
        c.push_back(j % 2 == 0 ? um : vm);
      }
      coef.emplace_back(static_cast<double>(s.sign), 0.0);
      chains.push_back(std::move(c));
    }
    out.difference_form = trace_sum(coef, chains, intersect(hits), opt.trace);
  }
  return out;
}

PairingReport kubo_invertible(const Invertible& u, const std::vector<SiteFunction>& x, const PairingOptions& opt) {
  const int n = static_cast<int>(x.size());
  const auto forms = kubo_invertible_forms(u, x, opt);
  const auto& a = forms.commutator_form;
  const auto& b = forms.difference_form;
  const double gap = std::abs(a.value - b.value);
  const double tol = 1e-10 * std::max(1.0, std::abs(a.value)) + a.error_bound + b.error_bound;
  if (gap > tol) {
    throw Error(ErrorCode::formula_mismatch,
                "commutator form " + std::to_string(a.value.real()) + " vs difference form " +
                    std::to_string(b.value.real()) + " (gap " + std::to_string(gap) + ")");
  }
  PairingReport r;
  r.flavor = Flavor::kubo;
  r.n = n;
  r.value = a.value;
  r.error_bound = a.error_bound;
  r.sites_visited = a.sites_visited + b.sites_visited;
  r.approximate = a.approximate;
  r.permutations_evaluated = forms.permutations;
  const auto q = quantize(r.value, Flavor::kubo, n);
  r.normalization = normalization(Flavor::kubo, n);
  r.normalized = q.normalized;
  r.integer = q.integer;
  r.defect = q.defect;
  r.indeterminate = q.indeterminate;
  return r;
}

nlohmann::json to_json(const FlowReport& r) {
  return nlohmann::json{{"flow", r.integer},
                        {"value", r.flow},
                        {"kubo", r.kubo.real()},
                        {"kubo_gap", r.kubo_gap},
                        {"defect", r.defect},
                        {"terms", r.terms}};
}

FlowReport flow(const Invertible& u, const PairingOptions& opt) {
  const auto& sp = u.u.space();
  if (sp.dim() != 1) throw Error(ErrorCode::dimension_mismatch, "the flow is defined on Z only");
  validate(u, opt);
  const KernelOperator& a = u.u.part;
  const std::int64_t r = a.propagation().radius;
  if (r > opt.trace.window) throw Error(ErrorCode::window_too_small, "propagation exceeds the window");
  FlowReport out;
  // pairs (j, k) with j >= 0 > k and |j - k| <= r
  double acc = 0.0, comp = 0.0;
  for (std::int64_t j = 0; j < r; ++j) {
    for (std::int64_t k = -1; k >= j - r; --k) {
      const double v = a.block(Site{k}, Site{j}).squaredNorm() - a.block(Site{j}, Site{k}).squaredNorm();
      const double y = v - comp;
      const double t = acc + y;
      comp = (t - acc) - y;
      acc = t;
      ++out.terms;
    }
  }
  out.flow = acc;
  out.integer = static_cast<std::int64_t>(std::llround(acc));
  out.defect = std::abs(acc - static_cast<double>(out.integer));
  const auto kubo = kubo_invertible(u, {SiteFunction::of_region(Region::halfspace(1, 0, 0), "X1")}, opt);
  out.kubo = kubo.value;
  out.kubo_gap = std::abs(kubo.value - Complex(acc, 0.0));
  if (out.kubo_gap > 1e-10 * std::max(1.0, std::abs(acc)) + kubo.error_bound) {
    throw Error(ErrorCode::formula_mismatch,
                "flow " + std::to_string(acc) + " disagrees with the Kubo pairing " + std::to_string(kubo.value.real()));
  }
  return out;
}

PairingReport pairing_n0(const UnitizedOperator& p, const PairingOptions& opt) {
  validate(p, opt);
  const auto t = trace({p.part}, opt.trace);
  return single(Flavor::kitaev, 0, t);
}

}  // namespace qtrace
