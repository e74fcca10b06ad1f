#include "qtrace/space.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace qtrace {

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::dimension_mismatch: return "dimension-mismatch";
    case ErrorCode::window_too_small: return "window-too-small";
    case ErrorCode::unbounded_support: return "unbounded-support";
    case ErrorCode::validation_failed: return "validation-failed";
    case ErrorCode::formula_mismatch: return "formula-mismatch";
    case ErrorCode::n_guard_exceeded: return "n-guard-exceeded";
    case ErrorCode::certificate_missing: return "certificate-missing";
    case ErrorCode::invalid_argument: return "invalid-argument";
    case ErrorCode::gap_closed: return "gap-closed";
    case ErrorCode::tail_fit_failed: return "tail-fit-failed";
    case ErrorCode::schema: return "schema";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Site, LatticeSpace, Box
// ---------------------------------------------------------------------------

Site::Site(std::initializer_list<std::int64_t> coords)
    : Site(std::span<const std::int64_t>(coords.begin(), coords.size())) {}

Site::Site(std::span<const std::int64_t> coords) {
  if (coords.empty() || coords.size() > static_cast<std::size_t>(kMaxDim)) {
    throw Error(ErrorCode::dimension_mismatch,
                "site dimension must be in [1, " + std::to_string(kMaxDim) + "]");
  }
  dim = static_cast<int>(coords.size());
  std::copy(coords.begin(), coords.end(), c.begin());
}

Site Site::origin(int d) {
  if (d < 1 || d > kMaxDim) throw Error(ErrorCode::dimension_mismatch, "bad dimension");
  Site s;
  s.dim = d;
  return s;
}

std::int64_t Site::sup_norm() const {
  std::int64_t m = 0;
  for (int i = 0; i < dim; ++i) m = std::max(m, std::abs(c[static_cast<std::size_t>(i)]));
  return m;
}

std::strong_ordering operator<=>(const Site& a, const Site& b) {
  if (auto cmp = a.dim <=> b.dim; cmp != 0) return cmp;
  for (int i = 0; i < a.dim; ++i) {
    if (auto cmp = a[i] <=> b[i]; cmp != 0) return cmp;
  }
  return std::strong_ordering::equal;
}

std::string to_string(const Site& s) {
  std::ostringstream os;
  os << '(';
  for (int i = 0; i < s.dim; ++i) os << (i ? "," : "") << s[i];
  os << ')';
  return os.str();
}

LatticeSpace::LatticeSpace(int d, Metric metric) : dim_(d), metric_(metric) {
  if (d < 1 || d > kMaxDim) throw Error(ErrorCode::dimension_mismatch, "bad lattice dimension");
}

std::int64_t LatticeSpace::distance(const Site& a, const Site& b) const {
  if (a.dim != dim_ || b.dim != dim_) {
    throw Error(ErrorCode::dimension_mismatch,
                "distance between " + to_string(a) + " and " + to_string(b) + " in Z^" +
                    std::to_string(dim_));
  }
  std::int64_t acc = 0;
  for (int i = 0; i < dim_; ++i) {
    const std::int64_t d = std::abs(a[i] - b[i]);
    acc = metric_ == Metric::sup ? std::max(acc, d) : acc + d;
  }
  return acc;
}

Box Box::centered(int d, std::int64_t half_width) { return around(Site::origin(d), half_width); }

Box Box::around(const Site& center, std::int64_t radius) {
  Box b{center, center};
  for (int i = 0; i < center.dim; ++i) {
    b.lo[i] -= radius;
    b.hi[i] += radius;
  }
  return b;
}

bool Box::empty() const {
  for (int i = 0; i < dim(); ++i)
    if (hi[i] < lo[i]) return true;
  return false;
}

std::size_t Box::size() const {
  if (empty()) return 0;
  std::size_t n = 1;
  for (int i = 0; i < dim(); ++i) n *= static_cast<std::size_t>(extent(i));
  return n;
}

bool Box::contains(const Site& s) const {
  if (s.dim != dim()) return false;
  for (int i = 0; i < dim(); ++i)
    if (s[i] < lo[i] || s[i] > hi[i]) return false;
  return true;
}

Box Box::expanded(std::int64_t r) const {
  Box b = *this;
  for (int i = 0; i < dim(); ++i) {
    b.lo[i] -= r;
    b.hi[i] += r;
  }
  return b;
}

std::size_t Box::index(const Site& s) const {
  std::size_t idx = 0;
  for (int i = 0; i < dim(); ++i) {
    idx = idx * static_cast<std::size_t>(extent(i)) + static_cast<std::size_t>(s[i] - lo[i]);
  }
  return idx;
}

Site Box::site(std::size_t index) const {
  Site s = lo;
  for (int i = dim() - 1; i >= 0; --i) {
    const auto e = static_cast<std::size_t>(extent(i));
    s[i] = lo[i] + static_cast<std::int64_t>(index % e);
    index /= e;
  }
  return s;
}

std::int64_t Box::depth(const Site& s) const {
  std::int64_t d = std::numeric_limits<std::int64_t>::max();
  for (int i = 0; i < dim(); ++i) d = std::min({d, s[i] - lo[i], hi[i] - s[i]});
  return d;
}

Box hull(const Box& a, const Box& b) {
  if (a.empty()) return b;
  if (b.empty()) return a;
  Box h = a;
  for (int i = 0; i < a.dim(); ++i) {
    h.lo[i] = std::min(a.lo[i], b.lo[i]);
    h.hi[i] = std::max(a.hi[i], b.hi[i]);
  }
  return h;
}

Box overlap(const Box& a, const Box& b) {
  Box o = a;
  for (int i = 0; i < a.dim(); ++i) {
    o.lo[i] = std::max(a.lo[i], b.lo[i]);
    o.hi[i] = std::min(a.hi[i], b.hi[i]);
  }
  return o;
}

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

// ---------------------------------------------------------------------------
// Region nodes
// ---------------------------------------------------------------------------

struct Region::Node {
  RegionKind kind = RegionKind::empty;
  int dim = 1;
  // halfspace
  int axis = 0;
  std::int64_t threshold = 0;
  bool geq = true;
  // linear halfspace
  std::vector<double> normal;
  double offset = 0.0;
  // sector
  std::array<double, 2> center{};
  double from = 0.0;
  double to = 0.0;
  // box
  Box box;
  // finite set (sorted, unique)
  std::vector<Site> sites;
  // complement / intersection / union / thickening base / pullback parts
  std::vector<Region> args;
  // thickening radius or pullback search radius
  std::int64_t radius = 0;
  Metric metric = Metric::sup;
  int index = 0;
};

namespace {

std::shared_ptr<Region::Node> make_node(RegionKind kind, int dim) {
  auto n = std::make_shared<Region::Node>();
  n->kind = kind;
  n->dim = dim;
  return n;
}

void check_dim(int d) {
  if (d < 1 || d > kMaxDim) throw Error(ErrorCode::dimension_mismatch, "bad region dimension");
}

double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  a = std::fmod(a, two_pi);
  if (a < 0) a += two_pi;
  return a;
}

// Sup-metric dilation in place over the whole box; values outside count as 0.
void dilate_sup(std::vector<std::uint8_t>& bits, const Box& box, std::int64_t r) {
  const int d = box.dim();
  std::vector<std::size_t> stride(static_cast<std::size_t>(d), 1);
  for (int i = d - 2; i >= 0; --i)
    stride[static_cast<std::size_t>(i)] = stride[static_cast<std::size_t>(i + 1)] *
                                          static_cast<std::size_t>(box.extent(i + 1));
  const std::size_t total = box.size();
  std::vector<std::int32_t> prefix;
  std::vector<std::uint8_t> out(bits.size());
  for (int axis = 0; axis < d; ++axis) {
    const auto len = static_cast<std::size_t>(box.extent(axis));
    const std::size_t st = stride[static_cast<std::size_t>(axis)];
    prefix.assign(len + 1, 0);
    // line starts: every index whose coordinate along axis is 0
    for (std::size_t start = 0; start < total; ++start) {
      if ((start / st) % len != 0) continue;
      for (std::size_t t = 0; t < len; ++t) prefix[t + 1] = prefix[t] + bits[start + t * st];
      for (std::size_t t = 0; t < len; ++t) {
        const auto lo = static_cast<std::size_t>(std::max<std::int64_t>(0, static_cast<std::int64_t>(t) - r));
        const auto hi = static_cast<std::size_t>(
            std::min<std::int64_t>(static_cast<std::int64_t>(len) - 1, static_cast<std::int64_t>(t) + r));
        out[start + t * st] = (prefix[hi + 1] - prefix[lo]) > 0 ? 1 : 0;
      }
    }
    bits.swap(out);
  }
}

void dilate_l1(std::vector<std::uint8_t>& bits, const Box& box, std::int64_t r) {
  const int d = box.dim();
  std::vector<std::uint8_t> out(bits.size());
  for (std::int64_t step = 0; step < r; ++step) {
    std::size_t idx = 0;
    for_each_site(box, [&](const Site& s) {
      std::uint8_t v = bits[idx];
      for (int i = 0; i < d && !v; ++i) {
        Site t = s;
        t[i] = s[i] - 1;
        if (t[i] >= box.lo[i] && bits[box.index(t)]) v = 1;
        t[i] = s[i] + 1;
        if (!v && t[i] <= box.hi[i] && bits[box.index(t)]) v = 1;
      }
      out[idx++] = v;
    });
    bits.swap(out);
  }
}

Mask crop(const Mask& big, const Box& box) {
  Mask m{box, std::vector<std::uint8_t>(box.size(), 0)};
  std::size_t idx = 0;
  for_each_site(box, [&](const Site& s) { m.bits[idx++] = big.bits[big.box.index(s)]; });
  return m;
}

bool sector_contains(const Region::Node& n, const Site& s) {
  const double a = wrap_angle(std::atan2(static_cast<double>(s[1]) - n.center[1],
                                         static_cast<double>(s[0]) - n.center[0]));
  const double width = wrap_angle(n.to - n.from);
  const double rel = wrap_angle(a - n.from);
  if (width == 0.0) return n.to != n.from;  // full turn
  return rel < width;
}

}  // namespace

Region Region::full(int d) {
  check_dim(d);
  return Region(make_node(RegionKind::full, d));
}

Region Region::empty(int d) {
  check_dim(d);
  return Region(make_node(RegionKind::empty, d));
}

Region Region::halfspace(int d, int axis, std::int64_t threshold, bool geq) {
  check_dim(d);
  if (axis < 0 || axis >= d) throw Error(ErrorCode::dimension_mismatch, "halfspace axis out of range");
  auto n = make_node(RegionKind::halfspace, d);
  n->axis = axis;
  n->threshold = threshold;
  n->geq = geq;
  return Region(n);
}

Region Region::linear_halfspace(std::vector<double> normal, double offset) {
  check_dim(static_cast<int>(normal.size()));
  auto n = make_node(RegionKind::linear_halfspace, static_cast<int>(normal.size()));
  n->normal = std::move(normal);
  n->offset = offset;
  return Region(n);
}

Region Region::sector(std::array<double, 2> center, double from_angle, double to_angle) {
  auto n = make_node(RegionKind::sector, 2);
  n->center = center;
  n->from = from_angle;
  n->to = to_angle;
  return Region(n);
}

Region Region::box(const Box& b) {
  check_dim(b.dim());
  if (b.empty()) return empty(b.dim());
  auto n = make_node(RegionKind::box, b.dim());
  n->box = b;
  return Region(n);
}

Region Region::finite_set(std::vector<Site> sites) {
  if (sites.empty()) throw Error(ErrorCode::invalid_argument, "finite_set needs a site (use empty())");
  const int d = sites.front().dim;
  check_dim(d);
  for (const auto& s : sites)
    if (s.dim != d) throw Error(ErrorCode::dimension_mismatch, "mixed dimensions in finite set");
  std::sort(sites.begin(), sites.end());
  sites.erase(std::unique(sites.begin(), sites.end()), sites.end());
  auto n = make_node(RegionKind::finite_set, d);
  n->sites = std::move(sites);
  return Region(n);
}

Region Region::pullback(std::vector<Region> parts, int index, std::int64_t search_radius) {
  if (parts.empty() || index < 0 || index >= static_cast<int>(parts.size()))
    throw Error(ErrorCode::invalid_argument, "pullback index out of range");
  auto n = make_node(RegionKind::pullback, parts.front().dim());
  n->args = std::move(parts);
  n->index = index;
  n->radius = search_radius;
  return Region(n);
}

int Region::dim() const { return node_->dim; }
RegionKind Region::kind() const { return node_->kind; }

Region complement(const Region& a) {
  if (a.kind() == RegionKind::complement) return a.node().args.front();
  if (a.kind() == RegionKind::full) return Region::empty(a.dim());
  if (a.kind() == RegionKind::empty) return Region::full(a.dim());
  if (a.kind() == RegionKind::halfspace) {
    const auto& n = a.node();
    return Region::halfspace(n.dim, n.axis, n.threshold, !n.geq);
  }
  auto n = make_node(RegionKind::complement, a.dim());
  n->args = {a};
  return Region(n);
}

Region intersect(std::vector<Region> args) {
  if (args.empty()) throw Error(ErrorCode::invalid_argument, "empty intersection");
  const int d = args.front().dim();
  std::vector<Region> kept;
  for (auto& r : args) {
    if (r.dim() != d) throw Error(ErrorCode::dimension_mismatch, "intersection of mixed dimensions");
    if (r.kind() == RegionKind::empty) return Region::empty(d);
    if (r.kind() == RegionKind::full) continue;
    kept.push_back(std::move(r));
  }
  if (kept.empty()) return Region::full(d);
  if (kept.size() == 1) return kept.front();
  auto n = make_node(RegionKind::intersection, d);
  n->args = std::move(kept);
  return Region(n);
}

Region unite(std::vector<Region> args) {
  if (args.empty()) throw Error(ErrorCode::invalid_argument, "empty union");
  const int d = args.front().dim();
  std::vector<Region> kept;
  for (auto& r : args) {
    if (r.dim() != d) throw Error(ErrorCode::dimension_mismatch, "union of mixed dimensions");
    if (r.kind() == RegionKind::full) return Region::full(d);
    if (r.kind() == RegionKind::empty) continue;
    kept.push_back(std::move(r));
  }
  if (kept.empty()) return Region::empty(d);
  if (kept.size() == 1) return kept.front();
  auto n = make_node(RegionKind::union_, d);
  n->args = std::move(kept);
  return Region(n);
}

Region thicken(const LatticeSpace& space, const Region& y, std::int64_t r) {
  if (r < 0) throw Error(ErrorCode::invalid_argument, "negative thickening radius");
  if (y.dim() != space.dim()) throw Error(ErrorCode::dimension_mismatch, "thickening dimension");
  if (r == 0) return y;
  switch (y.kind()) {
    case RegionKind::full:
    case RegionKind::empty:
      return y;
    case RegionKind::halfspace: {
      // distance to {x_i >= c} is max(0, c - x_i) in both metrics
      const auto& n = y.node();
      return Region::halfspace(n.dim, n.axis, n.geq ? n.threshold - r : n.threshold + r, n.geq);
    }
    case RegionKind::box:
      if (space.metric() == Metric::sup) return Region::box(y.node().box.expanded(r));
      break;
    case RegionKind::thickening:
      if (y.node().metric == space.metric())
        return thicken(space, y.node().args.front(), y.node().radius + r);
      break;
    default:
      break;
  }
  auto n = make_node(RegionKind::thickening, y.dim());
  n->args = {y};
  n->radius = r;
  n->metric = space.metric();
  return Region(n);
}

namespace {

std::int64_t distance_to_region(const LatticeSpace& space, const Region& part, const Site& x,
                                std::int64_t limit) {
  for (std::int64_t r = 0; r <= limit; ++r) {
    bool found = false;
    for_each_site(Box::around(x, r), [&](const Site& s) {
      if (found || space.distance(s, x) != r) return;
      if (part.contains(s)) found = true;
    });
    if (found) return r;
  }
  return -1;
}

}  // namespace

bool Region::contains(const Site& s) const {
  const Node& n = *node_;
  if (s.dim != n.dim) throw Error(ErrorCode::dimension_mismatch, "membership query dimension");
  switch (n.kind) {
    case RegionKind::full: return true;
    case RegionKind::empty: return false;
    case RegionKind::halfspace: return n.geq ? s[n.axis] >= n.threshold : s[n.axis] < n.threshold;
    case RegionKind::linear_halfspace: {
      double dot = 0.0;
      for (int i = 0; i < n.dim; ++i) dot += n.normal[static_cast<std::size_t>(i)] * static_cast<double>(s[i]);
      return dot >= n.offset;
    }
    case RegionKind::sector: return sector_contains(n, s);
    case RegionKind::box: return n.box.contains(s);
    case RegionKind::finite_set: return std::binary_search(n.sites.begin(), n.sites.end(), s);
    case RegionKind::complement: return !n.args.front().contains(s);
    case RegionKind::intersection:
      return std::all_of(n.args.begin(), n.args.end(), [&](const Region& r) { return r.contains(s); });
    case RegionKind::union_:
      return std::any_of(n.args.begin(), n.args.end(), [&](const Region& r) { return r.contains(s); });
    case RegionKind::thickening: {
      const LatticeSpace space(n.dim, n.metric);
      bool hit = false;
      for_each_site(Box::around(s, n.radius), [&](const Site& t) {
        if (!hit && space.distance(s, t) <= n.radius && n.args.front().contains(t)) hit = true;
      });
      return hit;
    }
    case RegionKind::pullback: {
      const LatticeSpace space(n.dim);
      for (int i = 0; i <= n.index; ++i) {
        const auto d = distance_to_region(space, n.args[static_cast<std::size_t>(i)], s, n.radius);
        if (d < 0) throw Error(ErrorCode::window_too_small, "pullback distance search exhausted");
        if (i < n.index && d == 0) return false;
        if (i == n.index) return d == 0;
      }
      return false;
    }
  }
  return false;
}

Mask Region::mask(const Box& box) const {
  const Node& n = *node_;
  if (box.dim() != n.dim) throw Error(ErrorCode::dimension_mismatch, "mask window dimension");
  Mask m{box, std::vector<std::uint8_t>(box.size(), 0)};
  switch (n.kind) {
    case RegionKind::full:
      std::fill(m.bits.begin(), m.bits.end(), std::uint8_t{1});
      return m;
    case RegionKind::empty:
      return m;
    case RegionKind::finite_set:
      for (const auto& s : n.sites)
        if (box.contains(s)) m.bits[box.index(s)] = 1;
      return m;
    case RegionKind::complement: {
      m = n.args.front().mask(box);
      for (auto& b : m.bits) b = b ? 0 : 1;
      return m;
    }
    case RegionKind::intersection: {
      m = n.args.front().mask(box);
      for (std::size_t a = 1; a < n.args.size(); ++a) {
        const Mask o = n.args[a].mask(box);
        for (std::size_t i = 0; i < m.bits.size(); ++i) m.bits[i] &= o.bits[i];
      }
      return m;
    }
    case RegionKind::union_: {
      m = n.args.front().mask(box);
      for (std::size_t a = 1; a < n.args.size(); ++a) {
        const Mask o = n.args[a].mask(box);
        for (std::size_t i = 0; i < m.bits.size(); ++i) m.bits[i] |= o.bits[i];
      }
      return m;
    }
    case RegionKind::thickening: {
      const Box big = box.expanded(n.radius);
      Mask base = n.args.front().mask(big);
      if (n.metric == Metric::sup) dilate_sup(base.bits, big, n.radius);
      else dilate_l1(base.bits, big, n.radius);
      return crop(base, box);
    }
    default: {
      std::size_t idx = 0;
      for_each_site(box, [&](const Site& s) { m.bits[idx++] = contains(s) ? 1 : 0; });
      return m;
    }
  }
}

std::optional<std::int64_t> Region::bounded_hint() const {
  const Node& n = *node_;
  switch (n.kind) {
    case RegionKind::empty: return 0;
    case RegionKind::box: return std::max(n.box.lo.sup_norm(), n.box.hi.sup_norm());
    case RegionKind::finite_set: {
      std::int64_t r = 0;
      for (const auto& s : n.sites) r = std::max(r, s.sup_norm());
      return r;
    }
    case RegionKind::thickening: {
      // l1 balls sit inside sup balls of the same radius
      if (auto b = n.args.front().bounded_hint()) return *b + n.radius;
      return std::nullopt;
    }
    case RegionKind::intersection: {
      std::optional<std::int64_t> best;
      for (const auto& a : n.args)
        if (auto b = a.bounded_hint()) best = best ? std::min(*best, *b) : *b;
      return best;
    }
    case RegionKind::union_: {
      std::int64_t r = 0;
      for (const auto& a : n.args) {
        auto b = a.bounded_hint();
        if (!b) return std::nullopt;
        r = std::max(r, *b);
      }
      return r;
    }
    default: return std::nullopt;
  }
}

std::string Region::describe() const { return to_json(*this).dump(); }

std::vector<Site> enumerate(const Region& y, const Box& window) {
  const Mask m = y.mask(window);
  std::vector<Site> out;
  for (std::size_t i = 0; i < m.bits.size(); ++i)
    if (m.bits[i]) out.push_back(window.site(i));
  return out;
}

// ---------------------------------------------------------------------------
// Partitions, half spaces and transversality
// ---------------------------------------------------------------------------

std::int64_t AffineRadius::at(std::int64_t r) const {
  return static_cast<std::int64_t>(std::ceil(slope * static_cast<double>(r) + intercept));
}

int Partition::part_of(const Site& s) const {
  int found = -1;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (!parts[i].contains(s)) continue;
    if (found >= 0) throw Error(ErrorCode::validation_failed, "site " + to_string(s) + " in two parts");
    found = static_cast<int>(i);
  }
  if (found < 0) throw Error(ErrorCode::validation_failed, "site " + to_string(s) + " in no part");
  return found;
}

std::vector<Region> HalfSpaceCollection::with_complements() const {
  std::vector<Region> out;
  for (const auto& x : halfspaces) {
    out.push_back(x);
    out.push_back(complement(x));
  }
  return out;
}

const char* to_string(Verdict v) noexcept {
  switch (v) {
    case Verdict::certified_on_window: return "certified-on-window";
    case Verdict::certified_analytic: return "certified-analytic";
    case Verdict::failed: return "failed";
  }
  return "failed";
}

std::int64_t TransversalityCertificate::bound_for(std::int64_t r) const {
  for (std::size_t i = 0; i < radii.size(); ++i)
    if (radii[i] == r) return bounding_radius[i];
  throw Error(ErrorCode::certificate_missing, "no certificate for R = " + std::to_string(r));
}

TransversalityCertificate check_transversality(const LatticeSpace& space,
                                               const std::vector<Region>& regions,
                                               const std::vector<std::int64_t>& radii,
                                               const Box& window, std::int64_t margin) {
  if (regions.empty()) throw Error(ErrorCode::invalid_argument, "no regions to certify");
  TransversalityCertificate cert;
  cert.regions = regions;
  cert.window = window;
  for (const auto r : radii) {
    std::vector<Region> thick;
    for (const auto& y : regions) thick.push_back(thicken(space, y, r));
    const Mask m = intersect(thick).mask(window);
    const std::int64_t collar = std::max<std::int64_t>(r, 1) + margin;
    std::int64_t bound = 0;
    for (std::size_t i = 0; i < m.bits.size(); ++i) {
      if (!m.bits[i]) continue;
      const Site s = window.site(i);
      if (window.depth(s) < collar) {
        throw Error(ErrorCode::window_too_small,
                    "thickened intersection at R = " + std::to_string(r) + " reaches the window collar at " +
                        to_string(s));
      }
      bound = std::max(bound, s.sup_norm());
    }
    cert.radii.push_back(r);
    cert.bounding_radius.push_back(bound);
  }
  cert.verdict = Verdict::certified_on_window;
  return cert;
}

TransversalityCertificate probe_transversality(const LatticeSpace& space,
                                               const std::vector<Region>& regions,
                                               const std::vector<std::int64_t>& radii,
                                               const std::vector<Box>& windows,
                                               std::int64_t margin) {
  for (const auto& w : windows) {
    try {
      return check_transversality(space, regions, radii, w, margin);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::window_too_small) throw;
    }
  }
  TransversalityCertificate cert;
  cert.regions = regions;
  cert.radii = radii;
  cert.verdict = Verdict::failed;
  return cert;
}

namespace {

void check_partition_on_window(const Partition& p, const Box& window) {
  std::vector<std::uint8_t> cover(window.size(), 0);
  for (const auto& part : p.parts) {
    const Mask m = part.mask(window);
    for (std::size_t i = 0; i < cover.size(); ++i) cover[i] = static_cast<std::uint8_t>(cover[i] + m.bits[i]);
  }
  for (std::size_t i = 0; i < cover.size(); ++i) {
    if (cover[i] != 1) {
      throw Error(ErrorCode::validation_failed,
                  "not a partition: site " + to_string(window.site(i)) + " covered " +
                      std::to_string(cover[i]) + " times");
    }
  }
}

}  // namespace

TransversalityCertificate certify(const LatticeSpace& space, const Partition& p,
                                  const std::vector<std::int64_t>& radii, const Box& window) {
  if (p.parts.empty()) throw Error(ErrorCode::invalid_argument, "empty partition");
  check_partition_on_window(p, window);
  if (p.analytic) {
    TransversalityCertificate cert;
    cert.regions = p.parts;
    cert.radii = radii;
    for (auto r : radii) cert.bounding_radius.push_back(p.analytic->at(r));
    cert.verdict = Verdict::certified_analytic;
    return cert;
  }
  return check_transversality(space, p.parts, radii, window);
}

TransversalityCertificate certify(const LatticeSpace& space, const HalfSpaceCollection& x,
                                  const std::vector<std::int64_t>& radii, const Box& window) {
  if (x.halfspaces.empty()) throw Error(ErrorCode::invalid_argument, "empty half space collection");
  if (x.analytic) {
    TransversalityCertificate cert;
    cert.regions = x.with_complements();
    cert.radii = radii;
    for (auto r : radii) cert.bounding_radius.push_back(x.analytic->at(r));
    cert.verdict = Verdict::certified_analytic;
    return cert;
  }
  return check_transversality(space, x.with_complements(), radii, window);
}

HalfSpaceCollection standard_halfspaces(int d) {
  HalfSpaceCollection x;
  for (int i = 0; i < d; ++i) x.halfspaces.push_back(Region::halfspace(d, i, 0, true));
  // every coordinate of the intersection lies in [-R, R-1]
  x.analytic = AffineRadius{1.0, 0.0};
  return x;
}

Partition partition_from_halfspaces(const HalfSpaceCollection& x) {
  Partition p;
  const int n = x.n();
  if (n < 1) throw Error(ErrorCode::invalid_argument, "need at least one half space");
  auto tail = [&](int from) {
    std::vector<Region> f;
    for (int j = from; j < n; ++j) f.push_back(x.halfspaces[static_cast<std::size_t>(j)]);
    if (f.empty()) return Region::full(x.dim());
    return intersect(std::move(f));
  };
  p.parts.push_back(tail(0));
  for (int i = 0; i < n; ++i)
    p.parts.push_back(intersect({complement(x.halfspaces[static_cast<std::size_t>(i)]), tail(i + 1)}));
  p.analytic = x.analytic;
  return p;
}

Partition standard_partition(int d) { return partition_from_halfspaces(standard_halfspaces(d)); }

Partition sector_partition(std::array<double, 2> center, const std::vector<double>& ray_angles) {
  if (ray_angles.size() < 2) throw Error(ErrorCode::invalid_argument, "need at least two rays");
  Partition p;
  for (std::size_t i = 0; i < ray_angles.size(); ++i) {
    const double from = ray_angles[i];
    const double to = ray_angles[(i + 1) % ray_angles.size()];
    p.parts.push_back(Region::sector(center, from, to));
  }
  return p;
}

std::vector<std::int64_t> classifying_map(const LatticeSpace& space, const Partition& p,
                                          const Site& x, std::int64_t search_radius) {
  std::vector<std::int64_t> f;
  for (const auto& part : p.parts) {
    const auto d = distance_to_region(space, part, x, search_radius);
    if (d < 0) {
      throw Error(ErrorCode::window_too_small,
                  "no site of a part within " + std::to_string(search_radius) + " of " + to_string(x));
    }
    f.push_back(d);
  }
  return f;
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

nlohmann::json to_json(const Site& s) {
  nlohmann::json j = nlohmann::json::array();
  for (int i = 0; i < s.dim; ++i) j.push_back(s[i]);
  return j;
}

Site site_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw Error(ErrorCode::schema, "site must be an integer array");
  std::vector<std::int64_t> c;
  for (const auto& v : j) {
    if (!v.is_number_integer()) throw Error(ErrorCode::schema, "site coordinates must be integers");
    c.push_back(v.get<std::int64_t>());
  }
  return Site(std::span<const std::int64_t>(c));
}

nlohmann::json to_json(const Region& r) {
  const auto& n = r.node();
  nlohmann::json j;
  switch (n.kind) {
    case RegionKind::full: j = {{"kind", "full"}, {"dim", n.dim}}; break;
    case RegionKind::empty: j = {{"kind", "empty"}, {"dim", n.dim}}; break;
    case RegionKind::halfspace:
      j = {{"kind", "halfspace"}, {"dim", n.dim}, {"axis", n.axis}, {"threshold", n.threshold},
           {"orientation", n.geq ? "geq" : "lt"}};
      break;
    case RegionKind::linear_halfspace:
      j = {{"kind", "linear_halfspace"}, {"normal", n.normal}, {"offset", n.offset}};
      break;
    case RegionKind::sector:
      j = {{"kind", "sector"}, {"center", n.center}, {"from", n.from}, {"to", n.to}};
      break;
    case RegionKind::box: j = {{"kind", "box"}, {"lo", to_json(n.box.lo)}, {"hi", to_json(n.box.hi)}}; break;
    case RegionKind::finite_set: {
      j = {{"kind", "finite_set"}, {"sites", nlohmann::json::array()}};
      for (const auto& s : n.sites) j["sites"].push_back(to_json(s));
      break;
    }
    case RegionKind::complement: j = {{"kind", "complement"}, {"arg", to_json(n.args.front())}}; break;
    case RegionKind::intersection:
    case RegionKind::union_: {
      j = {{"kind", n.kind == RegionKind::union_ ? "union" : "intersection"}, {"args", nlohmann::json::array()}};
      for (const auto& a : n.args) j["args"].push_back(to_json(a));
      break;
    }
    case RegionKind::thickening:
      j = {{"kind", "thickening"}, {"base", to_json(n.args.front())}, {"radius", n.radius},
           {"metric", n.metric == Metric::sup ? "sup" : "l1"}};
      break;
    case RegionKind::pullback: {
      j = {{"kind", "pullback"}, {"index", n.index}, {"search_radius", n.radius}, {"parts", nlohmann::json::array()}};
      for (const auto& a : n.args) j["parts"].push_back(to_json(a));
      break;
    }
  }
  return j;
}

namespace {

Region region_from_json_impl(const nlohmann::json& j, int default_dim) {
  if (!j.is_object() || !j.contains("kind")) throw Error(ErrorCode::schema, "region document needs a kind");
  const std::string kind = j.at("kind").get<std::string>();
  const int dim = j.value("dim", default_dim);
  auto args = [&](const char* key) {
    std::vector<Region> out;
    if (!j.contains(key) || !j.at(key).is_array() || j.at(key).empty())
      throw Error(ErrorCode::schema, kind + " needs a nonempty '" + key + "' array");
    for (const auto& a : j.at(key)) out.push_back(region_from_json_impl(a, dim));
    return out;
  };
  try {
    if (kind == "full") return Region::full(dim);
    if (kind == "empty") return Region::empty(dim);
    if (kind == "halfspace") {
      const int axis = j.at("axis").get<int>();
      const std::string orient = j.value("orientation", "geq");
      if (orient != "geq" && orient != "lt") throw Error(ErrorCode::schema, "orientation must be geq or lt");
      return Region::halfspace(j.value("dim", std::max(default_dim, axis + 1)), axis,
                               j.value("threshold", std::int64_t{0}), orient == "geq");
    }
    if (kind == "linear_halfspace")
      return Region::linear_halfspace(j.at("normal").get<std::vector<double>>(), j.value("offset", 0.0));
    if (kind == "sector")
      return Region::sector(j.at("center").get<std::array<double, 2>>(), j.at("from").get<double>(),
                            j.at("to").get<double>());
    if (kind == "box") return Region::box(Box{site_from_json(j.at("lo")), site_from_json(j.at("hi"))});
    if (kind == "finite_set") {
      std::vector<Site> sites;
      for (const auto& s : j.at("sites")) sites.push_back(site_from_json(s));
      if (sites.empty()) return Region::empty(dim);
      return Region::finite_set(std::move(sites));
    }
    if (kind == "complement") return complement(region_from_json_impl(j.at("arg"), dim));
    if (kind == "intersection") return intersect(args("args"));
    if (kind == "union") return unite(args("args"));
    if (kind == "thickening") {
      const Region base = region_from_json_impl(j.at("base"), dim);
      const Metric m = j.value("metric", "sup") == std::string("l1") ? Metric::l1 : Metric::sup;
      return thicken(LatticeSpace(base.dim(), m), base, j.at("radius").get<std::int64_t>());
    }
    if (kind == "pullback")
      return Region::pullback(args("parts"), j.at("index").get<int>(), j.at("search_radius").get<std::int64_t>());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::schema, std::string("region document: ") + e.what());
  }
  throw Error(ErrorCode::schema, "unknown region kind '" + kind + "'");
}

}  // namespace

Region region_from_json(const nlohmann::json& j) { return region_from_json_impl(j, 1); }

nlohmann::json to_json(const Partition& p) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& part : p.parts) j.push_back(to_json(part));
  return j;
}

Partition partition_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.empty()) throw Error(ErrorCode::schema, "partition must be a nonempty array");
  Partition p;
  for (const auto& r : j) p.parts.push_back(region_from_json(r));
  return p;
}

}  // namespace qtrace
