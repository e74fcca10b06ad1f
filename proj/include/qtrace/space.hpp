#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "qtrace/error.hpp"

namespace qtrace {

inline constexpr int kMaxDim = 4;

/// A point of the integer lattice Z^d, 1 <= d <= kMaxDim.
struct Site {
  std::array<std::int64_t, kMaxDim> c{};
  int dim = 0;

  Site() = default;
  Site(std::initializer_list<std::int64_t> coords);
  explicit Site(std::span<const std::int64_t> coords);
  static Site origin(int d);

  std::int64_t operator[](int i) const { return c[static_cast<std::size_t>(i)]; }
  std::int64_t& operator[](int i) { return c[static_cast<std::size_t>(i)]; }

  /// Largest absolute coordinate.
  std::int64_t sup_norm() const;

  friend bool operator==(const Site& a, const Site& b) { return a.dim == b.dim && a.c == b.c; }
  friend std::strong_ordering operator<=>(const Site& a, const Site& b);
};

std::string to_string(const Site& s);

enum class Metric { sup, l1 };

/// Z^d with the sup metric (default) or the l1 metric. Balls are finite.
class LatticeSpace {
 public:
  explicit LatticeSpace(int d, Metric metric = Metric::sup);

  int dim() const { return dim_; }
  Metric metric() const { return metric_; }

  std::int64_t distance(const Site& a, const Site& b) const;

  friend bool operator==(const LatticeSpace&, const LatticeSpace&) = default;

 private:
  int dim_;
  Metric metric_;
};

/// Inclusive axis-aligned box [lo, hi]. Sites are indexed in lexicographic order,
/// last coordinate fastest.
struct Box {
  Site lo;
  Site hi;

  static Box centered(int d, std::int64_t half_width);
  static Box around(const Site& center, std::int64_t radius);

  int dim() const { return lo.dim; }
  bool empty() const;
  std::size_t size() const;
  std::int64_t extent(int axis) const { return hi[axis] - lo[axis] + 1; }
  bool contains(const Site& s) const;
  Box expanded(std::int64_t r) const;
  std::size_t index(const Site& s) const;
  Site site(std::size_t index) const;
  /// Sup distance from s to the complement of the box (0 on the outermost shell).
  std::int64_t depth(const Site& s) const;

  friend bool operator==(const Box&, const Box&) = default;
};

/// Smallest box containing both; empty boxes are ignored.
Box hull(const Box& a, const Box& b);
/// Intersection (possibly empty).
Box overlap(const Box& a, const Box& b);

/// Calls fn(site) for every site of the box in lexicographic order.
template <class Fn>
void for_each_site(const Box& box, Fn&& fn) {
  if (box.empty()) return;
  Site s = box.lo;
  const int d = box.dim();
  while (true) {
    fn(static_cast<const Site&>(s));
    int i = d - 1;
    while (i >= 0) {
      if (s[i] < box.hi[i]) {
        ++s[i];
        break;
      }
      s[i] = box.lo[i];
      --i;
    }
    if (i < 0) return;
  }
}

/// Boolean membership table over a box.
struct Mask {
  Box box;
  std::vector<std::uint8_t> bits;

  bool at(const Site& s) const { return bits[box.index(s)] != 0; }
  std::size_t count() const;
};

class Region;

enum class RegionKind {
  full,
  empty,
  halfspace,
  linear_halfspace,
  sector,
  box,
  finite_set,
  complement,
  intersection,
  union_,
  thickening,
  pullback,
};

/// Symbolic subset of Z^d. Immutable, cheap to copy, safe to share across threads.
/// Closed under complement, intersection, union and thickening.
class Region {
 public:
  struct Node;

  Region() = default;

  static Region full(int d);
  static Region empty(int d);
  /// {x : x[axis] >= threshold} or, with geq == false, {x : x[axis] < threshold}.
  static Region halfspace(int d, int axis, std::int64_t threshold, bool geq = true);
  /// {x : normal . x >= offset}.
  static Region linear_halfspace(std::vector<double> normal, double offset);
  /// Planar sector of angles [from, to) (radians, counterclockwise) about a real center.
  static Region sector(std::array<double, 2> center, double from_angle, double to_angle);
  static Region box(const Box& b);
  static Region finite_set(std::vector<Site> sites);
  /// Preimage of the i-th standard corner sector under the distance-to-parts map.
  static Region pullback(std::vector<Region> parts, int index, std::int64_t search_radius);

  int dim() const;
  RegionKind kind() const;
  bool contains(const Site& s) const;
  Mask mask(const Box& box) const;

  /// Sup-norm radius about the origin known to contain the region, when the region
  /// kind makes that decidable in closed form.
  std::optional<std::int64_t> bounded_hint() const;

  std::string describe() const;

  const Node& node() const { return *node_; }
  bool valid() const { return node_ != nullptr; }

  friend Region complement(const Region& a);
  friend Region intersect(std::vector<Region> args);
  friend Region unite(std::vector<Region> args);
  friend Region thicken(const LatticeSpace& space, const Region& y, std::int64_t r);

 private:
  explicit Region(std::shared_ptr<const Node> n) : node_(std::move(n)) {}
  std::shared_ptr<const Node> node_;
};

Region complement(const Region& a);
Region intersect(std::vector<Region> args);
Region unite(std::vector<Region> args);
Region thicken(const LatticeSpace& space, const Region& y, std::int64_t r);

/// Sites of y inside window, lexicographic order.
std::vector<Site> enumerate(const Region& y, const Box& window);

/// Bounding radius of a certified construction as an affine function of R.
struct AffineRadius {
  double slope = 1.0;
  double intercept = 0.0;
  std::int64_t at(std::int64_t r) const;
};

/// Ordered pairwise-disjoint regions covering Z^d.
struct Partition {
  std::vector<Region> parts;
  std::optional<AffineRadius> analytic;

  int n() const { return static_cast<int>(parts.size()) - 1; }
  int dim() const { return parts.empty() ? 0 : parts.front().dim(); }
  /// Index of the part containing s; throws validation_failed when s is in none or several.
  int part_of(const Site& s) const;
};

/// Ordered half spaces X_1..X_n; coarse transversality concerns X_i and X_i^c together.
struct HalfSpaceCollection {
  std::vector<Region> halfspaces;
  std::optional<AffineRadius> analytic;

  int n() const { return static_cast<int>(halfspaces.size()); }
  int dim() const { return halfspaces.empty() ? 0 : halfspaces.front().dim(); }
  /// X_1, X_1^c, ..., X_n, X_n^c.
  std::vector<Region> with_complements() const;
};

enum class Verdict { certified_on_window, certified_analytic, failed };

const char* to_string(Verdict v) noexcept;

struct TransversalityCertificate {
  std::vector<Region> regions;
  std::vector<std::int64_t> radii;
  std::vector<std::int64_t> bounding_radius;
  Verdict verdict = Verdict::failed;
  std::optional<Box> window;

  std::int64_t bound_for(std::int64_t r) const;
};

/// For each R computes the intersection of the R-thickenings inside window and certifies
/// that it stays clear of an edge collar of width R + margin. Throws window_too_small
/// when the intersection reaches the collar (inconclusive, not a proof of failure).
TransversalityCertificate check_transversality(const LatticeSpace& space,
                                               const std::vector<Region>& regions,
                                               const std::vector<std::int64_t>& radii,
                                               const Box& window, std::int64_t margin = 2);

/// Same check, trying the windows in order and returning a failed verdict instead of
/// throwing when every window is too small.
TransversalityCertificate probe_transversality(const LatticeSpace& space,
                                               const std::vector<Region>& regions,
                                               const std::vector<std::int64_t>& radii,
                                               const std::vector<Box>& windows,
                                               std::int64_t margin = 2);

/// Partition certificate; verifies the disjoint-cover property on window too.
TransversalityCertificate certify(const LatticeSpace& space, const Partition& p,
                                  const std::vector<std::int64_t>& radii, const Box& window);
TransversalityCertificate certify(const LatticeSpace& space, const HalfSpaceCollection& x,
                                  const std::vector<std::int64_t>& radii, const Box& window);

HalfSpaceCollection standard_halfspaces(int d);
Partition standard_partition(int d);
/// A_0 = X_1...X_n, A_i = X_i^c X_{i+1}...X_n.
Partition partition_from_halfspaces(const HalfSpaceCollection& x);
/// Planar partition into sectors between consecutive rays (angles increasing, radians).
Partition sector_partition(std::array<double, 2> center, const std::vector<double>& ray_angles);

/// (d_{A_0}(x), ..., d_{A_n}(x)); searches balls up to search_radius.
std::vector<std::int64_t> classifying_map(const LatticeSpace& space, const Partition& p,
                                          const Site& x, std::int64_t search_radius);

nlohmann::json to_json(const Region& r);
Region region_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Partition& p);
Partition partition_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Site& s);
Site site_from_json(const nlohmann::json& j);

}  // namespace qtrace
