#include "qtrace/opalg.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

namespace qtrace {

// ---------------------------------------------------------------------------
// Propagation arithmetic
// ---------------------------------------------------------------------------

Propagation combine_product(const Propagation& a, const Propagation& b, int dim) {
  Propagation p;
  p.radius = a.radius + b.radius;
  p.decay = a.decay || b.decay;
  p.tail = a.tail + b.tail;
  if (a.decay && b.decay) {
    p.kappa = std::min(a.kappa, b.kappa);
    p.C = a.C * b.C * std::pow(2.0 * static_cast<double>(std::min(a.radius, b.radius)) + 1.0, dim);
  } else if (a.decay) {
    p.kappa = a.kappa;
    p.C = a.C;
  } else if (b.decay) {
    p.kappa = b.kappa;
    p.C = b.C;
  }
  return p;
}

Propagation combine_sum(const Propagation& a, const Propagation& b) {
  Propagation p;
  p.radius = std::max(a.radius, b.radius);
  p.decay = a.decay || b.decay;
  p.tail = a.tail + b.tail;
  p.C = a.C + b.C;
  if (a.decay && b.decay) p.kappa = std::min(a.kappa, b.kappa);
  else p.kappa = a.decay ? a.kappa : b.kappa;
  return p;
}

// ---------------------------------------------------------------------------
// Site functions
// ---------------------------------------------------------------------------

SiteFunction SiteFunction::of_region(const Region& y, std::string label) {
  SiteFunction f;
  f.dim = y.dim();
  f.value = [y](const Site& s) { return y.contains(s) ? Complex(1.0) : Complex(0.0); };
  f.support = y;
  f.cosupport = complement(y);
  f.indicator = true;
  f.label = label.empty() ? y.describe() : std::move(label);
  return f;
}

SiteFunction SiteFunction::one(int d) {
  SiteFunction f;
  f.dim = d;
  f.value = [](const Site&) { return Complex(1.0); };
  f.support = Region::full(d);
  f.cosupport = Region::empty(d);
  f.indicator = true;
  f.label = "1";
  return f;
}

SiteFunction SiteFunction::ramp(int d, int axis, std::int64_t a, std::int64_t b) {
  if (b < a) throw Error(ErrorCode::invalid_argument, "ramp needs a <= b");
  SiteFunction f;
  f.dim = d;
  const double width = static_cast<double>(b - a + 1);
  f.value = [axis, a, width](const Site& s) {
    const double t = static_cast<double>(s[axis] - a + 1) / width;
    return Complex(std::clamp(t, 0.0, 1.0));
  };
  f.support = Region::halfspace(d, axis, a, true);
  f.cosupport = Region::halfspace(d, axis, b, false);
  f.indicator = (a == b);
  f.label = "ramp(" + std::to_string(axis) + "," + std::to_string(a) + "," + std::to_string(b) + ")";
  return f;
}

// ---------------------------------------------------------------------------
// Nodes
// ---------------------------------------------------------------------------

struct KernelOperator::Node {
  enum class Kind { leaf, diagonal, zero, compose, sum, adjoint, comm_diag, restrict_ };

  Node(Kind kind_, LatticeSpace space_, int k_, Propagation prop_, std::optional<Region> support_,
       std::string label_)
      : kind(kind_), space(space_), k(k_), prop(prop_), support(std::move(support_)), label(std::move(label_)) {}
  virtual ~Node() = default;

  Kind kind;
  LatticeSpace space;
  int k;
  Propagation prop;
  std::optional<Region> support;
  std::string label;

  /// Writes K(x, y) (k x k row-major) into out.
  virtual void block(const Site& x, const Site& y, Complex* out) const = 0;
  virtual SpMat build(const Box& box) const;

  std::shared_ptr<const SpMat> assembled(const Box& box) const {
    {
      std::lock_guard<std::mutex> lock(mu);
      for (const auto& [b, m] : cache)
        if (b == box) return m;
    }
    auto m = std::make_shared<const SpMat>(build(box));
    std::lock_guard<std::mutex> lock(mu);
    cache.emplace_back(box, m);
    if (cache.size() > kCacheSize) cache.erase(cache.begin());
    return m;
  }

  static constexpr std::size_t kCacheSize = 2;
  mutable std::mutex mu;
  mutable std::vector<std::pair<Box, std::shared_ptr<const SpMat>>> cache;
};

using Node = KernelOperator::Node;

namespace {

using Index = std::int64_t;

// Column-major fill from a per-site kernel evaluated on the propagation ball.
SpMat build_from_blocks(const Node& n, const Box& box) {
  const int k = n.k;
  const auto ns = static_cast<Index>(box.size());
  SpMat m(ns * k, ns * k);
  const std::int64_t r = n.prop.radius;
  std::vector<Complex> blocks;
  std::vector<Index> rows;
  std::vector<Complex> blk(static_cast<std::size_t>(k * k));
  std::size_t est = 0;
  {
    std::size_t ball = 1;
    for (int i = 0; i < box.dim(); ++i) ball *= static_cast<std::size_t>(2 * r + 1);
    est = std::min<std::size_t>(ball, box.size()) * box.size() * static_cast<std::size_t>(k * k) / 4 + 16;
  }
  m.reserve(static_cast<Index>(est));
  Index iy = 0;
  for_each_site(box, [&](const Site& y) {
    rows.clear();
    blocks.clear();
    for_each_site(overlap(Box::around(y, r), box), [&](const Site& x) {
      if (n.space.distance(x, y) > r) return;
      std::fill(blk.begin(), blk.end(), Complex(0.0));
      n.block(x, y, blk.data());
      if (std::all_of(blk.begin(), blk.end(), [](const Complex& c) { return c == Complex(0.0); })) return;
      rows.push_back(static_cast<Index>(box.index(x)));
      blocks.insert(blocks.end(), blk.begin(), blk.end());
    });
    for (int b = 0; b < k; ++b) {
      const Index col = iy * k + b;
      m.startVec(col);
      for (std::size_t t = 0; t < rows.size(); ++t) {
        for (int a = 0; a < k; ++a) {
          const Complex v = blocks[t * static_cast<std::size_t>(k * k) + static_cast<std::size_t>(a * k + b)];
          if (v != Complex(0.0)) m.insertBack(rows[t] * k + a, col) = v;
        }
      }
    }
    ++iy;
  });
  m.finalize();
  return m;
}

}  // namespace

SpMat Node::build(const Box& box) const { return build_from_blocks(*this, box); }

namespace {

struct LeafNode final : Node {
  LeafNode(LatticeSpace s, int k_, Propagation p, KernelFn f, std::optional<Region> supp, std::string l)
      : Node(Kind::leaf, s, k_, p, std::move(supp), std::move(l)), fn(std::move(f)) {}
  KernelFn fn;
  void block(const Site& x, const Site& y, Complex* out) const override {
    if (space.distance(x, y) > prop.radius) return;
    fn(x, y, out);
  }
};

struct DiagonalNode final : Node {
  DiagonalNode(LatticeSpace s, int k_, DiagonalFn f, std::optional<Region> supp, std::string l)
      : Node(Kind::diagonal, s, k_, Propagation::exact(0), std::move(supp), std::move(l)), fn(std::move(f)) {}
  DiagonalFn fn;
  void block(const Site& x, const Site& y, Complex* out) const override {
    if (x == y) fn(x, out);
  }
  SpMat build(const Box& box) const override {
    const auto ns = static_cast<Index>(box.size());
    SpMat m(ns * k, ns * k);
    m.reserve(ns * k * k);
    std::vector<Complex> blk(static_cast<std::size_t>(k * k));
    Index i = 0;
    for_each_site(box, [&](const Site& x) {
      std::fill(blk.begin(), blk.end(), Complex(0.0));
      fn(x, blk.data());
      for (int b = 0; b < k; ++b) {
        m.startVec(i * k + b);
        for (int a = 0; a < k; ++a) {
          const Complex v = blk[static_cast<std::size_t>(a * k + b)];
          if (v != Complex(0.0)) m.insertBack(i * k + a, i * k + b) = v;
        }
      }
      ++i;
    });
    m.finalize();
    return m;
  }
};

struct ZeroNode final : Node {
  ZeroNode(LatticeSpace s, int k_)
      : Node(Kind::zero, s, k_, Propagation::exact(0), Region::empty(s.dim()), "0") {}
  void block(const Site&, const Site&, Complex*) const override {}
  SpMat build(const Box& box) const override {
    const auto n = static_cast<Index>(box.size()) * k;
    SpMat m(n, n);
    m.makeCompressed();
    return m;
  }
};

// Rows of `big` restricted to `small` (both flattened with block size k).
SpMat selection(const Box& small, const Box& big, int k) {
  const auto ns = static_cast<Index>(small.size());
  const auto nb = static_cast<Index>(big.size());
  SpMat s(ns * k, nb * k);
  std::vector<Eigen::Triplet<Complex, Index>> t;
  t.reserve(static_cast<std::size_t>(ns * k));
  Index i = 0;
  for_each_site(small, [&](const Site& x) {
    const auto j = static_cast<Index>(big.index(x));
    for (int a = 0; a < k; ++a) t.emplace_back(i * k + a, j * k + a, Complex(1.0));
    ++i;
  });
  s.setFromTriplets(t.begin(), t.end());
  return s;
}

struct ComposeNode final : Node {
  ComposeNode(KernelOperator a_, KernelOperator b_, Propagation p, std::optional<Region> supp)
      : Node(Kind::compose, a_.space(), a_.k(), p, std::move(supp), "(" + a_.label() + ")(" + b_.label() + ")"),
        a(std::move(a_)),
        b(std::move(b_)) {}
  KernelOperator a, b;

  void block(const Site& x, const Site& y, Complex* out) const override {
    const std::int64_t ra = a.propagation().radius;
    const std::int64_t rb = b.propagation().radius;
    if (space.distance(x, y) > ra + rb) return;
    Eigen::Map<Eigen::Matrix<Complex, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> o(out, k, k);
    for_each_site(Box::around(x, ra), [&](const Site& z) {
      if (space.distance(x, z) > ra || space.distance(z, y) > rb) return;
      o += a.block(x, z) * b.block(z, y);
    });
  }

  SpMat build(const Box& box) const override {
    const std::int64_t rho = std::min(a.propagation().radius, b.propagation().radius);
    if (a.is_diagonal()) {
      SpMat bm = *b.assemble(box);
      return SpMat(*a.assemble(box) * bm);
    }
    if (b.is_diagonal()) {
      SpMat am = *a.assemble(box);
      return SpMat(am * *b.assemble(box));
    }
    const Box big = box.expanded(rho);
    const SpMat sel = selection(box, big, k);
    const auto am = a.assemble(big);
    const auto bm = b.assemble(big);
    SpMat right = SpMat(*bm * SpMat(sel.transpose()));
    SpMat prod = SpMat(*am * right);
    return SpMat(sel * prod);
  }
};

struct SumNode final : Node {
  SumNode(std::vector<std::pair<Complex, KernelOperator>> terms_, Propagation p, std::optional<Region> supp,
          std::string l)
      : Node(Kind::sum, terms_.front().second.space(), terms_.front().second.k(), p, std::move(supp), std::move(l)),
        terms(std::move(terms_)) {}
  std::vector<std::pair<Complex, KernelOperator>> terms;

  void block(const Site& x, const Site& y, Complex* out) const override {
    Eigen::Map<Eigen::Matrix<Complex, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> o(out, k, k);
    for (const auto& [c, op] : terms) o += c * op.block(x, y);
  }
  SpMat build(const Box& box) const override {
    SpMat acc = terms.front().first * *terms.front().second.assemble(box);
    for (std::size_t i = 1; i < terms.size(); ++i) acc += terms[i].first * *terms[i].second.assemble(box);
    acc.prune(Complex(0.0), 0.0);
    return acc;
  }
};

struct AdjointNode final : Node {
  explicit AdjointNode(KernelOperator a_)
      : Node(Kind::adjoint, a_.space(), a_.k(), a_.propagation(), a_.support(), "(" + a_.label() + ")*"),
        a(std::move(a_)) {}
  KernelOperator a;
  void block(const Site& x, const Site& y, Complex* out) const override {
    Eigen::Map<Eigen::Matrix<Complex, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> o(out, k, k);
    o = a.block(y, x).adjoint();
  }
  SpMat build(const Box& box) const override { return SpMat(a.assemble(box)->adjoint()); }
};

// sign * (A f - f A), entries A(x, y) (f(y) - f(x)).
struct CommDiagNode final : Node {
  CommDiagNode(KernelOperator a_, SiteFunction f_, double sign_, std::optional<Region> supp, std::string l)
      : Node(Kind::comm_diag, a_.space(), a_.k(), a_.propagation(), std::move(supp), std::move(l)),
        a(std::move(a_)),
        f(std::move(f_)),
        sign(sign_) {}
  KernelOperator a;
  SiteFunction f;
  double sign;

  void block(const Site& x, const Site& y, Complex* out) const override {
    const Complex w = sign * (f(y) - f(x));
    if (w == Complex(0.0)) return;
    Eigen::Map<Eigen::Matrix<Complex, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> o(out, k, k);
    o = w * a.block(x, y);
  }
  SpMat build(const Box& box) const override {
    SpMat m = *a.assemble(box);
    std::vector<Complex> fv(box.size());
    std::size_t i = 0;
    for_each_site(box, [&](const Site& s) { fv[i++] = f(s); });
    for (Index c = 0; c < m.outerSize(); ++c) {
      for (SpMat::InnerIterator it(m, c); it; ++it) {
        const Complex w = sign * (fv[static_cast<std::size_t>(it.col() / k)] - fv[static_cast<std::size_t>(it.row() / k)]);
        it.valueRef() *= w;
      }
    }
    m.prune(Complex(0.0), 0.0);
    return m;
  }
};

struct RestrictNode final : Node {
  RestrictNode(KernelOperator a_, Region supp)
      : Node(Kind::restrict_, a_.space(), a_.k(), a_.propagation(), std::move(supp), a_.label()), a(std::move(a_)) {}
  KernelOperator a;
  void block(const Site& x, const Site& y, Complex* out) const override {
    Eigen::Map<Eigen::Matrix<Complex, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> o(out, k, k);
    o = a.block(x, y);
  }
  SpMat build(const Box& box) const override { return *a.assemble(box); }
};

void check_compatible(const KernelOperator& a, const KernelOperator& b) {
  if (!a.valid() || !b.valid()) throw Error(ErrorCode::invalid_argument, "operator not initialized");
  if (a.space() != b.space()) throw Error(ErrorCode::dimension_mismatch, "operators on different spaces");
  if (a.k() != b.k())
    throw Error(ErrorCode::dimension_mismatch,
                "block sizes " + std::to_string(a.k()) + " and " + std::to_string(b.k()) + " differ");
}

std::optional<Region> intersect_optional(std::vector<Region> parts) {
  if (parts.empty()) return std::nullopt;
  return intersect(std::move(parts));
}

}  // namespace

// ---------------------------------------------------------------------------
// KernelOperator
// ---------------------------------------------------------------------------

KernelOperator KernelOperator::from_kernel(const LatticeSpace& space, int k, Propagation prop, KernelFn fn,
                                           std::optional<Region> support, std::string label) {
  if (k < 1) throw Error(ErrorCode::invalid_argument, "block size must be positive");
  if (prop.radius < 0) throw Error(ErrorCode::invalid_argument, "negative propagation");
  return KernelOperator(std::make_shared<LeafNode>(space, k, prop, std::move(fn), std::move(support), std::move(label)));
}

KernelOperator KernelOperator::diagonal(const LatticeSpace& space, int k, DiagonalFn fn,
                                        std::optional<Region> support, std::string label) {
  if (k < 1) throw Error(ErrorCode::invalid_argument, "block size must be positive");
  return KernelOperator(std::make_shared<DiagonalNode>(space, k, std::move(fn), std::move(support), std::move(label)));
}

KernelOperator KernelOperator::zero(const LatticeSpace& space, int k) {
  return KernelOperator(std::make_shared<ZeroNode>(space, k));
}

KernelOperator KernelOperator::identity(const LatticeSpace& space, int k) {
  return constant_block(space, Block::Identity(k, k));
}

KernelOperator KernelOperator::constant_block(const LatticeSpace& space, const Block& m) {
  if (m.rows() != m.cols() || m.rows() < 1) throw Error(ErrorCode::dimension_mismatch, "scalar block must be square");
  const int k = static_cast<int>(m.rows());
  if (m.isZero(0.0)) return zero(space, k);
  Block copy = m;
  return diagonal(
      space, k,
      [copy, k](const Site&, Complex* out) {
        for (int a = 0; a < k; ++a)
          for (int b = 0; b < k; ++b) out[a * k + b] = copy(a, b);
      },
      std::nullopt, copy.isIdentity(0.0) ? "1" : "const");
}

KernelOperator KernelOperator::translation(const LatticeSpace& space, const Site& shift, const Block& m) {
  if (shift.dim != space.dim()) throw Error(ErrorCode::dimension_mismatch, "translation vector dimension");
  const int k = static_cast<int>(m.rows());
  const std::int64_t r = space.distance(shift, Site::origin(space.dim()));
  Block copy = m;
  return from_kernel(
      space, k, Propagation::exact(r),
      [shift, copy, k](const Site& x, const Site& y, Complex* out) {
        for (int i = 0; i < x.dim; ++i)
          if (x[i] != y[i] + shift[i]) return;
        for (int a = 0; a < k; ++a)
          for (int b = 0; b < k; ++b) out[a * k + b] = copy(a, b);
      },
      std::nullopt, "T" + to_string(shift));
}

const LatticeSpace& KernelOperator::space() const { return node_->space; }
int KernelOperator::k() const { return node_->k; }
const Propagation& KernelOperator::propagation() const { return node_->prop; }
const std::optional<Region>& KernelOperator::support() const { return node_->support; }
bool KernelOperator::is_diagonal() const {
  return node_->kind == Node::Kind::diagonal || node_->kind == Node::Kind::zero ||
         (node_->kind == Node::Kind::restrict_ && static_cast<const RestrictNode&>(*node_).a.is_diagonal());
}
bool KernelOperator::is_zero() const { return node_->kind == Node::Kind::zero; }
std::string KernelOperator::label() const { return node_->label; }

Block KernelOperator::block(const Site& x, const Site& y) const {
  if (x.dim != space().dim() || y.dim != space().dim())
    throw Error(ErrorCode::dimension_mismatch, "kernel query dimension");
  Eigen::Matrix<Complex, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> m =
      Eigen::Matrix<Complex, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>::Zero(k(), k());
  node_->block(x, y, m.data());
  return m;
}

std::shared_ptr<const SpMat> KernelOperator::assemble(const Box& box) const {
  if (box.dim() != space().dim()) throw Error(ErrorCode::dimension_mismatch, "assembly box dimension");
  return node_->assembled(box);
}

KernelOperator KernelOperator::with_support(const Region& y) const {
  Region s = node_->support ? intersect({*node_->support, y}) : y;
  return KernelOperator(std::make_shared<RestrictNode>(*this, s));
}

KernelOperator mult_operator(const LatticeSpace& space, const SiteFunction& f, int k) {
  if (f.dim != space.dim()) throw Error(ErrorCode::dimension_mismatch, "site function dimension");
  auto fn = f.value;
  return KernelOperator::diagonal(
      space, k,
      [fn, k](const Site& x, Complex* out) {
        const Complex v = fn(x);
        for (int a = 0; a < k; ++a) out[a * k + a] = v;
      },
      f.support, f.label);
}

KernelOperator compose(const KernelOperator& a, const KernelOperator& b) {
  check_compatible(a, b);
  if (a.is_zero()) return a;
  if (b.is_zero()) return b;
  const auto& sp = a.space();
  std::vector<Region> supp;
  if (a.support()) supp.push_back(thicken(sp, *a.support(), b.propagation().radius));
  if (b.support()) supp.push_back(thicken(sp, *b.support(), a.propagation().radius));
  return KernelOperator(std::make_shared<ComposeNode>(a, b, combine_product(a.propagation(), b.propagation(), sp.dim()),
                                                      intersect_optional(std::move(supp))));
}

namespace {

KernelOperator linear_combination(std::vector<std::pair<Complex, KernelOperator>> terms) {
  std::vector<std::pair<Complex, KernelOperator>> kept;
  for (auto& t : terms)
    if (!t.second.is_zero() && t.first != Complex(0.0)) kept.push_back(std::move(t));
  if (kept.empty()) return KernelOperator::zero(terms.front().second.space(), terms.front().second.k());
  Propagation p = kept.front().second.propagation();
  bool all_supported = true;
  std::vector<Region> supp;
  std::string label;
  for (std::size_t i = 0; i < kept.size(); ++i) {
    if (i) p = combine_sum(p, kept[i].second.propagation());
    if (kept[i].second.support()) supp.push_back(*kept[i].second.support());
    else all_supported = false;
    label += (i ? " + " : "") + kept[i].second.label();
  }
  const double cmax = std::abs(std::max_element(kept.begin(), kept.end(), [](const auto& x, const auto& y) {
                                 return std::abs(x.first) < std::abs(y.first);
                               })->first);
  p.tail *= std::max(1.0, cmax);
  p.C *= std::max(1.0, cmax);
  std::optional<Region> s;
  if (all_supported) s = unite(std::move(supp));
  return KernelOperator(std::make_shared<SumNode>(std::move(kept), p, std::move(s), std::move(label)));
}

}  // namespace

KernelOperator add(const KernelOperator& a, const KernelOperator& b) {
  check_compatible(a, b);
  return linear_combination({{Complex(1.0), a}, {Complex(1.0), b}});
}

KernelOperator sub(const KernelOperator& a, const KernelOperator& b) {
  check_compatible(a, b);
  return linear_combination({{Complex(1.0), a}, {Complex(-1.0), b}});
}

KernelOperator scale(Complex c, const KernelOperator& a) { return linear_combination({{c, a}}); }

KernelOperator adjoint(const KernelOperator& a) {
  if (a.is_zero()) return a;
  return KernelOperator(std::make_shared<AdjointNode>(a));
}

KernelOperator commutator(const KernelOperator& a, const KernelOperator& b) {
  check_compatible(a, b);
  return sub(compose(a, b), compose(b, a));
}

namespace {

KernelOperator commutator_with_function(const KernelOperator& a, const SiteFunction& f, double sign) {
  if (f.dim != a.space().dim()) throw Error(ErrorCode::dimension_mismatch, "site function dimension");
  if (a.is_zero() || f.cosupport.kind() == RegionKind::empty || f.support.kind() == RegionKind::empty)
    return KernelOperator::zero(a.space(), a.k());
  const auto& sp = a.space();
  const std::int64_t r = a.propagation().radius;
  std::vector<Region> supp{thicken(sp, f.support, r), thicken(sp, f.cosupport, r)};
  if (a.support()) supp.push_back(*a.support());
  const std::string l = sign > 0 ? "[" + a.label() + "," + f.label + "]" : "[" + f.label + "," + a.label() + "]";
  return KernelOperator(std::make_shared<CommDiagNode>(a, f, sign, intersect(std::move(supp)), l));
}

}  // namespace

KernelOperator commutator(const KernelOperator& a, const SiteFunction& f) {
  return commutator_with_function(a, f, 1.0);
}

KernelOperator commutator(const SiteFunction& f, const KernelOperator& a) {
  return commutator_with_function(a, f, -1.0);
}

// ---------------------------------------------------------------------------
// Unitization
// ---------------------------------------------------------------------------

UnitizedOperator UnitizedOperator::of_part(const KernelOperator& part) {
  return UnitizedOperator{Block::Zero(part.k(), part.k()), part};
}

UnitizedOperator UnitizedOperator::unit(const LatticeSpace& space, int k) {
  return UnitizedOperator{Block::Identity(k, k), KernelOperator::zero(space, k)};
}

KernelOperator UnitizedOperator::full() const {
  if (scalar.isZero(0.0)) return part;
  return add(KernelOperator::constant_block(part.space(), scalar), part);
}

KernelOperator UnitizedOperator::minus_one() const {
  const Block s = scalar - Block::Identity(k(), k());
  if (s.isZero(0.0)) return part;
  return add(KernelOperator::constant_block(part.space(), s), part);
}

namespace {

KernelOperator scalar_times(const Block& s, const KernelOperator& a, bool left) {
  if (s.isZero(0.0) || a.is_zero()) return KernelOperator::zero(a.space(), a.k());
  if (s.isIdentity(0.0)) return a;
  const auto c = KernelOperator::constant_block(a.space(), s);
  return left ? compose(c, a) : compose(a, c);
}

}  // namespace

UnitizedOperator operator*(const UnitizedOperator& a, const UnitizedOperator& b) {
  check_compatible(a.part, b.part);
  UnitizedOperator out;
  out.scalar = a.scalar * b.scalar;
  KernelOperator p = compose(a.part, b.part);
  p = add(p, scalar_times(a.scalar, b.part, true));
  p = add(p, scalar_times(b.scalar, a.part, false));
  out.part = p;
  return out;
}

UnitizedOperator conjugate(const Invertible& v, const UnitizedOperator& p) { return v.u * p * v.inv; }

Invertible conjugate(const Invertible& v, const Invertible& u) {
  return Invertible{v.u * u.u * v.inv, v.u * u.inv * v.inv};
}

// ---------------------------------------------------------------------------
// Support budget and traces
// ---------------------------------------------------------------------------

nlohmann::json to_json(const TraceReport& r) {
  return nlohmann::json{{"value", {r.value.real(), r.value.imag()}},
                        {"error_bound", r.error_bound},
                        {"region_radius", r.region_radius},
                        {"sites_visited", r.sites_visited}};
}

namespace {

struct ChainGeometry {
  std::vector<std::int64_t> radii;
  std::vector<std::int64_t> prefix;  // sum of radii strictly left of j
  std::vector<std::int64_t> suffix;  // sum of radii strictly right of j
  std::int64_t total = 0;
  std::int64_t reach = 0;  // max distance of any intermediate index from x0
  double tail = 0.0;
  bool decay = false;
};

ChainGeometry chain_geometry(const std::vector<KernelOperator>& chain) {
  ChainGeometry g;
  const std::size_t m = chain.size();
  g.radii.resize(m);
  for (std::size_t j = 0; j < m; ++j) {
    g.radii[j] = chain[j].propagation().radius;
    g.tail += chain[j].propagation().tail;
    g.decay = g.decay || chain[j].propagation().decay;
  }
  g.prefix.assign(m, 0);
  g.suffix.assign(m, 0);
  for (std::size_t j = 1; j < m; ++j) g.prefix[j] = g.prefix[j - 1] + g.radii[j - 1];
  for (std::size_t j = m - 1; j-- > 0;) g.suffix[j] = g.suffix[j + 1] + g.radii[j + 1];
  g.total = m ? g.prefix[m - 1] + g.radii[m - 1] : 0;
  for (std::size_t j = 0; j < m; ++j) g.reach = std::max(g.reach, std::min(g.prefix[j], g.radii[j] + g.suffix[j]));
  return g;
}

void check_chain(const std::vector<KernelOperator>& chain) {
  if (chain.empty()) throw Error(ErrorCode::invalid_argument, "empty operator chain");
  for (std::size_t j = 1; j < chain.size(); ++j) check_compatible(chain.front(), chain[j]);
}

struct Budget {
  SupportBudget support;
  std::vector<Site> sites;
  Box box;  // assembly box
  ChainGeometry geo;
};

Budget budget_for(const std::vector<KernelOperator>& chain, const TraceOptions& opt,
                  const std::optional<Region>& restrict_to) {
  check_chain(chain);
  const auto& sp = chain.front().space();
  const int d = sp.dim();
  Budget b;
  b.geo = chain_geometry(chain);
  std::vector<Region> parts;
  bool any_zero = false;
  for (std::size_t j = 0; j < chain.size(); ++j) {
    if (chain[j].is_zero()) any_zero = true;
    if (chain[j].support())
      parts.push_back(thicken(sp, *chain[j].support(), std::min(b.geo.prefix[j], b.geo.suffix[j])));
  }
  if (restrict_to) parts.push_back(*restrict_to);
  Region region = any_zero ? Region::empty(d) : (parts.empty() ? Region::full(d) : intersect(parts));
  if (opt.pad > 0) region = thicken(sp, region, opt.pad);

  auto probe = [&](std::int64_t w, std::vector<Site>* out) {
    const Box window = Box::centered(d, w);
    const std::int64_t limit = w - b.geo.total - opt.margin;
    const Mask m = region.mask(window);
    bool clear = true;
    for (std::size_t i = 0; i < m.bits.size(); ++i) {
      if (!m.bits[i]) continue;
      const Site s = window.site(i);
      if (s.sup_norm() > limit) {
        clear = false;
        if (!out) break;
      }
      if (out) out->push_back(s);
    }
    return clear;
  };

  if (!probe(opt.window, &b.sites)) {
    if (probe(2 * opt.window, nullptr)) {
      throw Error(ErrorCode::window_too_small,
                  "trace region needs a window larger than " + std::to_string(opt.window) + " (total propagation " +
                      std::to_string(b.geo.total) + ")");
    }
    throw Error(ErrorCode::unbounded_support,
                "no bounded support certificate for the product " + [&] {
                  std::string s;
                  for (const auto& f : chain) s += "[" + f.label() + "]";
                  return s;
                }());
  }
  b.support.region = region;
  b.support.radius_used = b.geo.total;
  b.support.bounded = true;
  std::int64_t rad = 0;
  Box bb;
  for (const auto& s : b.sites) {
    rad = std::max(rad, s.sup_norm());
    bb = bb.lo.dim == 0 ? Box{s, s} : hull(bb, Box{s, s});
  }
  b.support.bounding_radius = rad;
  b.support.error_bound = static_cast<double>(b.sites.size()) * chain.front().k() * b.geo.tail;
  if (!b.sites.empty()) b.box = bb.expanded(b.geo.reach);
  return b;
}

struct Kahan {
  double re = 0, im = 0, cre = 0, cim = 0;
  void add(Complex v) {
    double y = v.real() - cre;
    double t = re + y;
    cre = (t - re) - y;
    re = t;
    y = v.imag() - cim;
    t = im + y;
    cim = (t - im) - y;
    im = t;
  }
  Complex value() const { return {re, im}; }
};

// Per-site diagonal block traces of the chain, in the order of `sites`.
std::vector<Complex> site_traces(const std::vector<KernelOperator>& chain, const std::vector<Site>& sites,
                                 const Box& box, const ChainGeometry& geo, const TraceOptions& opt) {
  std::vector<Complex> out(sites.size(), Complex(0.0));
  if (sites.empty()) return out;
  const int k = chain.front().k();
  const auto& sp = chain.front().space();
  const std::size_t m = chain.size();
  std::vector<std::shared_ptr<const SpMat>> mats(m);
  for (std::size_t j = 0; j < m; ++j) mats[j] = chain[j].assemble(box);
  // leading diagonal factors are folded into the first non-diagonal one
  std::size_t lead = 0;
  while (lead + 1 < m && chain[lead].is_diagonal()) ++lead;
  SpMat head = *mats[0];
  for (std::size_t j = 1; j <= lead; ++j) head = SpMat(head * *mats[j]);
  const SpMatRow first(head);
  const bool single = (lead + 1 == m);
  const auto n = static_cast<Index>(box.size()) * k;

  const std::size_t batch = std::max<std::size_t>(1, opt.batch);
  const std::size_t nbatches = (sites.size() + batch - 1) / batch;
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;

  auto worker = [&]() {
    std::vector<Complex> dense(static_cast<std::size_t>(n), Complex(0.0));
    try {
      for (std::size_t bi = next++; bi < nbatches; bi = next++) {
        const std::size_t s0 = bi * batch;
        const std::size_t s1 = std::min(sites.size(), s0 + batch);
        const auto ncols = static_cast<Index>((s1 - s0) * static_cast<std::size_t>(k));
        std::vector<Site> base(s1 - s0);
        std::vector<Index> base_index(s1 - s0);
        for (std::size_t t = s0; t < s1; ++t) {
          base[t - s0] = sites[t];
          base_index[t - s0] = static_cast<Index>(box.index(sites[t]));
        }
        if (single) {
          for (std::size_t t = s0; t < s1; ++t) {
            Complex acc = 0.0;
            for (int a = 0; a < k; ++a) acc += head.coeff(base_index[t - s0] * k + a, base_index[t - s0] * k + a);
            out[t] = acc;
          }
          continue;
        }
        // V = columns of the last factor at the base points
        const SpMat& last = *mats[m - 1];
        SpMat v(n, ncols);
        {
          std::vector<Eigen::Triplet<Complex, Index>> trip;
          for (Index c = 0; c < ncols; ++c) {
            const Index col = base_index[static_cast<std::size_t>(c / k)] * k + c % k;
            for (SpMat::InnerIterator it(last, col); it; ++it) trip.emplace_back(it.row(), c, it.value());
          }
          v.setFromTriplets(trip.begin(), trip.end());
        }
        auto prune_to = [&](std::int64_t reach) {
          v.prune([&](const Index& row, const Index& col, const Complex& val) {
            if (val == Complex(0.0)) return false;
            const Site z = box.site(static_cast<std::size_t>(row / k));
            return sp.distance(z, base[static_cast<std::size_t>(col / k)]) <= reach;
          });
        };
        prune_to(geo.prefix[m - 1]);
        for (std::size_t j = m - 1; j-- > lead + 1;) {
          v = SpMat(*mats[j] * v);
          prune_to(geo.prefix[j]);
        }
        for (Index c = 0; c < ncols; ++c) {
          const auto t = static_cast<std::size_t>(c / k);
          const Index row = base_index[t] * k + c % k;
          for (SpMat::InnerIterator it(v, c); it; ++it) dense[static_cast<std::size_t>(it.row())] = it.value();
          Complex acc = 0.0;
          for (SpMatRow::InnerIterator it(first, row); it; ++it) acc += it.value() * dense[static_cast<std::size_t>(it.col())];
          for (SpMat::InnerIterator it(v, c); it; ++it) dense[static_cast<std::size_t>(it.row())] = Complex(0.0);
          out[s0 + t] += acc;
        }
      }
    } catch (...) {
      std::lock_guard<std::mutex> lock(failure_mu);
      if (!failure) failure = std::current_exception();
    }
  };

  const int nthreads = std::max(1, std::min<int>(opt.threads, static_cast<int>(nbatches)));
  if (nthreads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < nthreads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

TraceReport reduce(const std::vector<Complex>& per_site, const Budget& b) {
  TraceReport r;
  Kahan acc;
  for (const auto& v : per_site) acc.add(v);
  r.value = acc.value();
  r.error_bound = b.support.error_bound;
  r.region_radius = b.support.bounding_radius;
  r.sites_visited = b.sites.size();
  r.approximate = b.geo.decay;
  return r;
}

std::vector<TraceReport> trace_many(const std::vector<std::vector<KernelOperator>>& chains, const TraceOptions& opt,
                                    const std::optional<Region>& restrict_to) {
  std::vector<Budget> budgets;
  budgets.reserve(chains.size());
  Box shared;
  for (const auto& c : chains) {
    budgets.push_back(budget_for(c, opt, restrict_to));
    if (!budgets.back().sites.empty())
      shared = shared.lo.dim == 0 ? budgets.back().box : hull(shared, budgets.back().box);
  }
  std::vector<TraceReport> out;
  out.reserve(chains.size());
  for (std::size_t i = 0; i < chains.size(); ++i)
    out.push_back(reduce(site_traces(chains[i], budgets[i].sites, shared, budgets[i].geo, opt), budgets[i]));
  return out;
}

}  // namespace

SupportBudget support_of_product(const std::vector<KernelOperator>& factors, const TraceOptions& opt,
                                 const std::optional<Region>& restrict_to) {
  return budget_for(factors, opt, restrict_to).support;
}

TraceReport trace(const std::vector<KernelOperator>& chain, const TraceOptions& opt) {
  return trace_many({chain}, opt, std::nullopt).front();
}

std::vector<TraceReport> trace_each(const std::vector<std::vector<KernelOperator>>& chains, const TraceOptions& opt,
                                    const std::optional<Region>& restrict_to) {
  return trace_many(chains, opt, restrict_to);
}

TraceReport trace_sum(const std::vector<Complex>& coef, const std::vector<std::vector<KernelOperator>>& chains,
                      const Region& region, const TraceOptions& opt) {
  if (coef.size() != chains.size()) throw Error(ErrorCode::invalid_argument, "coefficient count mismatch");
  TraceReport total;
  if (chains.empty()) return total;
  const auto parts = trace_many(chains, opt, region);
  Kahan acc;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    acc.add(coef[i] * parts[i].value);
    total.error_bound += std::abs(coef[i]) * parts[i].error_bound;
    total.region_radius = std::max(total.region_radius, parts[i].region_radius);
    total.sites_visited += parts[i].sites_visited;
    total.approximate = total.approximate || parts[i].approximate;
  }
  total.value = acc.value();
  return total;
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

namespace {

ValidationReport max_entry(const KernelOperator& residual, const Box& box, double tol, const std::string& what,
                           bool throw_on_failure) {
  ValidationReport r;
  const auto m = residual.assemble(box);
  const int k = residual.k();
  Index wr = -1, wc = -1;
  for (Index c = 0; c < m->outerSize(); ++c) {
    for (SpMat::InnerIterator it(*m, c); it; ++it) {
      ++r.entries_checked;
      if (std::abs(it.value()) > r.max_residual) {
        r.max_residual = std::abs(it.value());
        wr = it.row();
        wc = it.col();
      }
    }
  }
  if (wr >= 0) {
    r.witness = what + " at (" + to_string(box.site(static_cast<std::size_t>(wr / k))) + "#" + std::to_string(wr % k) +
                ", " + to_string(box.site(static_cast<std::size_t>(wc / k))) + "#" + std::to_string(wc % k) + ")";
  }
  r.ok = r.max_residual <= tol;
  if (!r.ok && throw_on_failure) {
    throw Error(ErrorCode::validation_failed,
                what + " residual " + std::to_string(r.max_residual) + " exceeds " + std::to_string(tol) + " " + r.witness);
  }
  return r;
}

}  // namespace

ValidationReport verify_idempotent(const UnitizedOperator& p, double tol, std::int64_t sample_radius,
                                   bool throw_on_failure) {
  const double sres = (p.scalar * p.scalar - p.scalar).cwiseAbs().maxCoeff();
  if (sres > 1e-14) {
    ValidationReport r{false, sres, "scalar part is not idempotent", 0};
    if (throw_on_failure) throw Error(ErrorCode::validation_failed, r.witness);
    return r;
  }
  const KernelOperator full = p.full();
  const KernelOperator res = sub(compose(full, full), full);
  return max_entry(res, Box::centered(p.space().dim(), sample_radius), tol, "P^2 - P", throw_on_failure);
}

ValidationReport verify_invertible(const Invertible& u, double tol, std::int64_t sample_radius,
                                   bool throw_on_failure) {
  const Block id = Block::Identity(u.u.k(), u.u.k());
  if (!u.u.scalar.isApprox(id, 0.0) || !u.inv.scalar.isApprox(id, 0.0)) {
    if ((u.u.scalar - id).cwiseAbs().maxCoeff() > 0.0 || (u.inv.scalar - id).cwiseAbs().maxCoeff() > 0.0) {
      ValidationReport r{false, 0.0, "scalar part of an invertible must be the identity", 0};
      if (throw_on_failure) throw Error(ErrorCode::validation_failed, r.witness);
      return r;
    }
  }
  const Box box = Box::centered(u.u.space().dim(), sample_radius);
  // (1 + a)(1 + b) - 1 = a + b + ab
  const KernelOperator a = u.u.part;
  const KernelOperator b = u.inv.part;
  auto r1 = max_entry(add(add(a, b), compose(a, b)), box, tol, "U U^-1 - 1", throw_on_failure);
  auto r2 = max_entry(add(add(a, b), compose(b, a)), box, tol, "U^-1 U - 1", throw_on_failure);
  if (r2.max_residual > r1.max_residual) std::swap(r1, r2);
  r1.entries_checked += r2.entries_checked;
  r1.ok = r1.ok && r2.ok;
  return r1;
}

}  // namespace qtrace
