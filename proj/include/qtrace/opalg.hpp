#pragma once

#include <complex>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "qtrace/space.hpp"

namespace qtrace {

using Complex = std::complex<double>;
using Block = Eigen::MatrixXcd;
/// Flattened block kernel over a box: row/column index = box.index(site) * k + component.
using SpMat = Eigen::SparseMatrix<Complex, Eigen::ColMajor, std::int64_t>;
using SpMatRow = Eigen::SparseMatrix<Complex, Eigen::RowMajor, std::int64_t>;

/// Propagation bound. For decaying kernels `radius` is the truncation radius beyond which
/// the kernel is set to zero, C and kappa describe the envelope |K(x,y)| <= C e^{-kappa d},
/// and `tail` estimates the l1 row mass removed by the truncation.
struct Propagation {
  std::int64_t radius = 0;
  bool decay = false;
  double C = 0.0;
  double kappa = 0.0;
  double tail = 0.0;

  static Propagation exact(std::int64_t r) { return Propagation{r, false, 0.0, 0.0, 0.0}; }
  static Propagation decaying(double C, double kappa, std::int64_t truncation, double tail) {
    return Propagation{truncation, true, C, kappa, tail};
  }
};

Propagation combine_product(const Propagation& a, const Propagation& b, int dim);
Propagation combine_sum(const Propagation& a, const Propagation& b);

/// Bounded per-site scalar function with certified support of f and of 1 - f.
struct SiteFunction {
  int dim = 1;
  std::function<Complex(const Site&)> value;
  Region support;    ///< supp(f)
  Region cosupport;  ///< supp(1 - f)
  bool indicator = false;
  std::string label;

  Complex operator()(const Site& s) const { return value(s); }

  static SiteFunction of_region(const Region& y, std::string label = {});
  static SiteFunction one(int d);
  /// clamp((x[axis] - a + 1) / (b - a + 1), 0, 1); support {x[axis] >= a}, cosupport {x[axis] < b}.
  static SiteFunction ramp(int d, int axis, std::int64_t a, std::int64_t b);
};

/// Writes the k x k block K(x, y) row-major into out.
using KernelFn = std::function<void(const Site& x, const Site& y, Complex* out)>;
/// Writes the k x k block K(x, x) row-major into out.
using DiagonalFn = std::function<void(const Site& x, Complex* out)>;

/// Lazily evaluated block kernel operator on l2(Z^d) (x) C^k. Immutable and shareable.
/// A declared support Y means K(x, y) != 0 only if both x and y lie in Y.
class KernelOperator {
 public:
  struct Node;

  KernelOperator() = default;

  static KernelOperator from_kernel(const LatticeSpace& space, int k, Propagation prop, KernelFn fn,
                                    std::optional<Region> support = std::nullopt,
                                    std::string label = "kernel");
  static KernelOperator diagonal(const LatticeSpace& space, int k, DiagonalFn fn,
                                 std::optional<Region> support = std::nullopt,
                                 std::string label = "diagonal");
  static KernelOperator zero(const LatticeSpace& space, int k);
  static KernelOperator identity(const LatticeSpace& space, int k);
  /// M (x) 1.
  static KernelOperator constant_block(const LatticeSpace& space, const Block& m);
  /// (T psi)(x) = M psi(x - shift).
  static KernelOperator translation(const LatticeSpace& space, const Site& shift, const Block& m);

  const LatticeSpace& space() const;
  int k() const;
  const Propagation& propagation() const;
  const std::optional<Region>& support() const;
  bool is_diagonal() const;
  bool is_zero() const;
  std::string label() const;

  Block block(const Site& x, const Site& y) const;
  /// Flattened kernel restricted to box x box (cached per box, bounded cache).
  std::shared_ptr<const SpMat> assemble(const Box& box) const;

  /// Same kernel with an additional (caller-guaranteed) support declaration.
  KernelOperator with_support(const Region& y) const;

  const Node& node() const { return *node_; }
  bool valid() const { return node_ != nullptr; }

  explicit KernelOperator(std::shared_ptr<const Node> n) : node_(std::move(n)) {}

 private:
  std::shared_ptr<const Node> node_;
};

KernelOperator mult_operator(const LatticeSpace& space, const SiteFunction& f, int k);
KernelOperator compose(const KernelOperator& a, const KernelOperator& b);
KernelOperator add(const KernelOperator& a, const KernelOperator& b);
KernelOperator sub(const KernelOperator& a, const KernelOperator& b);
KernelOperator scale(Complex c, const KernelOperator& a);
KernelOperator adjoint(const KernelOperator& a);
/// AB - BA; a diagonal argument is handled entrywise without forming products.
KernelOperator commutator(const KernelOperator& a, const KernelOperator& b);
/// [A, f] with support inferred from the support and cosupport of f.
KernelOperator commutator(const KernelOperator& a, const SiteFunction& f);
KernelOperator commutator(const SiteFunction& f, const KernelOperator& a);

/// scalar (x) 1 + part.
struct UnitizedOperator {
  Block scalar;
  KernelOperator part;

  static UnitizedOperator of_part(const KernelOperator& part);
  static UnitizedOperator unit(const LatticeSpace& space, int k);

  int k() const { return part.k(); }
  const LatticeSpace& space() const { return part.space(); }
  KernelOperator full() const;
  /// Part of (this - 1); requires nothing of the scalar.
  KernelOperator minus_one() const;
  bool approximate() const { return part.propagation().decay; }
};

UnitizedOperator operator*(const UnitizedOperator& a, const UnitizedOperator& b);

/// Invertible element with its inverse.
struct Invertible {
  UnitizedOperator u;
  UnitizedOperator inv;
};

Invertible conjugate(const Invertible& v, const Invertible& u);
UnitizedOperator conjugate(const Invertible& v, const UnitizedOperator& p);

struct SupportBudget {
  Region region;
  std::int64_t radius_used = 0;
  bool bounded = false;
  double error_bound = 0.0;
  std::int64_t bounding_radius = 0;
};

struct TraceOptions {
  std::int64_t window = 40;  ///< half-width of the certification window
  std::int64_t margin = 2;
  int threads = 1;
  std::size_t batch = 32;  ///< sites per column batch
  std::int64_t pad = 0;    ///< extra thickening of the trace region
};

struct TraceReport {
  Complex value{0.0, 0.0};
  double error_bound = 0.0;
  std::int64_t region_radius = 0;
  std::size_t sites_visited = 0;
  bool approximate = false;
};

nlohmann::json to_json(const TraceReport& r);

/// Region of base points x0 whose diagonal block of the product can be nonzero, bounded
/// through the declared supports; throws unbounded_support or window_too_small.
SupportBudget support_of_product(const std::vector<KernelOperator>& factors,
                                 const TraceOptions& opt = {},
                                 const std::optional<Region>& restrict_to = std::nullopt);

/// Tr(F_0 F_1 ... F_m) over the certified region.
TraceReport trace(const std::vector<KernelOperator>& chain, const TraceOptions& opt = {});

/// Traces of several chains assembled over one shared box, so common factors are built once.
std::vector<TraceReport> trace_each(const std::vector<std::vector<KernelOperator>>& chains,
                                    const TraceOptions& opt = {},
                                    const std::optional<Region>& restrict_to = std::nullopt);

/// Sum_j coef_j Tr(chain_j) where only the sum is known to be trace-class: every chain is
/// evaluated over `region` (intersected with its own support region when that is bounded).
TraceReport trace_sum(const std::vector<Complex>& coef,
                      const std::vector<std::vector<KernelOperator>>& chains, const Region& region,
                      const TraceOptions& opt = {});

struct ValidationReport {
  bool ok = true;
  double max_residual = 0.0;
  std::string witness;
  std::size_t entries_checked = 0;
};

/// Checks (P^2 - P)(x, y) on every pair of a sample box and scalar^2 = scalar.
ValidationReport verify_idempotent(const UnitizedOperator& p, double tol, std::int64_t sample_radius = 4,
                                   bool throw_on_failure = true);
/// Checks U U^-1 = U^-1 U = 1 entrywise on a sample box and identity scalar parts.
ValidationReport verify_invertible(const Invertible& u, double tol, std::int64_t sample_radius = 4,
                                   bool throw_on_failure = true);

}  // namespace qtrace
