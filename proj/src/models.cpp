#include "qtrace/models.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <mutex>
#include <numeric>
#include <numbers>
#include <random>
#include <thread>

#include <Eigen/Eigenvalues>
#include <Eigen/QR>

namespace qtrace {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

}  // namespace

// ---------------------------------------------------------------------------
// Shift polynomials
// ---------------------------------------------------------------------------

ShiftPolynomial ShiftPolynomial::constant(const Block& b) { return monomial(0, b); }

ShiftPolynomial ShiftPolynomial::monomial(std::int64_t s, const Block& b) {
  ShiftPolynomial p;
  p.k = static_cast<int>(b.rows());
  p.terms[s] = b;
  return p;
}

ShiftPolynomial ShiftPolynomial::operator*(const ShiftPolynomial& o) const {
  if (k != o.k) throw Error(ErrorCode::dimension_mismatch, "shift polynomial block sizes");
  ShiftPolynomial out;
  out.k = k;
  for (const auto& [a, ba] : terms) {
    for (const auto& [b, bb] : o.terms) {
      auto it = out.terms.find(a + b);
      if (it == out.terms.end()) out.terms.emplace(a + b, ba * bb);
      else it->second += ba * bb;
    }
  }
  for (auto it = out.terms.begin(); it != out.terms.end();) {
    if (it->second.cwiseAbs().maxCoeff() < 1e-15) it = out.terms.erase(it);
    else ++it;
  }
  return out;
}

ShiftPolynomial ShiftPolynomial::adjoint() const {
  ShiftPolynomial out;
  out.k = k;
  for (const auto& [s, b] : terms) out.terms[-s] = b.adjoint();
  return out;
}

std::int64_t ShiftPolynomial::radius() const {
  std::int64_t r = 0;
  for (const auto& [s, b] : terms) r = std::max(r, std::abs(s));
  return r;
}

KernelOperator ShiftPolynomial::to_operator(const LatticeSpace& space, int axis) const {
  const int kk = k;
  const int d = space.dim();
  auto table = terms;
  return KernelOperator::from_kernel(
      space, kk, Propagation::exact(radius()),
      [table, kk, d, axis](const Site& x, const Site& y, Complex* out) {
        for (int i = 0; i < d; ++i)
          if (i != axis && x[i] != y[i]) return;
        auto it = table.find(x[axis] - y[axis]);
        if (it == table.end()) return;
        for (int a = 0; a < kk; ++a)
          for (int b = 0; b < kk; ++b) out[a * kk + b] = it->second(a, b);
      },
      std::nullopt, "poly");
}

Invertible unitary_from_polynomial(const LatticeSpace& space, const ShiftPolynomial& u, int axis) {
  const Block id = Block::Identity(u.k, u.k);
  auto minus_one = [&](ShiftPolynomial p) {
    auto it = p.terms.find(0);
    if (it == p.terms.end()) p.terms.emplace(0, -id);
    else it->second -= id;
    if (p.terms.count(0) && p.terms.at(0).cwiseAbs().maxCoeff() == 0.0) p.terms.erase(0);
    return p;
  };
  const auto a = minus_one(u);
  const auto b = minus_one(u.adjoint());
  auto part = [&](const ShiftPolynomial& p) {
    return p.terms.empty() ? KernelOperator::zero(space, u.k) : p.to_operator(space, axis);
  };
  return Invertible{UnitizedOperator{id, part(a)}, UnitizedOperator{id, part(b)}};
}

Invertible shift_unitary(std::int64_t p, int k, int dim, int axis) {
  if (axis < 0 || axis >= dim) throw Error(ErrorCode::invalid_argument, "shift axis");
  return unitary_from_polynomial(LatticeSpace(dim), ShiftPolynomial::monomial(p, Block::Identity(k, k)), axis);
}

Block coin(double theta) {
  Block c(2, 2);
  c << std::cos(theta), -std::sin(theta), std::sin(theta), std::cos(theta);
  return c;
}

ShiftPolynomial split_step_polynomial(double theta1, double theta2) {
  Block up0 = Block::Zero(2, 2), up1 = Block::Zero(2, 2);
  up0(0, 0) = 1.0;
  up1(1, 1) = 1.0;
  ShiftPolynomial s_up = ShiftPolynomial::monomial(1, up0);
  s_up.terms[0] = up1;
  ShiftPolynomial s_down = ShiftPolynomial::monomial(-1, up1);
  s_down.terms[0] = up0;
  return s_down * ShiftPolynomial::constant(coin(theta2)) * s_up * ShiftPolynomial::constant(coin(theta1));
}

Invertible split_step_walk(double theta1, double theta2) {
  return unitary_from_polynomial(LatticeSpace(1), split_step_polynomial(theta1, theta2));
}

KernelOperator direct_sum(const KernelOperator& a, const KernelOperator& b) {
  if (!(a.space() == b.space())) throw Error(ErrorCode::dimension_mismatch, "direct sum spaces");
  const int ka = a.k(), kb = b.k(), k = ka + kb;
  std::optional<Region> supp;
  if (a.support() && b.support()) supp = unite({*a.support(), *b.support()});
  return KernelOperator::from_kernel(
      a.space(), k, combine_sum(a.propagation(), b.propagation()),
      [a, b, ka, kb, k](const Site& x, const Site& y, Complex* out) {
        const Block ba = a.block(x, y);
        const Block bb = b.block(x, y);
        for (int i = 0; i < ka; ++i)
          for (int j = 0; j < ka; ++j) out[i * k + j] = ba(i, j);
        for (int i = 0; i < kb; ++i)
          for (int j = 0; j < kb; ++j) out[(ka + i) * k + ka + j] = bb(i, j);
      },
      supp, a.label() + "+" + b.label());
}

UnitizedOperator direct_sum(const UnitizedOperator& a, const UnitizedOperator& b) {
  const int ka = a.k(), kb = b.k();
  Block s = Block::Zero(ka + kb, ka + kb);
  s.topLeftCorner(ka, ka) = a.scalar;
  s.bottomRightCorner(kb, kb) = b.scalar;
  return UnitizedOperator{s, direct_sum(a.part, b.part)};
}

Invertible direct_sum(const Invertible& a, const Invertible& b) {
  return Invertible{direct_sum(a.u, b.u), direct_sum(a.inv, b.inv)};
}

// ---------------------------------------------------------------------------
// Magnetic projection
// ---------------------------------------------------------------------------

HofstadterSpec HofstadterSpec::parse_flux(const std::string& flux) {
  HofstadterSpec s;
  const auto slash = flux.find('/');
  try {
    if (slash == std::string::npos) throw std::invalid_argument("no slash");
    s.p = std::stoll(flux.substr(0, slash));
    s.q = std::stoll(flux.substr(slash + 1));
  } catch (const std::exception&) {
    throw Error(ErrorCode::schema, "flux must read p/q, got '" + flux + "'");
  }
  return s;
}

Block hofstadter_bloch(std::int64_t p, std::int64_t q, double kx, double ky) {
  const auto n = static_cast<Eigen::Index>(q);
  const double phi = static_cast<double>(p) / static_cast<double>(q);
  Block h = Block::Zero(n, n);
  for (Eigen::Index m = 0; m < n; ++m) h(m, m) = 2.0 * std::cos(ky - kTwoPi * phi * static_cast<double>(m));
  for (Eigen::Index m = 1; m < n; ++m) {
    h(m, m - 1) += 1.0;
    h(m - 1, m) += 1.0;
  }
  h(0, n - 1) += std::polar(1.0, -kx);
  h(n - 1, 0) += std::polar(1.0, kx);
  return h;
}

namespace {

void check_spec(std::int64_t p, std::int64_t q, int bands, int kgrid, bool allow_all = false) {
  if (q < 2 || p <= 0 || p >= q || std::gcd(p, q) != 1)
    throw Error(ErrorCode::invalid_argument, "flux must be p/q with 0 < p < q coprime");
  if (bands < 1 || bands > q || (bands == q && !allow_all))
    throw Error(ErrorCode::invalid_argument, "gap index must lie in [1, q)");
  if (kgrid < 4) throw Error(ErrorCode::invalid_argument, "k grid too coarse");
}

struct BlochGrid {
  int n = 0;
  std::vector<Block> occupied;  // q x bands eigenvectors per k point, index i * n + j
  double gap = 0.0;
};

BlochGrid bloch_grid(std::int64_t p, std::int64_t q, int bands, int n, int threads) {
  BlochGrid g;
  g.n = n;
  g.occupied.resize(static_cast<std::size_t>(n) * n);
  std::vector<double> below(static_cast<std::size_t>(n) * n), above(static_cast<std::size_t>(n) * n);
  std::atomic<int> next{0};
  auto work = [&] {
    for (int i; (i = next.fetch_add(1)) < n;) {
      for (int j = 0; j < n; ++j) {
        const double kx = kTwoPi * i / n, ky = kTwoPi * j / n;
        Eigen::SelfAdjointEigenSolver<Block> es(hofstadter_bloch(p, q, kx, ky));
        const auto idx = static_cast<std::size_t>(i) * n + j;
        g.occupied[idx] = es.eigenvectors().leftCols(bands);
        below[idx] = es.eigenvalues()(bands - 1);
        above[idx] = bands < q ? es.eigenvalues()(bands) : std::numeric_limits<double>::infinity();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int t = 1; t < std::max(1, threads); ++t) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  g.gap = *std::min_element(above.begin(), above.end()) - *std::max_element(below.begin(), below.end());
  if (g.gap <= 1e-6)
    throw Error(ErrorCode::gap_closed, "no spectral gap above band " + std::to_string(bands) + " (gap " +
                                           std::to_string(g.gap) + ")");
  return g;
}

}  // namespace

nlohmann::json HofstadterModel::report() const {
  return nlohmann::json{{"flux", std::to_string(spec.p) + "/" + std::to_string(spec.q)},
                        {"gap", spec.gap},
                        {"truncation_radius", spec.truncation},
                        {"kgrid", spec.kgrid},
                        {"spectral_gap", spectral_gap},
                        {"kappa", kappa},
                        {"C", C},
                        {"fit_r2", fit_r2},
                        {"tail", tail},
                        {"kgrid_error", kgrid_error}};
}

HofstadterModel hofstadter_projection(const HofstadterSpec& spec) {
  check_spec(spec.p, spec.q, spec.gap, spec.kgrid);
  if (spec.truncation < 1) throw Error(ErrorCode::invalid_argument, "truncation radius must be positive");
  const std::int64_t q = spec.q;
  const std::int64_t rt = spec.truncation;
  const int n = spec.kgrid;
  if (2 * rt >= static_cast<std::int64_t>(n))
    throw Error(ErrorCode::invalid_argument, "k grid aliases the truncated kernel; need kgrid > 2 R_t");
  const auto grid = bloch_grid(spec.p, q, spec.gap, n, spec.threads);

  // T[m][m'](dX, dy) = mean_k e^{i (kx dX + ky dy)} P_k(m, m'), tabulated up to the
  // aliasing radius so the removed tail can be measured
  const std::int64_t ext = std::max<std::int64_t>(rt, n / 2 - 1);
  const std::int64_t xmax = ext / q + 2;
  const std::int64_t nx = 2 * xmax + 1, ny = 2 * ext + 1;
  const auto qq = static_cast<Eigen::Index>(q);
  std::vector<Block> partial(static_cast<std::size_t>(n * ny), Block::Zero(qq, qq));
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const Block& v = grid.occupied[static_cast<std::size_t>(i) * n + j];
      const Block pk = v * v.adjoint();
      for (std::int64_t dy = -ext; dy <= ext; ++dy) {
        const Complex ph = std::polar(1.0, kTwoPi * j * static_cast<double>(dy) / n);
        partial[static_cast<std::size_t>(i * ny + (dy + ext))] += ph * pk;
      }
    }
  }
  auto table = std::make_shared<std::vector<Block>>(static_cast<std::size_t>(nx * ny), Block::Zero(qq, qq));
  const double norm = 1.0 / (static_cast<double>(n) * n);
  for (std::int64_t dx = -xmax; dx <= xmax; ++dx) {
    for (int i = 0; i < n; ++i) {
      const Complex ph = std::polar(norm, kTwoPi * i * static_cast<double>(dx) / n);
      for (std::int64_t dy = 0; dy < ny; ++dy)
        (*table)[static_cast<std::size_t>((dx + xmax) * ny + dy)] += ph * partial[static_cast<std::size_t>(i * ny + dy)];
    }
  }

  auto raw = [table, q, xmax, ny, ext](const Site& x, const Site& y) -> Complex {
    if (std::max(std::abs(x[0] - y[0]), std::abs(x[1] - y[1])) > ext) return 0.0;
    const std::int64_t cx = floor_div(x[0], q), cy = floor_div(y[0], q);
    const auto m = static_cast<Eigen::Index>(x[0] - q * cx), mp = static_cast<Eigen::Index>(y[0] - q * cy);
    const std::int64_t dx = cx - cy, dy = x[1] - y[1];
    return (*table)[static_cast<std::size_t>((dx + xmax) * ny + (dy + ext))](m, mp);
  };
  auto entry = [raw, rt](const Site& x, const Site& y) -> Complex {
    if (std::max(std::abs(x[0] - y[0]), std::abs(x[1] - y[1])) > rt) return 0.0;
    return raw(x, y);
  };

  HofstadterModel out;
  out.spec = spec;
  out.spectral_gap = grid.gap;
  std::vector<double> shells(static_cast<std::size_t>(ext + 1), 0.0);
  double measured = 0.0;  // removed row mass between R_t and the aliasing radius
  for (std::int64_t m = 0; m < q; ++m) {
    const Site y{m, 0};
    double row = 0.0;
    for_each_site(Box::around(y, ext), [&](const Site& x) {
      const auto d = std::max(std::abs(x[0] - y[0]), std::abs(x[1] - y[1]));
      const double v = std::abs(raw(x, y));
      shells[static_cast<std::size_t>(d)] = std::max(shells[static_cast<std::size_t>(d)], v);
      if (d > rt) row += v;
    });
    measured = std::max(measured, row);
  }
  out.shell_max.assign(shells.begin(), shells.begin() + rt + 1);
  // least squares on log shell maxima over 1..ext
  double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
  int cnt = 0;
  for (std::int64_t d = 1; d <= ext; ++d) {
    const double mval = shells[static_cast<std::size_t>(d)];
    if (mval <= 1e-300) continue;
    const double xv = static_cast<double>(d), yv = std::log(mval);
    sx += xv;
    sy += yv;
    sxx += xv * xv;
    sxy += xv * yv;
    syy += yv * yv;
    ++cnt;
  }
  if (cnt < 3) throw Error(ErrorCode::tail_fit_failed, "too few nonzero kernel shells");
  const double slope = (cnt * sxy - sx * sy) / (cnt * sxx - sx * sx);
  const double vx = cnt * sxx - sx * sx, vy = cnt * syy - sy * sy;
  out.fit_r2 = vy > 0 ? std::pow(cnt * sxy - sx * sy, 2) / (vx * vy) : 1.0;
  out.kappa = -slope;
  if (!(out.kappa > 0.0))
    throw Error(ErrorCode::tail_fit_failed, "kernel does not decay (fitted rate " + std::to_string(out.kappa) + ")");
  if (out.fit_r2 < 0.5)
    throw Error(ErrorCode::tail_fit_failed, "exponential fit is poor (R^2 = " + std::to_string(out.fit_r2) + ")");
  for (std::int64_t d = 0; d <= ext; ++d)
    out.C = std::max(out.C, shells[static_cast<std::size_t>(d)] * std::exp(out.kappa * static_cast<double>(d)));
  // measured mass up to ext, envelope beyond
  out.tail = measured;
  for (std::int64_t d = ext + 1;; ++d) {
    const double term = 8.0 * static_cast<double>(d) * out.C * std::exp(-out.kappa * static_cast<double>(d));
    out.tail += term;
    if (term < 1e-18 * std::max(out.tail, 1e-300) || d > ext + 100000) break;
  }
  out.kgrid_error = out.C * std::exp(-out.kappa * static_cast<double>(n - rt));

  const LatticeSpace sp(2);
  auto kernel = KernelOperator::from_kernel(
      sp, 1, Propagation::decaying(out.C, out.kappa, rt, out.tail),
      [entry](const Site& x, const Site& y, Complex* o) { o[0] = entry(x, y); }, std::nullopt,
      "P_hof(" + std::to_string(spec.p) + "/" + std::to_string(q) + ")");
  out.p = UnitizedOperator::of_part(kernel);
  return out;
}

std::int64_t chern_oracle(std::int64_t p, std::int64_t q, int bands, int kgrid) {
  check_spec(p, q, bands, kgrid, true);
  const int n = kgrid;
  const auto grid = bloch_grid(p, q, bands, n, 1);
  auto at = [&](int i, int j) -> const Block& {
    return grid.occupied[static_cast<std::size_t>((i % n + n) % n) * n + static_cast<std::size_t>((j % n + n) % n)];
  };
  auto link = [&](int i, int j, int di, int dj) {
    const Complex det = (at(i, j).adjoint() * at(i + di, j + dj)).determinant();
    return det / std::abs(det);
  };
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      // plaquette loop (kx, ky) -> (kx + dk, ky) -> (kx + dk, ky + dk) -> (kx, ky + dk)
      const Complex w = link(i, j, 1, 0) * link(i + 1, j, 0, 1) * std::conj(link(i, j + 1, 1, 0)) *
                        std::conj(link(i, j, 0, 1));
      total += std::arg(w);
    }
  }
  const double c = total / kTwoPi;
  const auto ci = static_cast<std::int64_t>(std::llround(c));
  if (std::abs(c - static_cast<double>(ci)) > 1e-6)
    throw Error(ErrorCode::validation_failed, "lattice field strength sum is not an integer: " + std::to_string(c));
  return ci;
}

// ---------------------------------------------------------------------------
// Randomized fixtures
// ---------------------------------------------------------------------------

std::uint64_t mix_key(std::uint64_t seed, std::initializer_list<std::int64_t> salt) {
  auto splitmix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  std::uint64_t h = splitmix(seed);
  for (auto s : salt) h = splitmix(h ^ static_cast<std::uint64_t>(s));
  return h;
}

namespace {

Block gaussian(std::mt19937_64& rng, Eigen::Index n) {
  std::normal_distribution<double> g(0.0, 1.0);
  Block m(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) m(i, j) = Complex(g(rng), g(rng));
  return m;
}

Block random_unitary(std::mt19937_64& rng, Eigen::Index n) {
  Eigen::HouseholderQR<Block> qr(gaussian(rng, n));
  Block qm = qr.householderQ() * Block::Identity(n, n);
  const Block r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < n; ++j) {
    const Complex d = r(j, j);
    if (std::abs(d) > 0) qm.col(j) *= d / std::abs(d);
  }
  return qm;
}

/// Operator that is block diagonal over cubic tiles of width w shifted by `offset`,
/// with per-tile matrices from `make(tile coords)` (cached).
class TiledKernel {
 public:
  using Maker = std::function<Block(const Site& tile)>;

  TiledKernel(int dim, int k, std::int64_t w, std::int64_t offset, Maker make)
      : dim_(dim), k_(k), w_(w), offset_(offset), make_(std::move(make)) {}

  Site tile_of(const Site& x) const {
    Site t = x;
    for (int i = 0; i < dim_; ++i) t[i] = floor_div(x[i] - offset_, w_);
    return t;
  }

  std::size_t local(const Site& x, const Site& tile) const {
    std::size_t idx = 0;
    for (int i = 0; i < dim_; ++i) idx = idx * static_cast<std::size_t>(w_) + static_cast<std::size_t>(x[i] - offset_ - tile[i] * w_);
    return idx;
  }

  std::shared_ptr<const Block> matrix(const Site& tile) const {
    {
      std::lock_guard<std::mutex> lock(mu_);
      auto it = cache_.find(tile);
      if (it != cache_.end()) return it->second;
    }
    auto m = std::make_shared<const Block>(make_(tile));
    std::lock_guard<std::mutex> lock(mu_);
    return cache_.emplace(tile, m).first->second;
  }

  void block(const Site& x, const Site& y, Complex* out) const {
    const Site tx = tile_of(x);
    if (!(tx == tile_of(y))) return;
    const auto m = matrix(tx);
    const auto ix = static_cast<Eigen::Index>(local(x, tx)) * k_, iy = static_cast<Eigen::Index>(local(y, tx)) * k_;
    for (int a = 0; a < k_; ++a)
      for (int b = 0; b < k_; ++b) out[a * k_ + b] = (*m)(ix + a, iy + b);
  }

 private:
  int dim_, k_;
  std::int64_t w_, offset_;
  Maker make_;
  mutable std::mutex mu_;
  mutable std::map<Site, std::shared_ptr<const Block>> cache_;
};

KernelOperator tiled_operator(const LatticeSpace& sp, int k, std::int64_t w, std::shared_ptr<TiledKernel> t,
                              std::string label) {
  return KernelOperator::from_kernel(
      sp, k, Propagation::exact(w - 1),
      [t](const Site& x, const Site& y, Complex* out) { t->block(x, y, out); }, std::nullopt, std::move(label));
}

// tiles of width r + 1 give propagation exactly r
std::int64_t tile_width(std::int64_t r) { return r + 1; }

KernelOperator tile_idempotent(const LatticeSpace& sp, std::uint64_t seed, std::int64_t r, int k) {
  const std::int64_t w = tile_width(r);
  const int d = sp.dim();
  Eigen::Index n = k;
  for (int i = 0; i < d; ++i) n *= w;
  auto t = std::make_shared<TiledKernel>(d, k, w, 0, [seed, n, d](const Site& tile) {
    std::mt19937_64 rng(mix_key(seed, {1, tile[0], d > 1 ? tile[1] : 0, d > 2 ? tile[2] : 0, d > 3 ? tile[3] : 0}));
    std::uniform_int_distribution<Eigen::Index> rank(0, n);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    const Eigen::Index rk = rank(rng);
    const Block q1 = random_unitary(rng, n), q2 = random_unitary(rng, n);
    Eigen::VectorXcd s(n), si(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double e = std::exp(u(rng));
      s(i) = e;
      si(i) = 1.0 / e;
    }
    // S = q1 diag(s) q2 with condition number below e
    const Block sm = q1 * s.asDiagonal() * q2;
    const Block sinv = q2.adjoint() * si.asDiagonal() * q1.adjoint();
    Eigen::VectorXcd proj = Eigen::VectorXcd::Zero(n);
    proj.head(rk).setOnes();
    return Block(sm * proj.asDiagonal() * sinv);
  });
  return tiled_operator(sp, k, w, t, "E");
}

struct Layers {
  KernelOperator forward;
  KernelOperator backward;
};

Layers brickwork(const LatticeSpace& sp, std::uint64_t seed, std::int64_t r, int k) {
  const std::int64_t w = tile_width(r);
  const int d = sp.dim();
  std::vector<KernelOperator> layers;
  for (int layer = 0; layer < 2; ++layer) {
    const std::int64_t offset = layer == 0 ? 0 : w / 2;
    std::int64_t n = k;
    for (int i = 0; i < d; ++i) n *= w;
    auto t = std::make_shared<TiledKernel>(d, k, w, offset, [seed, layer, n, d](const Site& tile) {
      std::mt19937_64 rng(
          mix_key(seed, {2 + layer, tile[0], d > 1 ? tile[1] : 0, d > 2 ? tile[2] : 0, d > 3 ? tile[3] : 0}));
      return random_unitary(rng, static_cast<Eigen::Index>(n));
    });
    layers.push_back(tiled_operator(sp, k, w, t, "L" + std::to_string(layer)));
  }
  return Layers{compose(layers[1], layers[0]), compose(adjoint(layers[0]), adjoint(layers[1]))};
}

}  // namespace

UnitizedOperator random_local_idempotent(std::uint64_t seed, std::int64_t r, int k, int dim) {
  if (r < 0 || k < 1) throw Error(ErrorCode::invalid_argument, "random idempotent parameters");
  return UnitizedOperator::of_part(tile_idempotent(LatticeSpace(dim), seed, r, k));
}

UnitizedOperator random_unitized_idempotent(std::uint64_t seed, std::int64_t r, int k, int dim) {
  if (k < 2) throw Error(ErrorCode::invalid_argument, "unitized random idempotent needs k >= 2");
  const LatticeSpace sp(dim);
  std::mt19937_64 rng(mix_key(seed, {7}));
  const int rank = std::uniform_int_distribution<int>(1, k - 1)(rng);
  Block p0 = Block::Zero(k, k);
  for (int a = 0; a < rank; ++a) p0(a, a) = 1.0;
  const int rest = k - rank;
  const auto e = tile_idempotent(sp, mix_key(seed, {8}), r, rest);
  // embed E on the components rank..k-1
  const auto embedded = KernelOperator::from_kernel(
      sp, k, e.propagation(),
      [e, rank, rest, k](const Site& x, const Site& y, Complex* out) {
        const Block b = e.block(x, y);
        for (int a = 0; a < rest; ++a)
          for (int c = 0; c < rest; ++c) out[(rank + a) * k + rank + c] = b(a, c);
      },
      std::nullopt, "E'");
  const UnitizedOperator base{p0, embedded};
  const Invertible v = random_local_invertible(mix_key(seed, {9}), r, k, dim, 0);
  return conjugate(v, base);
}

Invertible random_local_invertible(std::uint64_t seed, std::int64_t r, int k, int dim, std::int64_t shift) {
  if (r < 0 || k < 1) throw Error(ErrorCode::invalid_argument, "random invertible parameters");
  const LatticeSpace sp(dim);
  const Block id = Block::Identity(k, k);
  auto layers = brickwork(sp, seed, r, k);
  KernelOperator f = layers.forward, b = layers.backward;
  if (shift != 0) {
    Site s = Site::origin(dim), ms = Site::origin(dim);
    s[0] = shift;
    ms[0] = -shift;
    f = compose(f, KernelOperator::translation(sp, s, id));
    b = compose(KernelOperator::translation(sp, ms, id), b);
  }
  const auto one = KernelOperator::identity(sp, k);
  return Invertible{UnitizedOperator{id, sub(f, one)}, UnitizedOperator{id, sub(b, one)}};
}

Partition random_sector_partition(std::uint64_t seed, int parts, double min_angle) {
  if (parts < 2 || parts * min_angle >= kTwoPi) throw Error(ErrorCode::invalid_argument, "sector spacing");
  std::mt19937_64 rng(mix_key(seed, {11}));
  std::uniform_real_distribution<double> c(-0.5, 0.5), a(0.0, kTwoPi);
  const std::array<double, 2> center{c(rng), c(rng)};
  std::vector<double> rays(static_cast<std::size_t>(parts));
  while (true) {
    for (auto& x : rays) x = a(rng);
    std::sort(rays.begin(), rays.end());
    bool ok = rays.front() + kTwoPi - rays.back() >= min_angle;
    for (std::size_t i = 1; i < rays.size(); ++i) ok = ok && rays[i] - rays[i - 1] >= min_angle;
    if (ok) break;
  }
  return sector_partition(center, rays);
}

Partition deform_partition(const Partition& a, const std::vector<Site>& sites, int target, std::int64_t window,
                           std::int64_t margin) {
  if (target < 0 || target >= static_cast<int>(a.parts.size()))
    throw Error(ErrorCode::invalid_argument, "target part out of range");
  if (sites.empty()) return a;
  for (const auto& s : sites) {
    if (s.dim != a.dim()) throw Error(ErrorCode::dimension_mismatch, "deformation site dimension");
    if (s.sup_norm() > window - margin)
      throw Error(ErrorCode::window_too_small, "deformed site " + to_string(s) + " lies outside the certified window");
  }
  const Region moved = Region::finite_set(sites);
  Partition out;
  for (std::size_t i = 0; i < a.parts.size(); ++i) {
    out.parts.push_back(static_cast<int>(i) == target ? unite({a.parts[i], moved})
                                                      : intersect({a.parts[i], complement(moved)}));
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON model documents
// ---------------------------------------------------------------------------

namespace {

template <class T>
T field(const nlohmann::json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::schema, std::string("field '") + key + "': " + e.what());
  }
}

}  // namespace

ModelInstance model_from_json(const nlohmann::json& j, std::uint64_t seed, int threads) {
  if (!j.is_object() || !j.contains("model")) throw Error(ErrorCode::schema, "model document needs a 'model' field");
  ModelInstance m;
  m.name = field<std::string>(j, "model", "");
  m.resolved = j;
  if (m.name == "shift") {
    const auto p = field<std::int64_t>(j, "power", 1);
    const int k = field<int>(j, "k", 1);
    m.resolved["power"] = p;
    m.resolved["k"] = k;
    m.invertible = true;
    m.unitary = shift_unitary(p, k);
  } else if (m.name == "identity") {
    const int k = field<int>(j, "k", 1);
    const int dim = field<int>(j, "dim", 1);
    m.resolved["k"] = k;
    m.resolved["dim"] = dim;
    m.invertible = true;
    m.unitary = shift_unitary(0, k, dim);
  } else if (m.name == "split_step") {
    const double t1 = field<double>(j, "theta1", 0.0), t2 = field<double>(j, "theta2", 0.0);
    m.resolved["theta1"] = t1;
    m.resolved["theta2"] = t2;
    m.invertible = true;
    m.unitary = split_step_walk(t1, t2);
  } else if (m.name == "shift_sum") {
    const auto p = field<std::int64_t>(j, "p", 1), q = field<std::int64_t>(j, "q", 1);
    m.resolved["p"] = p;
    m.resolved["q"] = q;
    m.invertible = true;
    m.unitary = direct_sum(shift_unitary(p), shift_unitary(-q));
  } else if (m.name == "hofstadter") {
    auto spec = HofstadterSpec::parse_flux(field<std::string>(j, "flux", "1/3"));
    spec.gap = field<int>(j, "gap", 1);
    spec.truncation = field<std::int64_t>(j, "truncation_radius", 14);
    spec.kgrid = field<int>(j, "kgrid", 48);
    spec.threads = threads;
    m.resolved["flux"] = std::to_string(spec.p) + "/" + std::to_string(spec.q);
    m.resolved["gap"] = spec.gap;
    m.resolved["truncation_radius"] = spec.truncation;
    m.resolved["kgrid"] = spec.kgrid;
    const auto h = hofstadter_projection(spec);
    m.idempotent = h.p;
    m.details = h.report();
    m.details["chern_oracle"] = chern_oracle(spec.p, spec.q, spec.gap, spec.kgrid);
  } else if (m.name == "random_idempotent" || m.name == "random_unitized_idempotent" ||
             m.name == "random_invertible") {
    const auto s = field<std::uint64_t>(j, "seed", seed);
    const auto r = field<std::int64_t>(j, "radius", 2);
    const int k = field<int>(j, "k", m.name == "random_unitized_idempotent" ? 2 : 1);
    const int dim = field<int>(j, "dim", 1);
    m.resolved["seed"] = s;
    m.resolved["radius"] = r;
    m.resolved["k"] = k;
    m.resolved["dim"] = dim;
    if (m.name == "random_idempotent") {
      m.idempotent = random_local_idempotent(s, r, k, dim);
    } else if (m.name == "random_unitized_idempotent") {
      m.idempotent = random_unitized_idempotent(s, r, k, dim);
    } else {
      const auto sh = field<std::int64_t>(j, "shift", 0);
      m.resolved["shift"] = sh;
      m.invertible = true;
      m.unitary = random_local_invertible(s, r, k, dim, sh);
    }
  } else {
    throw Error(ErrorCode::schema, "unknown model '" + m.name + "'");
  }
  return m;
}

}  // namespace qtrace
