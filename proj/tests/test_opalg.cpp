#include "doctest.h"

#include <cmath>
#include <random>

#include "qtrace/opalg.hpp"

using namespace qtrace;

namespace {

// Deterministic pseudo-random entries within a propagation ball.
KernelOperator random_kernel(const LatticeSpace& sp, int k, std::int64_t r, std::uint64_t salt) {
  return KernelOperator::from_kernel(sp, k, Propagation::exact(r), [k, salt](const Site& x, const Site& y, Complex* out) {
    for (int a = 0; a < k; ++a) {
      for (int b = 0; b < k; ++b) {
        std::uint64_t h = salt * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(a * 31 + b);
        for (int i = 0; i < x.dim; ++i) {
          h ^= static_cast<std::uint64_t>(x[i] + 1000) * 0xBF58476D1CE4E5B9ULL + (h << 6) + (h >> 2);
          h ^= static_cast<std::uint64_t>(y[i] + 5000) * 0x94D049BB133111EBULL + (h << 6) + (h >> 2);
        }
        std::mt19937_64 g(h);
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        out[a * k + b] = Complex(u(g), u(g));
      }
    }
  });
}

KernelOperator shift(const LatticeSpace& sp, std::int64_t p) {
  return KernelOperator::translation(sp, Site{p}, Block::Identity(1, 1));
}

}  // namespace

TEST_CASE("multiplication operators") {
  const LatticeSpace z(1);
  const auto x = mult_operator(z, SiteFunction::of_region(Region::halfspace(1, 0, 0)), 1);
  CHECK(x.block(Site{3}, Site{3})(0, 0) == Complex(1.0));
  CHECK(x.block(Site{-3}, Site{-3})(0, 0) == Complex(0.0));
  CHECK(x.block(Site{1}, Site{2})(0, 0) == Complex(0.0));
  CHECK(x.propagation().radius == 0);

  const auto one = mult_operator(z, SiteFunction::one(1), 2);
  CHECK(one.block(Site{5}, Site{5}).isIdentity());

  const auto ramp = SiteFunction::ramp(1, 0, -5, 5);
  const auto r = mult_operator(z, ramp, 1);
  for (std::int64_t j = -8; j <= 8; ++j) {
    const double v = r.block(Site{j}, Site{j})(0, 0).real();
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    CHECK((v > 0.0) == (j >= -5));
    CHECK((v < 1.0) == (j < 5));
  }
  CHECK(r.support()->contains(Site{-5}));
  CHECK_FALSE(r.support()->contains(Site{-6}));
}

TEST_CASE("composition and propagation additivity") {
  const LatticeSpace z(1);
  const auto id = compose(shift(z, 1), shift(z, -1));
  for (std::int64_t i = -4; i <= 4; ++i)
    for (std::int64_t j = -4; j <= 4; ++j) CHECK(id.block(Site{i}, Site{j})(0, 0) == Complex(i == j ? 1.0 : 0.0));

  const LatticeSpace z2(2);
  const auto a = random_kernel(z2, 2, 1, 1);
  const auto b = random_kernel(z2, 2, 3, 2);
  const auto ab = compose(a, b);
  CHECK(ab.propagation().radius == 4);
  const Box w = Box::centered(2, 6);
  const auto m = ab.assemble(w);
  for (Eigen::Index c = 0; c < m->outerSize(); ++c) {
    for (SpMat::InnerIterator it(*m, c); it; ++it) {
      CHECK(z2.distance(w.site(static_cast<std::size_t>(it.row() / 2)), w.site(static_cast<std::size_t>(it.col() / 2))) <= 4);
    }
  }
  CHECK(ab.block(Site{0, 0}, Site{5, 0}).isZero());
  CHECK(ab.block(Site{0, 0}, Site{-2, 5}).isZero());
  // assembled product agrees with lazily evaluated blocks
  for (const Site& x : {Site{0, 0}, Site{2, -3}, Site{-6, 6}}) {
    for (const Site& y : {Site{1, 1}, Site{2, 0}, Site{-4, 4}}) {
      const Block lazy = ab.block(x, y);
      for (int p = 0; p < 2; ++p)
        for (int q = 0; q < 2; ++q)
          CHECK(std::abs(lazy(p, q) - m->coeff(static_cast<Eigen::Index>(w.index(x)) * 2 + p,
                                               static_cast<Eigen::Index>(w.index(y)) * 2 + q)) < 1e-12);
    }
  }
}

TEST_CASE("compose support through a multiplication sandwich") {
  const LatticeSpace z2(2);
  const auto xr = Region::halfspace(2, 0, 0);
  const auto x = mult_operator(z2, SiteFunction::of_region(xr), 1);
  const auto xc = mult_operator(z2, SiteFunction::of_region(complement(xr)), 1);
  const auto q = random_kernel(z2, 1, 2, 9);
  const auto s = compose(compose(x, q), xc);
  REQUIRE(s.support());
  const Box w = Box::centered(2, 7);
  const auto m = s.assemble(w);
  for (Eigen::Index c = 0; c < m->outerSize(); ++c) {
    for (SpMat::InnerIterator it(*m, c); it; ++it) {
      const Site r = w.site(static_cast<std::size_t>(it.row()));
      const Site col = w.site(static_cast<std::size_t>(it.col()));
      CHECK(s.support()->contains(r));
      CHECK(s.support()->contains(col));
      CHECK(r[0] >= 0);
      CHECK(r[0] <= 1);
      CHECK(col[0] >= -2);
      CHECK(col[0] < 0);
    }
  }
}

TEST_CASE("commutators") {
  const LatticeSpace z(1);
  const auto a = random_kernel(z, 2, 2, 4);
  const auto aa = commutator(a, a);
  for (std::int64_t i = -3; i <= 3; ++i)
    for (std::int64_t j = -3; j <= 3; ++j) CHECK(aa.block(Site{i}, Site{j}).cwiseAbs().maxCoeff() < 1e-14);

  const LatticeSpace z2(2);
  const auto f = mult_operator(z2, SiteFunction::of_region(Region::halfspace(2, 0, 1)), 1);
  const auto g = mult_operator(z2, SiteFunction::of_region(Region::halfspace(2, 1, -2, false)), 1);
  CHECK(commutator(f, g).assemble(Box::centered(2, 3))->nonZeros() == 0);

  const auto x = SiteFunction::of_region(Region::halfspace(1, 0, 0));
  const auto c = commutator(shift(z, 1), x);
  const Box w = Box::centered(1, 10);
  const auto m = c.assemble(w);
  CHECK(m->nonZeros() == 1);
  // [S, X](1, 0) would need x = y + 1 with X(y) != X(x): only x = 0, y = -1
  CHECK(c.block(Site{0}, Site{-1})(0, 0) == Complex(-1.0));
  const auto generic = commutator(shift(z, 1), mult_operator(z, x, 1));
  CHECK((*generic.assemble(w) - *m).norm() < 1e-14);
}

TEST_CASE("support budgets") {
  const LatticeSpace z2(2);
  const auto full = mult_operator(z2, SiteFunction::one(2), 1);
  try {
    support_of_product({full});
    FAIL("expected unbounded support");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::unbounded_support);
  }

  const auto q = random_kernel(z2, 1, 2, 5);
  const auto x1 = SiteFunction::of_region(Region::halfspace(2, 0, 0));
  const auto x2 = SiteFunction::of_region(Region::halfspace(2, 1, 0));
  const auto b = support_of_product({q, commutator(q, x1), commutator(q, x2)});
  CHECK(b.bounded);
  CHECK(b.bounding_radius <= 6);
  CHECK(b.radius_used == 6);

  const auto p = standard_partition(2);
  std::vector<KernelOperator> chain;
  for (const auto& a : p.parts) {
    chain.push_back(mult_operator(z2, SiteFunction::of_region(a), 1));
    chain.push_back(q);
  }
  const auto kb = support_of_product(chain);
  CHECK(kb.bounded);
  CHECK(kb.bounding_radius <= 2 * 4);

  TraceOptions small;
  small.window = 5;
  try {
    support_of_product(chain, small);
    FAIL("expected window too small");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::window_too_small);
  }
}

TEST_CASE("trace examples") {
  const LatticeSpace z(1);
  const auto five = Region::finite_set({Site{-7}, Site{-1}, Site{0}, Site{4}, Site{9}});
  const auto m = mult_operator(z, SiteFunction::of_region(five), 3);
  CHECK(std::abs(trace({m}).value - Complex(15.0)) < 1e-14);

  const auto xr = Region::halfspace(1, 0, 0);
  const auto x = mult_operator(z, SiteFunction::of_region(xr), 1);
  const auto xc = mult_operator(z, SiteFunction::of_region(complement(xr)), 1);
  const auto u = shift(z, 1);
  const auto ustar = adjoint(u);
  CHECK(std::abs(trace({xc, u, x, ustar}).value) < 1e-14);
  const auto t = trace({x, u, xc, ustar});
  CHECK(std::abs(t.value - Complex(1.0)) < 1e-14);
  CHECK(t.error_bound == 0.0);
  CHECK(t.sites_visited >= 1);
  const auto j = to_json(t);
  CHECK(j["value"][0].get<double>() == doctest::Approx(1.0));
  CHECK(j.contains("sites_visited"));
}

TEST_CASE("trace cyclicity, padding and adjoints") {
  const LatticeSpace z2(2);
  const auto p = standard_partition(2);
  std::vector<KernelOperator> chain;
  for (std::size_t i = 0; i < p.parts.size(); ++i) {
    chain.push_back(mult_operator(z2, SiteFunction::of_region(p.parts[i]), 2));
    chain.push_back(random_kernel(z2, 2, 1 + static_cast<std::int64_t>(i), 10 + i));
  }
  const auto base = trace(chain);
  CHECK(std::abs(base.value) > 1e-6);
  for (std::size_t s = 1; s < chain.size(); ++s) {
    std::vector<KernelOperator> rot(chain.begin() + static_cast<long>(s), chain.end());
    rot.insert(rot.end(), chain.begin(), chain.begin() + static_cast<long>(s));
    CHECK(std::abs(trace(rot).value - base.value) <= 1e-12 * std::max(1.0, std::abs(base.value)));
  }
  TraceOptions padded;
  padded.pad = 5;
  const auto wide = trace(chain, padded);
  CHECK(wide.sites_visited > base.sites_visited);
  CHECK(std::abs(wide.value - base.value) <= 1e-12 * std::max(1.0, std::abs(base.value)));

  std::vector<KernelOperator> adj;
  for (auto it = chain.rbegin(); it != chain.rend(); ++it) adj.push_back(adjoint(*it));
  CHECK(std::abs(trace(adj).value - std::conj(base.value)) <= 1e-12 * std::max(1.0, std::abs(base.value)));

  TraceOptions threaded;
  threaded.threads = 3;
  threaded.batch = 5;
  CHECK(trace(chain, threaded).value == trace(chain, TraceOptions{40, 2, 1, 5, 0}).value);
}

TEST_CASE("trace of a composite equals the trace of its factor chain") {
  const LatticeSpace z2(2);
  const auto q = random_kernel(z2, 1, 2, 21);
  const auto x1 = SiteFunction::of_region(Region::halfspace(2, 0, 0));
  const auto x2 = SiteFunction::of_region(Region::halfspace(2, 1, 0));
  const auto c1 = commutator(q, x1), c2 = commutator(q, x2);
  const auto chain = trace({q, c1, c2});
  const auto packed = trace({compose(q, compose(c1, c2))});
  CHECK(std::abs(chain.value - packed.value) < 1e-11);
}

TEST_CASE("trace sums over a supplied region") {
  const LatticeSpace z(1);
  const auto u = shift(z, 1);
  const auto uinv = shift(z, -1);
  const auto x = SiteFunction::of_region(Region::halfspace(1, 0, 0));
  const auto one = KernelOperator::identity(z, 1);
  const auto um = sub(u, one), uim = sub(uinv, one);
  const auto xm = mult_operator(z, x, 1);
  // (U-1) X (U^-1 - 1) - X (U-1)(U^-1 - 1): only the difference is trace-class
  const auto region = intersect({thicken(z, x.support, 2), thicken(z, x.cosupport, 2)});
  const auto r = trace_sum({Complex(1.0), Complex(-1.0)}, {{um, xm, uim}, {xm, um, uim}}, region);
  CHECK(std::abs(r.value - Complex(-1.0)) < 1e-14);
}

TEST_CASE("validators") {
  const LatticeSpace z(1);
  CHECK(verify_idempotent(UnitizedOperator::unit(z, 2), 1e-12).ok);
  const Invertible s{UnitizedOperator{Block::Identity(1, 1), sub(shift(z, 1), KernelOperator::identity(z, 1))},
                     UnitizedOperator{Block::Identity(1, 1), sub(shift(z, -1), KernelOperator::identity(z, 1))}};
  const auto v = verify_invertible(s, 1e-12);
  CHECK(v.ok);
  CHECK(v.max_residual < 1e-14);
  CHECK(s.u.part.propagation().radius == 1);

  const Invertible bad{s.u, s.u};
  CHECK_THROWS_AS(verify_invertible(bad, 1e-12), Error);
  const auto rep = verify_invertible(bad, 1e-12, 4, false);
  CHECK_FALSE(rep.ok);
  CHECK_FALSE(rep.witness.empty());

  const UnitizedOperator notp{Block::Identity(1, 1) * 2.0, KernelOperator::zero(z, 1)};
  CHECK_THROWS_AS(verify_idempotent(notp, 1e-12), Error);
}
