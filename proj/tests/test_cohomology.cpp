#include "doctest.h"

#include <cmath>

#include "qtrace/cohomology.hpp"
#include "qtrace/models.hpp"

using namespace qtrace;

namespace {

HofstadterModel small_magnetic() {
  HofstadterSpec s;
  s.truncation = 8;
  s.kgrid = 24;
  return hofstadter_projection(s);
}

std::vector<Site> drop(const std::vector<Site>& t, std::size_t i) {
  std::vector<Site> out = t;
  out.erase(out.begin() + static_cast<std::ptrdiff_t>(i));
  return out;
}

/// Alternating face sum, written out independently of the determinant form.
Complex coboundary(const WedgeCochain& theta, const std::vector<Site>& t) {
  Complex s{0.0, 0.0};
  for (std::size_t i = 0; i < t.size(); ++i) s += (i % 2 ? -1.0 : 1.0) * theta.evaluate(drop(t, i));
  return s;
}

std::vector<std::vector<Site>> sample_tuples(int len) {
  std::vector<std::vector<Site>> out;
  std::uint64_t state = 12345;
  for (int k = 0; k < 200; ++k) {
    std::vector<Site> t;
    for (int i = 0; i < len; ++i) {
      state = mix_key(state, {k, i});
      t.push_back(Site{static_cast<std::int64_t>(state % 9) - 4, static_cast<std::int64_t>((state >> 8) % 9) - 4});
    }
    out.push_back(t);
  }
  return out;
}

SiteFunction finite_bump() { return SiteFunction::of_region(Region::box(Box::centered(2, 2)), "B"); }

}  // namespace

TEST_CASE("wedge cochains are antisymmetric and closed under the coboundary") {
  const auto x = indicators(standard_halfspaces(2));
  const WedgeCochain xy{{x[0], x[1]}};
  const auto a = random_sector_partition(3);
  const auto theta = WedgeCochain::of_partition(a);
  CHECK(theta.degree() == 2);
  for (const auto& t : sample_tuples(3)) {
    auto swapped = t;
    std::swap(swapped[0], swapped[2]);
    CHECK(theta.evaluate(swapped) == -theta.evaluate(t));
    CHECK(as_differential(xy).evaluate(t) == coboundary(xy, t));
  }
  // parts sum to 1, so 1 ^ A_0 ^ A_1 ^ A_2 vanishes
  for (const auto& t : sample_tuples(4)) {
    CHECK(as_differential(theta).evaluate(t) == Complex(0.0, 0.0));
    CHECK(coboundary(theta, t) == Complex(0.0, 0.0));
    CHECK(coboundary(as_differential(xy), t) == Complex(0.0, 0.0));
  }
}

TEST_CASE("1 ^ X equals minus X ^ X^c on tuples") {
  const auto x = Region::halfspace(2, 0, 0, true);
  const auto x1 = SiteFunction::of_region(x), x1c = SiteFunction::of_region(complement(x));
  const auto lhs = WedgeCochain::of_halfspaces({x1});
  const WedgeCochain rhs{{x1, x1c}, Complex(-1.0, 0.0)};
  for (const auto& t : sample_tuples(2)) CHECK(lhs.evaluate(t) == rhs.evaluate(t));
}

TEST_CASE("character chains") {
  const auto p = random_local_idempotent(2, 1, 2, 2);
  CHECK(CharacterChain::of_idempotent(p, 2).degree() == 2);
  CHECK(CharacterChain::of_invertible(shift_unitary(1), 3).operators.size() == 4);
  CHECK_THROWS_AS(CharacterChain::of_invertible(shift_unitary(1), 2), Error);
  const auto t = CharacterChain::of_invertible(shift_unitary(1), 1);
  CHECK(t.operators[0].block(Site{1}, Site{0})(0, 0) == Complex(1.0, 0.0));
  CHECK(t.operators[1].block(Site{0}, Site{1})(0, 0) == Complex(1.0, 0.0));
}

TEST_CASE("pairing against the Kubo form") {
  const auto model = small_magnetic();
  const auto x = indicators(standard_halfspaces(2));
  PairOptions po;
  po.trace.window = 50;
  po.mode = PairMode::summed;
  const auto theta = WedgeCochain::of_halfspaces(x);
  const auto direct = pair(theta, CharacterChain::of_idempotent(model.p, 2), po);
  PairingOptions ko;
  ko.trace.window = 50;
  const auto kubo = kubo_idempotent(model.p, x, ko);
  CHECK(std::abs(direct.value - kubo.value) < 1e-10);

  // per-term evaluation needs bounded supports for every term
  po.mode = PairMode::per_term;
  try {
    pair(theta, CharacterChain::of_idempotent(model.p, 2), po);
    FAIL("per-term pairing of 1 ^ X ^ Y accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::unbounded_support);
  }
  po.mode = PairMode::automatic;
  CHECK(std::abs(pair(theta, CharacterChain::of_idempotent(model.p, 2), po).value - kubo.value) < 1e-10);

  const auto line = std::vector<SiteFunction>{SiteFunction::of_region(Region::halfspace(1, 0, 0))};
  const auto u = random_local_invertible(4, 2, 2, 1, 1);
  const auto inv = pair(WedgeCochain::of_halfspaces(line), CharacterChain::of_invertible(u, 1));
  CHECK(std::abs(inv.value - kubo_invertible(u, line).value) < 1e-10);
  CHECK(std::abs(inv.value - Complex(-2.0, 0.0)) < 1e-10);
}

TEST_CASE("zero chains pair to zero") {
  const LatticeSpace z2(2);
  const auto zero = KernelOperator::zero(z2, 1);
  const auto x = indicators(standard_halfspaces(2));
  const auto r = pair(WedgeCochain::of_halfspaces(x), CharacterChain{{zero, zero, zero}});
  CHECK(r.value == Complex(0.0, 0.0));
  CHECK_THROWS_AS(pair(WedgeCochain::of_halfspaces(x), CharacterChain{{zero, zero}}), Error);
}

TEST_CASE("permuted partitions") {
  const LatticeSpace z2(2);
  const auto x = standard_halfspaces(2);
  for (const std::vector<int>& sigma : {std::vector<int>{0, 1}, std::vector<int>{1, 0}}) {
    const auto a = permuted_partition(x, sigma);
    REQUIRE(a.parts.size() == 3);
    const auto& xs0 = x.halfspaces[static_cast<std::size_t>(sigma[0])];
    const auto& xs1 = x.halfspaces[static_cast<std::size_t>(sigma[1])];
    for_each_site(Box::centered(2, 5), [&](const Site& s) {
      int hits = 0;
      for (const auto& part : a.parts) hits += part.contains(s) ? 1 : 0;
      CHECK(hits == 1);
      CHECK(a.parts[0].contains(s) == (xs0.contains(s) && xs1.contains(s)));
      CHECK(a.parts[1].contains(s) == (!xs0.contains(s) && xs1.contains(s)));
      CHECK(a.parts[2].contains(s) == !xs1.contains(s));
    });
  }
  CHECK_THROWS_AS(permuted_partition(x, {0, 0}), Error);
  CHECK_THROWS_AS(permuted_partition(x, {0}), Error);
}

TEST_CASE("switch functions reduce to indicators") {
  const auto ramp = SiteFunction::ramp(1, 0, -5, 5);
  const auto h = switch_reduction({ramp});
  REQUIRE(h.n() == 1);
  for (std::int64_t j = -9; j <= 9; ++j) CHECK(h.halfspaces[0].contains(Site{j}) == (j >= -5));

  const auto u = shift_unitary(1);
  const auto with_ramp = kubo_invertible(u, {ramp});
  const auto with_indicator = kubo_invertible(u, indicators(h));
  CHECK(std::abs(with_ramp.value - with_indicator.value) < 1e-12);
  CHECK(with_ramp.integer == -1);
  SiteFunction opaque;
  opaque.value = [](const Site&) { return Complex(0.5, 0.0); };
  CHECK_THROWS_AS(switch_reduction({opaque}), Error);
}

TEST_CASE("coboundaries pair to zero") {
  const auto x = indicators(standard_halfspaces(2));
  const auto b = finite_bump();
  PairOptions po;
  po.mode = PairMode::per_term;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto p = random_unitized_idempotent(seed, 1, 2, 2);
    const auto r = pair(WedgeCochain{{SiteFunction::one(2), b, x[1]}}, CharacterChain::of_idempotent(p, 2), po);
    CHECK(std::abs(r.value) < 1e-10);
  }
  const auto model = small_magnetic();
  po.trace.window = 50;
  const auto r = pair(WedgeCochain{{SiteFunction::one(2), b, x[0]}}, CharacterChain::of_idempotent(model.p, 2), po);
  CHECK(std::abs(r.value) < 1e-10);

  const auto b1 = SiteFunction::of_region(Region::finite_set({Site{-1}, Site{0}, Site{3}}));
  const auto u = random_local_invertible(2, 2, 2, 1, 1);
  const auto ri = pair(WedgeCochain{{SiteFunction::one(1), b1}}, CharacterChain::of_invertible(u, 1), po);
  CHECK(std::abs(ri.value) < 1e-10);
}

TEST_CASE("two-path identity") {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto p = random_unitized_idempotent(seed, 1, 2, 2);
    const auto r = verify_two_path(p, random_sector_partition(seed + 10));
    CHECK(r.pass);
    CHECK(r.difference <= r.tolerance);
  }
  const auto model = small_magnetic();
  VerifyOptions vo;
  vo.pair.trace.window = 50;
  vo.pairing.trace.window = 50;
  const auto r = verify_two_path(model.p, standard_partition(2), vo);
  CHECK(r.pass);
  CHECK(std::abs(r.lhs) > 0.05);
}

TEST_CASE("sum rule, equipartition and the Kubo-Kitaev factor") {
  const auto model = small_magnetic();
  VerifyOptions vo;
  vo.pair.trace.window = 50;
  vo.pairing.trace.window = 50;
  vo.tolerance = 1e-10;
  const auto x = standard_halfspaces(2);
  const auto eq = verify_equipartition(model.p, x, {1, 0}, vo);
  CHECK(eq.pass);
  CHECK(std::abs(eq.lhs) > 0.05);
  const auto sr = verify_sum_rule(model.p, x, vo);
  CHECK(sr.pass);
  const auto kk = verify_kubo_kitaev_factor(model.p, x, vo);
  CHECK(kk.pass);

  HalfSpaceCollection line;
  line.halfspaces = {Region::halfspace(1, 0, 0)};
  const auto u = random_local_invertible(6, 2, 2, 1, -1);
  CHECK(verify_sum_rule(u, line).pass);
  CHECK(verify_kubo_kitaev_factor(u, line).pass);
  CHECK(verify_equipartition(u, line, {0}).pass);

  const auto j = to_json(sr);
  CHECK(j["verdict"] == "pass");
  CHECK(j.contains("difference"));
  CHECK(j.contains("tolerance"));
}
