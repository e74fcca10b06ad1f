#include "doctest.h"

#include <cmath>
#include <numbers>

#include "qtrace/models.hpp"
#include "qtrace/pairings.hpp"

using namespace qtrace;

namespace {

HofstadterSpec small_fixture() {
  HofstadterSpec s;
  s.p = 1;
  s.q = 3;
  s.gap = 1;
  s.truncation = 8;
  s.kgrid = 24;
  return s;
}

double unitarity_defect(const ShiftPolynomial& u) {
  const auto uu = u * u.adjoint();
  double worst = 0.0;
  for (const auto& [s, b] : uu.terms) {
    const Block expect = s == 0 ? Block(Block::Identity(u.k, u.k)) : Block(Block::Zero(u.k, u.k));
    worst = std::max(worst, (b - expect).cwiseAbs().maxCoeff());
  }
  return worst;
}

}  // namespace

TEST_CASE("shift polynomials") {
  const auto a = ShiftPolynomial::monomial(2, Block::Identity(1, 1));
  const auto b = ShiftPolynomial::monomial(-3, Block::Identity(1, 1) * 2.0);
  const auto ab = a * b;
  REQUIRE(ab.terms.size() == 1);
  CHECK(ab.terms.begin()->first == -1);
  CHECK(ab.terms.begin()->second(0, 0) == Complex(2.0, 0.0));
  CHECK(ab.radius() == 1);
  CHECK(a.adjoint().terms.begin()->first == -2);

  const LatticeSpace z(1);
  const auto op = a.to_operator(z);
  const auto blk = op.block(Site{5}, Site{3});
  CHECK(blk(0, 0) == Complex(1.0, 0.0));
  CHECK(op.block(Site{3}, Site{5})(0, 0) == Complex(0.0, 0.0));
}

TEST_CASE("split-step walks are unitary and carry no flow") {
  for (auto [t1, t2] : {std::pair{0.0, 0.0}, std::pair{std::numbers::pi / 2, 0.0}, std::pair{0.3, 1.1},
                        std::pair{1.2, 0.4}}) {
    const auto poly = split_step_polynomial(t1, t2);
    CHECK(unitarity_defect(poly) < 1e-14);
    CHECK(poly.radius() <= 2);
    const auto u = split_step_walk(t1, t2);
    CHECK(verify_invertible(u, 1e-12, 4, false).ok);
    const auto f = flow(u);
    CHECK(f.integer == 0);
    CHECK(std::abs(f.flow) < 1e-12);
    CHECK(std::abs(f.kubo) < 1e-12);
  }
  const auto c = coin(0.7);
  CHECK((c * c.adjoint() - Block::Identity(2, 2)).norm() < 1e-15);
}

TEST_CASE("walk times shift carries the shift index") {
  const auto w = split_step_polynomial(0.3, 1.1);
  for (int s : {-2, 1, 3}) {
    const auto ws = ShiftPolynomial::monomial(s, Block::Identity(2, 2)) * w;
    const auto u = unitary_from_polynomial(LatticeSpace(1), ws);
    CHECK(flow(u).integer == -2 * s);
  }
}

TEST_CASE("random fixtures satisfy their algebraic relations") {
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    for (int dim : {1, 2}) {
      const auto p = random_local_idempotent(seed, 2, 2, dim);
      CHECK(verify_idempotent(p, 1e-12, 4, false).max_residual < 1e-12);
      const auto e = random_unitized_idempotent(seed, 1, 3, dim);
      CHECK(verify_idempotent(e, 1e-12, 4, false).max_residual < 1e-12);
      CHECK(e.scalar(0, 0) == Complex(1.0, 0.0));
      const auto u = random_local_invertible(seed, 2, 2, dim, 1);
      CHECK(verify_invertible(u, 1e-12, 4, false).max_residual < 1e-12);
    }
  }
  // same seed, same operator
  const auto a = random_local_invertible(9, 2, 2, 1, 0), b = random_local_invertible(9, 2, 2, 1, 0);
  CHECK((a.u.part.block(Site{1}, Site{2}) - b.u.part.block(Site{1}, Site{2})).norm() == 0.0);
  CHECK(mix_key(1, {2, 3}) != mix_key(1, {3, 2}));
  CHECK_THROWS_AS(random_unitized_idempotent(1, 1, 1), Error);
}

TEST_CASE("random invertibles with a shift have flow minus the shift") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto s = static_cast<std::int64_t>(seed % 5) - 2;
    const auto f = flow(random_local_invertible(seed, 2, 2, 1, s));
    CHECK(f.integer == -2 * s);
    CHECK(f.defect < 1e-10);
  }
}

TEST_CASE("sector partitions and deformations") {
  const LatticeSpace z2(2);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto a = random_sector_partition(seed, 3);
    CHECK(a.parts.size() == 3);
    CHECK(certify(z2, a, {1, 3}, Box::centered(2, 40)).verdict != Verdict::failed);
  }
  Partition line;
  line.parts = {Region::halfspace(1, 0, 0, true), Region::halfspace(1, 0, 0, false)};
  const auto moved = deform_partition(line, {Site{-4}}, 0, 20);
  CHECK(moved.parts[0].contains(Site{-4}));
  CHECK_FALSE(moved.parts[1].contains(Site{-4}));
  CHECK(moved.parts[1].contains(Site{-3}));
  try {
    deform_partition(line, {Site{19}}, 1, 20);
    FAIL("deformation outside the window accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::window_too_small);
  }
  CHECK_THROWS_AS(deform_partition(line, {Site{1}}, 2, 20), Error);
}

TEST_CASE("lattice field strength oracle") {
  CHECK(std::abs(chern_oracle(1, 3, 1, 24)) == 1);
  CHECK(chern_oracle(1, 3, 1, 24) == chern_oracle(1, 3, 1, 48));
  CHECK(chern_oracle(1, 3, 2, 24) == -chern_oracle(1, 3, 1, 24));
  CHECK(chern_oracle(1, 3, 3, 24) == 0);
  CHECK(chern_oracle(1, 5, 5, 24) == 0);
  CHECK(std::abs(chern_oracle(1, 5, 2, 32)) == 2);
  try {
    chern_oracle(1, 4, 2, 24);
    FAIL("closed gap accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::gap_closed);
  }
  CHECK_THROWS_AS(chern_oracle(2, 4, 1, 24), Error);
  CHECK_THROWS_AS(HofstadterSpec::parse_flux("one third"), Error);
  const auto s = HofstadterSpec::parse_flux("2/7");
  CHECK(s.p == 2);
  CHECK(s.q == 7);
}

TEST_CASE("bloch hamiltonian is hermitian") {
  const Block h = hofstadter_bloch(1, 3, 0.4, 1.3);
  CHECK((h - h.adjoint()).norm() < 1e-15);
}

TEST_CASE("truncated magnetic projection") {
  const auto model = hofstadter_projection(small_fixture());
  CHECK(model.spectral_gap > 0.5);
  CHECK(model.kappa > 0.0);
  CHECK(model.fit_r2 > 0.5);
  CHECK(model.p.approximate());
  REQUIRE(model.shell_max.size() >= 9);
  for (std::size_t r = 1; r < model.shell_max.size(); ++r)
    CHECK(model.shell_max[r] <= model.C * std::exp(-model.kappa * static_cast<double>(r)) * (1 + 1e-12));

  // hermitian, translation covariant up to the magnetic phase on y
  const auto b1 = model.p.part.block(Site{0, 0}, Site{2, 1});
  const auto b2 = model.p.part.block(Site{2, 1}, Site{0, 0});
  CHECK(std::abs(b1(0, 0) - std::conj(b2(0, 0))) < 1e-13);
  CHECK(std::abs(model.p.part.block(Site{0, 0}, Site{9, 0})(0, 0)) == 0.0);

  const auto json = model.report();
  CHECK(json["flux"] == "1/3");
  CHECK(json.contains("kgrid_error"));

  auto bad = small_fixture();
  bad.kgrid = 16;
  CHECK_THROWS_AS(hofstadter_projection(bad), Error);
  bad = small_fixture();
  bad.gap = 3;
  CHECK_THROWS_AS(hofstadter_projection(bad), Error);
  bad = small_fixture();
  bad.q = 4;
  bad.gap = 2;
  bad.kgrid = 32;
  try {
    hofstadter_projection(bad);
    FAIL("closed gap accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::gap_closed);
  }
}

TEST_CASE("idempotency residual falls with the truncation radius") {
  double previous = 1.0;
  for (std::int64_t rt : {8, 10, 12, 14}) {
    auto s = small_fixture();
    s.truncation = rt;
    s.kgrid = 32;
    const auto model = hofstadter_projection(s);
    const double res = verify_idempotent(model.p, 1.0, 3, false).max_residual;
    CHECK(res < previous);
    previous = res;
  }
  CHECK(previous < 1e-4);
}

TEST_CASE("small magnetic fixture matches the oracle") {
  const auto model = hofstadter_projection(small_fixture());
  PairingOptions opt;
  opt.trace.window = 50;
  const auto x = indicators(standard_halfspaces(2));
  const auto kubo = kubo_idempotent(model.p, x, opt);
  CHECK(kubo.integer == chern_oracle(1, 3, 1, 24));
  CHECK(kubo.defect < 0.01);
  CHECK(kubo.approximate);

  // Tr(P [[X, P], [Y, P]]) with commutators on both sides
  const auto full = model.p.full();
  const auto hall = trace({full, commutator(commutator(x[0], full), commutator(x[1], full))}, opt.trace);
  CHECK(std::abs(hall.value - kubo.value) < 1e-10);
}

TEST_CASE("model documents") {
  const auto shift = model_from_json({{"model", "shift"}, {"power", 3}});
  CHECK(shift.invertible);
  CHECK(shift.resolved["k"] == 1);
  CHECK(flow(shift.unitary).integer == -3);
  const auto sum = model_from_json({{"model", "shift_sum"}, {"p", 1}, {"q", 2}});
  CHECK(flow(sum.unitary).integer == 1);
  const auto walk = model_from_json({{"model", "split_step"}, {"theta1", 0.2}});
  CHECK(walk.resolved["theta2"] == 0.0);
  const auto rnd = model_from_json({{"model", "random_invertible"}, {"radius", 1}}, 17);
  CHECK(rnd.resolved["seed"] == 17);
  const auto h = model_from_json({{"model", "hofstadter"}, {"truncation_radius", 8}, {"kgrid", 24}});
  CHECK_FALSE(h.invertible);
  CHECK(h.details["chern_oracle"] == chern_oracle(1, 3, 1, 24));

  for (const auto& bad : {nlohmann::json{{"model", "torus"}}, nlohmann::json{{"power", 2}},
                          nlohmann::json{{"model", "shift"}, {"power", "two"}},
                          nlohmann::json{{"model", "hofstadter"}, {"flux", "x"}}}) {
    try {
      model_from_json(bad);
      FAIL("bad document accepted");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::schema);
    }
  }
}
