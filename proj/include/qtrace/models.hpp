#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "qtrace/opalg.hpp"

namespace qtrace {

/// Translation-invariant operator on Z written as a Laurent polynomial in the right
/// shift: sum_s T_s (x) B_s with (T_s psi)(x) = psi(x - s).
struct ShiftPolynomial {
  int k = 1;
  std::map<std::int64_t, Block> terms;

  static ShiftPolynomial constant(const Block& b);
  static ShiftPolynomial monomial(std::int64_t s, const Block& b);

  ShiftPolynomial operator*(const ShiftPolynomial& o) const;
  ShiftPolynomial adjoint() const;
  std::int64_t radius() const;
  /// Kernel on Z^d translating along `axis`.
  KernelOperator to_operator(const LatticeSpace& space, int axis = 0) const;
};

/// Unitized invertible from a unitary polynomial (inverse = adjoint).
Invertible unitary_from_polynomial(const LatticeSpace& space, const ShiftPolynomial& u, int axis = 0);

/// (U psi)(x) = psi(x - p) on Z^d along `axis`, k components.
Invertible shift_unitary(std::int64_t p, int k = 1, int dim = 1, int axis = 0);

/// 2x2 real rotation [[cos, -sin], [sin, cos]].
Block coin(double theta);

/// U = S_down C(theta2) S_up C(theta1) on Z (x) C^2; S_up moves component 0 one site right,
/// S_down moves component 1 one site left.
Invertible split_step_walk(double theta1, double theta2);
ShiftPolynomial split_step_polynomial(double theta1, double theta2);

/// Block-diagonal direct sum on the internal index.
KernelOperator direct_sum(const KernelOperator& a, const KernelOperator& b);
UnitizedOperator direct_sum(const UnitizedOperator& a, const UnitizedOperator& b);
Invertible direct_sum(const Invertible& a, const Invertible& b);

// ---------------------------------------------------------------------------
// Magnetic projection
// ---------------------------------------------------------------------------

struct HofstadterSpec {
  std::int64_t p = 1;
  std::int64_t q = 3;
  int gap = 1;                 ///< number of occupied bands, 1 <= gap < q
  std::int64_t truncation = 14;
  int kgrid = 48;
  int threads = 1;

  static HofstadterSpec parse_flux(const std::string& flux);
};

struct HofstadterModel {
  HofstadterSpec spec;
  UnitizedOperator p;       ///< scalar part 0
  double spectral_gap = 0;  ///< min over the grid of E_gap - E_{gap-1}
  double kappa = 0;
  double C = 0;
  double fit_r2 = 0;
  double tail = 0;          ///< row mass beyond the truncation radius (envelope)
  double kgrid_error = 0;   ///< aliasing estimate C e^{-kappa (N_k - R_t)}
  std::vector<double> shell_max;  ///< max |P(x, y)| per sup distance 0..R_t

  nlohmann::json report() const;
};

/// Harper Hamiltonian in the Landau gauge,
/// (H psi)(x, y) = psi(x+1, y) + psi(x-1, y) + e^{-2 pi i phi x} psi(x, y+1) + e^{2 pi i phi x} psi(x, y-1),
/// projected below the requested gap and truncated at sup distance R_t.
HofstadterModel hofstadter_projection(const HofstadterSpec& spec);

/// Bloch Hamiltonian on the magnetic unit cell (q x q).
Block hofstadter_bloch(std::int64_t p, std::int64_t q, double kx, double ky);

/// Lattice field-strength Chern number of the lowest `bands` bands on an N_k x N_k grid.
std::int64_t chern_oracle(std::int64_t p, std::int64_t q, int bands, int kgrid);

// ---------------------------------------------------------------------------
// Randomized fixtures
// ---------------------------------------------------------------------------

/// Deterministic stream keyed by (seed, salt...).
std::uint64_t mix_key(std::uint64_t seed, std::initializer_list<std::int64_t> salt);

/// Block diagonal over cubic tiles of width R + 1; each block is S diag(1_r, 0) S^-1
/// with random S and rank r. Scalar part zero.
UnitizedOperator random_local_idempotent(std::uint64_t seed, std::int64_t r, int k, int dim = 1);

/// V (P_0 + E) V^-1 with P_0 = diag(1_r, 0) scalar, E a tile idempotent living on the
/// remaining components and V a random local invertible. k >= 2.
UnitizedOperator random_unitized_idempotent(std::uint64_t seed, std::int64_t r, int k, int dim = 1);

/// Two brickwork layers of random tile unitaries of width R + 1 followed by shift^s
/// along axis 0.
Invertible random_local_invertible(std::uint64_t seed, std::int64_t r, int k, int dim = 1, std::int64_t shift = 0);

/// Planar partition into `parts` sectors around a random center with random rays at
/// least `min_angle` apart.
Partition random_sector_partition(std::uint64_t seed, int parts = 3, double min_angle = 0.7);

/// Reassigns finitely many sites to `target`; sites must stay inside the window minus margin.
Partition deform_partition(const Partition& a, const std::vector<Site>& sites, int target, std::int64_t window,
                           std::int64_t margin = 2);

// ---------------------------------------------------------------------------
// JSON model documents
// ---------------------------------------------------------------------------

struct ModelInstance {
  std::string name;
  bool invertible = false;
  UnitizedOperator idempotent;
  Invertible unitary;
  nlohmann::json resolved;  ///< document with defaults filled in
  nlohmann::json details;   ///< model-specific diagnostics
};

/// {"model": "shift" | "split_step" | "identity" | "hofstadter" | "random_idempotent" |
///  "random_unitized_idempotent" | "random_invertible", ...}
ModelInstance model_from_json(const nlohmann::json& j, std::uint64_t seed = 0, int threads = 1);

}  // namespace qtrace
