#pragma once

#include <string>
#include <variant>
#include <vector>

#include "qtrace/pairings.hpp"

namespace qtrace {

/// coefficient * f_0 ^ f_1 ^ ... ^ f_n, evaluated at (x_0, ..., x_n) as
/// coefficient * sum_s sgn(s) prod_i f_{s_i}(x_i) = coefficient * det[f_j(x_i)].
struct WedgeCochain {
  std::vector<SiteFunction> factors;
  Complex coefficient{1.0, 0.0};

  int degree() const { return static_cast<int>(factors.size()) - 1; }
  Complex evaluate(const std::vector<Site>& tuple) const;

  static WedgeCochain of_partition(const Partition& a);
  /// 1 ^ X_1 ^ ... ^ X_n.
  static WedgeCochain of_halfspaces(const std::vector<SiteFunction>& x);
};

/// 1 ^ f_0 ^ ... ^ f_n.
WedgeCochain as_differential(const WedgeCochain& theta);

/// Operator tuple (T_0, ..., T_n), paired with cochains through
/// (f_0, ..., f_n) -> Tr(f_0 T_0 f_1 T_1 ... f_n T_n).
struct CharacterChain {
  std::vector<KernelOperator> operators;

  int degree() const { return static_cast<int>(operators.size()) - 1; }

  /// (Q, ..., Q) for P = P_0 + Q.
  static CharacterChain of_idempotent(const UnitizedOperator& p, int n);
  /// (U - 1, U^-1 - 1, ..., U^-1 - 1); n odd.
  static CharacterChain of_invertible(const Invertible& u, int n);
};

enum class PairMode {
  per_term,   ///< every antisymmetrized term traced over its own region
  summed,     ///< all terms over one region where the cochain is locally non-degenerate
  automatic,  ///< per_term, falling back to summed when a term has no bounded support
};

struct PairOptions {
  TraceOptions trace;
  PairMode mode = PairMode::automatic;
};

/// Sum_s sgn(s) Tr(f_{s_0} T_0 f_{s_1} T_1 ... f_{s_n} T_n) times the coefficient.
TraceReport pair(const WedgeCochain& theta, const CharacterChain& chain, const PairOptions& opt = {});

/// A_0 = X_{s_1} ... X_{s_n}, A_i = X_{s_i}^c X_{s_{i+1}} ... X_{s_n} (sigma indexes 0..n-1).
Partition permuted_partition(const HalfSpaceCollection& x, const std::vector<int>& sigma);

/// Indicator collection of the supports of switch functions.
HalfSpaceCollection switch_reduction(const std::vector<SiteFunction>& chi);

using PairingInput = std::variant<UnitizedOperator, Invertible>;

struct IdentityReport {
  std::string name;
  Complex lhs{0.0, 0.0};
  Complex rhs{0.0, 0.0};
  double difference = 0.0;
  double tolerance = 0.0;
  double error_bound = 0.0;
  bool pass = false;
  std::string note;
};

nlohmann::json to_json(const IdentityReport& r);

struct VerifyOptions {
  PairOptions pair;
  PairingOptions pairing;
  /// Overrides the default ladder (1e-10 times the scale for exact inputs, max(1e-6, 3 * error bound) otherwise).
  std::optional<double> tolerance;
};

/// Kitaev pairing with A^sigma against sgn(sigma) times the pairing with A^id.
IdentityReport verify_equipartition(const PairingInput& input, const HalfSpaceCollection& x,
                                    const std::vector<int>& sigma, const VerifyOptions& opt = {});
/// <1 ^ X_1 ^ ... ^ X_n, chi> = (-1)^n sum_s sgn(s) <A^s_0 ^ ... ^ A^s_n, chi>.
IdentityReport verify_sum_rule(const PairingInput& input, const HalfSpaceCollection& x,
                               const VerifyOptions& opt = {});
/// kubo(X) = (-1)^n n! kitaev(A(X)).
IdentityReport verify_kubo_kitaev_factor(const PairingInput& input, const HalfSpaceCollection& x,
                                         const VerifyOptions& opt = {});
/// <A_0 ^ ... ^ A_n, chi> against the Kitaev pairing (two independent evaluations).
IdentityReport verify_two_path(const UnitizedOperator& p, const Partition& a, const VerifyOptions& opt = {});

}  // namespace qtrace
