#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qtrace/opalg.hpp"

namespace qtrace {

enum class Flavor { kitaev, kubo };

const char* to_string(Flavor f) noexcept;

struct PairingOptions {
  TraceOptions trace;
  int n_guard = 6;
  bool override_guard = false;
  /// Check idempotency / invertibility on a sample box before tracing.
  bool validate = true;
  std::int64_t validation_radius = 4;
  /// Kitaev only: trace with the full P instead of its kernel part Q (each summand is
  /// trace-class either way since the parts are disjoint).
  bool raw = false;
};

struct PairingReport {
  Flavor flavor = Flavor::kitaev;
  int n = 0;
  Complex value{0.0, 0.0};
  Complex normalization{1.0, 0.0};
  Complex normalized{0.0, 0.0};
  std::int64_t integer = 0;
  double defect = 0.0;
  double error_bound = 0.0;
  std::size_t permutations_evaluated = 0;
  std::size_t sites_visited = 0;
  bool approximate = false;
  bool expected_zero = false;
  bool indeterminate = false;

  /// 1e-8 for exact inputs, max(1e-6, 3 * error_bound) otherwise.
  double default_tolerance() const;
};

nlohmann::json to_json(const PairingReport& r);

/// Constant c with c * value in Z for the given flavor and parity of n.
Complex normalization(Flavor flavor, int n);

struct Quantized {
  Complex normalized;
  std::int64_t integer = 0;
  double defect = 0.0;
  bool indeterminate = false;
};

Quantized quantize(Complex value, Flavor flavor, int n);

struct Permutation {
  std::vector<int> image;
  int sign = 1;
};

/// All permutations of {0, ..., n-1} with signs, in lexicographic order.
std::vector<Permutation> permutations(int n);

std::vector<SiteFunction> indicators(const HalfSpaceCollection& x);

/// Sum over S_{n+1} of sgn Tr(A_s0 Q A_s1 Q ... A_sn Q), each term on its own region.
PairingReport kitaev_idempotent(const UnitizedOperator& p, const Partition& a, const PairingOptions& opt = {});
/// Sum over S_{n+1} of sgn Tr(A_s0 (U-1) A_s1 (U^-1 - 1) ... A_sn (U^-1 - 1)); n odd.
PairingReport kitaev_invertible(const Invertible& u, const Partition& a, const PairingOptions& opt = {});
/// Sum over S_n of sgn Tr(P [Q, X_s1] ... [Q, X_sn]).
PairingReport kubo_idempotent(const UnitizedOperator& p, const std::vector<SiteFunction>& x,
                              const PairingOptions& opt = {});

struct KuboInvertibleForms {
  TraceReport commutator_form;  ///< U [X, U^-1] [X, U] ... [X, U^-1]
  TraceReport difference_form;  ///< antisymmetrized (U-1) X (U^-1 - 1) ... with X_0 = 1
  std::size_t permutations = 0;
};

KuboInvertibleForms kubo_invertible_forms(const Invertible& u, const std::vector<SiteFunction>& x,
                                          const PairingOptions& opt = {});
/// Commutator form, cross-checked against the difference form; throws formula_mismatch.
PairingReport kubo_invertible(const Invertible& u, const std::vector<SiteFunction>& x,
                              const PairingOptions& opt = {});

struct FlowReport {
  double flow = 0.0;
  std::int64_t integer = 0;
  double defect = 0.0;
  Complex kubo{0.0, 0.0};
  double kubo_gap = 0.0;
  std::size_t terms = 0;
};

nlohmann::json to_json(const FlowReport& r);

/// Sum over j >= 0 > k of |U_kj|^2 - |U_jk|^2 on Z, with the Kubo n=1 cross-check.
FlowReport flow(const Invertible& u, const PairingOptions& opt = {});

/// Tr(Q) for P = P_0 + Q.
PairingReport pairing_n0(const UnitizedOperator& p, const PairingOptions& opt = {});

}  // namespace qtrace
