#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mtdnet/graph.hpp"

namespace mtdnet {

struct GradCheckOptions {
  double h = 1e-5;   // central-difference step
  double tol = 1e-4; // relative-error threshold for flagging
  // |analytic - numeric| at or below this counts as exact: central differences
  // carry ~1e-11..1e-10 of cancellation/truncation noise on an O(1) loss,
  // which would otherwise dominate the ratio on near-zero gradients.
  double abs_floor = 1e-9;
  // Entries checked per parameter tensor; 0 = exhaustive. Sampled entries are
  // a seeded draw without replacement, so a given (graph, options) pair always
  // checks the same entries.
  int max_entries_per_param = 0;
  std::uint64_t seed = 1;
};

struct ParamCheck {
  std::string name;
  double max_rel_err = 0.0;
  std::int64_t entries_checked = 0;
  std::int64_t worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  bool nonfinite = false;
  bool flagged = false;  // exceeds tol or nonfinite
};

struct GradCheckReport {
  std::vector<ParamCheck> params;
  double max_rel_err = 0.0;
  bool nonfinite = false;
  double tol = 0.0;

  bool pass() const;
  std::string summary() const;  // one line per parameter plus a verdict line
};

/// Compares backward() against central finite differences (L(t+h)-L(t-h))/2h
/// for every registered parameter of `graph`, at the current input values.
/// Runs in 64-bit only; float finite differences are too noisy to check
/// against. Also flags NaN/Inf in the loss or any analytic gradient.
GradCheckReport finite_diff_check(GraphT<double>& graph, NodeId loss, const GradCheckOptions& opt);

/// Comparison core: checks a caller-supplied gradient map (parameter name ->
/// flat gradient, one value per entry) against finite differences of `loss`.
GradCheckReport check_against_finite_diff(GraphT<double>& graph, NodeId loss,
                                          const std::map<std::string, std::vector<double>>& analytic,
                                          const GradCheckOptions& opt);

}  // namespace mtdnet
