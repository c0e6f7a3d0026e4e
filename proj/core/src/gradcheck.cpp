#include "mtdnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <map>
#include <random>
#include <stdexcept>

#include "mtdnet/common.hpp"

namespace mtdnet {

bool GradCheckReport::pass() const { return !nonfinite && max_rel_err < tol; }

std::string GradCheckReport::summary() const {
  std::string s;
  for (const ParamCheck& p : params) {
    s += p.name + ": max rel err " + format_double(p.max_rel_err) + " over " +
         std::to_string(p.entries_checked) + " entries";
    if (p.worst_index >= 0)
      s += " (worst @" + std::to_string(p.worst_index) + " analytic " +
           format_double(p.worst_analytic) + " numeric " + format_double(p.worst_numeric) + ")";
    if (p.nonfinite) s += " NONFINITE";
    if (p.flagged) s += " FLAGGED";
    s += "\n";
  }
  s += pass() ? "gradcheck PASS: max rel err " + format_double(max_rel_err) + " < tol " +
                    format_double(tol)
              : "gradcheck FAIL: max rel err " + format_double(max_rel_err) + " (tol " +
                    format_double(tol) + ")" + (nonfinite ? ", nonfinite values present" : "");
  return s + "\n";
}

namespace {

// |a-n| / max(|a|, |n|, floor), with differences at or below abs_floor
// treated as exact. Both floors keep finite-difference noise on near-zero
// gradients from dominating the ratio.
double rel_err(double analytic, double numeric, double abs_floor) {
  const double diff = std::fabs(analytic - numeric);
  if (diff <= abs_floor) return 0.0;
  return diff / std::max({std::fabs(analytic), std::fabs(numeric), 1e-6});
}

std::vector<std::int64_t> pick_entries(std::int64_t n, int cap, std::uint64_t seed) {
  std::vector<std::int64_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  if (cap <= 0 || n <= cap) return idx;
  std::mt19937_64 rng(seed);
  // Partial Fisher-Yates: the first `cap` slots become the sample.
  for (int i = 0; i < cap; ++i) {
    std::uniform_int_distribution<std::int64_t> dist(i, n - 1);
    std::swap(idx[i], idx[dist(rng)]);
  }
  idx.resize(cap);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

GradCheckReport check_against_finite_diff(GraphT<double>& graph, NodeId loss,
                                          const std::map<std::string, std::vector<double>>& analytic,
                                          const GradCheckOptions& opt) {
  if (opt.h <= 0) throw std::invalid_argument("finite_diff_check: h must be > 0");
  if (graph.node(loss).value.size() != 1)
    throw std::invalid_argument("finite_diff_check: loss node must be scalar");

  GradCheckReport report;
  report.tol = opt.tol;

  graph.forward();
  if (!std::isfinite(graph.value(loss).data[0])) report.nonfinite = true;

  std::uint64_t param_ordinal = 0;
  for (const std::string& name : graph.param_names()) {
    TensorT<double>& p = graph.param_tensor(name);
    auto an_it = analytic.find(name);
    if (an_it == analytic.end() || static_cast<std::int64_t>(an_it->second.size()) != p.size())
      throw std::invalid_argument("check_against_finite_diff: missing or misshaped gradient for '" +
                                  name + "'");
    const std::vector<double>& an = an_it->second;

    ParamCheck check;
    check.name = name;
    const auto entries = pick_entries(p.size(), opt.max_entries_per_param,
                                      derive_seed(opt.seed, param_ordinal));
    check.entries_checked = static_cast<std::int64_t>(entries.size());

    for (std::int64_t i : entries) {
      if (!std::isfinite(an[i])) {
        check.nonfinite = true;
        continue;
      }
      const double saved = p.data[i];
      p.data[i] = saved + opt.h;
      graph.forward();
      const double up = graph.value(loss).data[0];
      p.data[i] = saved - opt.h;
      graph.forward();
      const double down = graph.value(loss).data[0];
      p.data[i] = saved;
      const double numeric = (up - down) / (2.0 * opt.h);
      if (!std::isfinite(numeric)) {
        check.nonfinite = true;
        continue;
      }
      const double err = rel_err(an[i], numeric, opt.abs_floor);
      if (err > check.max_rel_err) {
        check.max_rel_err = err;
        check.worst_index = i;
        check.worst_analytic = an[i];
        check.worst_numeric = numeric;
      }
    }
    check.flagged = check.nonfinite || check.max_rel_err > opt.tol;
    report.max_rel_err = std::max(report.max_rel_err, check.max_rel_err);
    report.nonfinite = report.nonfinite || check.nonfinite;
    report.params.push_back(std::move(check));
    ++param_ordinal;
  }

  graph.forward();  // restore clean activations
  return report;
}

GradCheckReport finite_diff_check(GraphT<double>& graph, NodeId loss, const GradCheckOptions& opt) {
  graph.forward();
  graph.zero_param_grads();
  graph.backward(loss);
  std::map<std::string, std::vector<double>> analytic;
  for (const std::string& name : graph.param_names())
    analytic.emplace(name, graph.param_tensor(name).grad);
  return check_against_finite_diff(graph, loss, analytic, opt);
}

}  // namespace mtdnet
