#include "lrm/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace lrm {

std::string GradCheckReport::table() const {
  std::ostringstream os;
  size_t w = 10;
  for (const auto& e : entries) w = std::max(w, e.name.size());
  os << std::left << std::setw(static_cast<int>(w + 2)) << "tensor"
     << std::right << std::setw(12) << "max_rel_err" << std::setw(10) << "coords" << "\n";
  for (const auto& e : entries) {
    os << std::left << std::setw(static_cast<int>(w + 2)) << e.name << std::right
       << std::setw(12) << std::scientific << std::setprecision(3) << e.max_rel_err
       << std::setw(10) << e.coords_checked << "\n";
  }
  os << "overall max rel err: " << std::scientific << std::setprecision(3) << max_rel_err << "\n";
  return os.str();
}

GradCheckReport finite_difference_check(
    const std::function<Tensor<double>()>& f,
    const std::vector<std::pair<std::string, Tensor<double>>>& params,
    int64_t max_coords, Rng* rng) {
  for (const auto& [name, t] : params)
    LRM_REQUIRE(t.defined() && t.is_leaf() && t.requires_grad(),
                "finite_difference_check: '", name, "' must be a differentiable leaf");

  Tensor<double> loss = f();
  LRM_REQUIRE(loss.size() == 1, "finite_difference_check: f must return a scalar");
  const double base = loss.item();
  {
    Tensor<double> again = f();
    LRM_REQUIRE(again.item() == base,
                "finite_difference_check: f is non-deterministic (baseline evals differ: ", base,
                " vs ", again.item(), ")");
  }
  for (const auto& [name, t] : params) const_cast<Tensor<double>&>(t).zero_grad();
  backward(loss);

  GradCheckReport report;
  for (const auto& [name, t] : params) {
    auto& theta = const_cast<Tensor<double>&>(t).mutable_value();
    const auto grad = t.grad();  // copy: later f() calls must not disturb it
    const int64_t n = static_cast<int64_t>(theta.size());
    std::vector<int64_t> coords(static_cast<size_t>(n));
    std::iota(coords.begin(), coords.end(), 0);
    if (max_coords > 0 && n > max_coords) {
      LRM_REQUIRE(rng != nullptr, "finite_difference_check: sampling requires an rng");
      for (int64_t i = 0; i < max_coords; ++i)
        std::swap(coords[i], coords[rng->uniform_int(i, n - 1)]);
      coords.resize(static_cast<size_t>(max_coords));
    }
    GradCheckEntry entry;
    entry.name = name;
    entry.coords_checked = static_cast<int64_t>(coords.size());
    for (int64_t i : coords) {
      const double orig = theta[i];
      const double h = 1e-4 * (1.0 + std::abs(orig));
      theta[i] = orig + h;
      const double lp = f().item();
      theta[i] = orig - h;
      const double lm = f().item();
      theta[i] = orig;
      const double numeric = (lp - lm) / (2.0 * h);
      const double analytic = grad[i];
      const double rel = std::abs(analytic - numeric) /
                         std::max({1.0, std::abs(analytic), std::abs(numeric)});
      if (rel > entry.max_rel_err) {
        entry.max_rel_err = rel;
        entry.worst_coord = i;
        entry.analytic = analytic;
        entry.numeric = numeric;
      }
    }
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace lrm
