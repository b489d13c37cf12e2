#pragma once

// Finite-difference verification of the differentiation engine. All
// numerics here run in 64-bit: inputs and parameters are cast to double,
// forward passes are re-evaluated at x +/- h, and the central difference is
// compared with the engine's analytic gradient.

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace frtpad {

struct GradCheckCase {
  std::string name;
  std::size_t seeds = 0;
  double max_rel_error = 0.0;
  double tolerance = 0.0;

  [[nodiscard]] bool passed() const { return max_rel_error <= tolerance; }
};

struct GradCheckReport {
  std::vector<GradCheckCase> cases;
  double seconds = 0.0;

  [[nodiscard]] bool all_passed() const;
};

// ||a - b|| / max(||a||, ||b||, floor) in the Euclidean norm.
double relative_error(std::span<const double> analytic, std::span<const double> numeric,
                      double floor = 1e-6);

// Central differences of f at x, one coordinate at a time.
std::vector<double> central_difference(const std::function<double(std::span<const double>)>& f,
                                       std::vector<double> x, double step = 1e-6);

// Every primitive plus the adapter/detector/classifier/loss compositions,
// `seeds` random instances each.
GradCheckReport run_gradcheck(std::size_t seeds = 20, double tolerance = 1e-4);

}  // namespace frtpad
