#pragma once

// Small shared fixtures for the test suite: a hand-rolled dataset
// builder, temp-file plumbing, and manually constructed score sets.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "rmpw/data.hpp"
#include "rmpw/propensity.hpp"

namespace testutil {

// Unique-enough temp path; the suite runs single-process.
inline std::string temp_path(const std::string& stem) {
  static int counter = 0;
  const auto dir = std::filesystem::temp_directory_path() / "rmpw_tests";
  std::filesystem::create_directories(dir);
  return (dir / (stem + "_" + std::to_string(counter++))).string();
}

inline std::string write_file(const std::string& stem, const std::string& text) {
  const std::string path = temp_path(stem);
  std::ofstream out(path);
  out << text;
  out.close();
  return path;
}

inline std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in),
                     std::istreambuf_iterator<char>());
}

// Column-wise dataset builder. Covariate x is optional.
inline rmpw::Dataset make_dataset(const std::vector<int>& a,
                                  const std::vector<int>& z,
                                  const std::vector<double>& y,
                                  const std::vector<double>& x = {}) {
  rmpw::Dataset ds;
  ds.treatment = a;
  ds.mediator = z;
  ds.outcome = y;
  for (std::size_t i = 0; i < a.size(); ++i)
    ds.unit_ids.push_back(std::to_string(i + 1));
  if (!x.empty()) {
    ds.covariate_names = {"x"};
    ds.covariates = {x};
  }
  return ds;
}

// Scores with every field pinned by hand, for weight-formula tests.
inline rmpw::PropensityScores make_scores(std::size_t n, double marginal,
                                          const std::vector<double>& theta_treat,
                                          const std::vector<double>& theta_z0,
                                          const std::vector<double>& theta_z1,
                                          bool randomized = true) {
  rmpw::PropensityScores s;
  s.marginal_treated = marginal;
  s.randomized = randomized;
  s.theta_treat = theta_treat.empty() ? std::vector<double>(n, marginal) : theta_treat;
  s.theta_med[0] = theta_z0;
  s.theta_med[1] = theta_z1;
  return s;
}

}  // namespace testutil
