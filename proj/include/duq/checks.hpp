#pragma once

#include <string>
#include <vector>

#include "duq/nn.hpp"
#include "duq/trainer.hpp"

namespace duq::checks {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;  // measured numbers, or the violated invariant
};

/// Small trained classifier shared by the cross-checks.
struct Fixture {
  nn::NetworkConfig network;
  Dataset train;
  Dataset test;
  Eigen::VectorXd omega_hat;
};

/// Blob-cluster classifier at reference scale (P <= 200), trained to a
/// stationary point.
Fixture make_tiny_fixture(std::uint64_t seed = 7);

/// Every derivative, eigensolver, variance and bound cross-checked against
/// its dense brute-force counterpart at reference scale.
std::vector<CheckResult> run_oracle_suite(std::uint64_t seed = 7);

}  // namespace duq::checks
