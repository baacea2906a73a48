#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "duq/delta.hpp"
#include "duq/io.hpp"
#include "duq/trainer.hpp"

namespace duq::cli {

enum class Split { train, test };

struct SpectralSection {
  int k = 20;
  Eigen::Index block_size = 100;
  double lanczos_tol = 1e-8;
  int lanczos_max_iters = 0;
  int check_every = 10;
};

struct RunConfig {
  std::uint64_t seed = 0;
  nn::NetworkConfig network;
  io::DatasetSource train_source;
  io::DatasetSource test_source;
  trainer::TrainConfig training;
  SpectralSection spectral;
};

/// Strict parse: unknown keys anywhere in the file are errors.
RunConfig load_run_config(const std::filesystem::path& path);

Dataset load_split(const RunConfig& cfg, Split split);

// Commands return 0 on success. User and configuration problems surface as
// io::ConfigError (exit 2); violated internal invariants as other
// exceptions (exit 1).

int cmd_train(const RunConfig& cfg, const std::filesystem::path& out_dir);
int cmd_spectrum(const RunConfig& cfg, const std::filesystem::path& out_dir,
                 delta::EstimatorKind kind, std::optional<int> k_override);
int cmd_uncertainty(const RunConfig& cfg, const std::filesystem::path& out_dir,
                    delta::EstimatorKind kind, Split split);
int cmd_rank(const RunConfig& cfg, const std::filesystem::path& out_dir,
             delta::EstimatorKind kind, Split split, delta::RankOrder order,
             std::size_t top);
int cmd_compare(const RunConfig& cfg, const std::filesystem::path& out_dir);
int cmd_oracle_check(std::optional<std::filesystem::path> artifact_dir,
                     std::uint64_t seed);

/// Full argv dispatcher used by the binary; returns the process exit code.
int run_main(int argc, char** argv);

std::string report_file_name(delta::EstimatorKind kind, Split split);
std::string bundle_file_name(spectral::BundleKind kind);

}  // namespace duq::cli
