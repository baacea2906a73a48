#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "duq/delta.hpp"
#include "duq/nn.hpp"
#include "duq/spectral.hpp"
#include "duq/trainer.hpp"

namespace duq::io {

/// User or file-content problem (bad path, bad magic, bad key). Maps to
/// exit status 2 at the command line.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// -- model checkpoint ------------------------------------------------------

struct Checkpoint {
  nn::NetworkConfig network;
  std::uint64_t seed = 0;
  Eigen::VectorXd params;
};

/// Versioned little-endian binary container; layout documented in
/// docs/formats.md.
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& c);
Checkpoint read_checkpoint(const std::filesystem::path& path);

// -- spectral bundle -------------------------------------------------------

void write_bundle(const std::filesystem::path& path,
                  const spectral::SpectralBundle& b);
spectral::SpectralBundle read_bundle(const std::filesystem::path& path);

// -- dataset sources -------------------------------------------------------

enum class SourceKind { idx_pair, csv, synthetic_blobs };
enum class Normalization { none, unit_interval };

struct DatasetSource {
  SourceKind kind = SourceKind::synthetic_blobs;
  Normalization normalization = Normalization::none;
  int classes = 0;
  Eigen::Index subsample = 0;  // 0 keeps everything
  // idx_pair
  std::string images_path, labels_path;
  // csv
  std::string csv_path;
  // synthetic_blobs
  int dim = 0;
  Eigen::Index n = 0;
  double separation = 3.0;
  double noise_sigma = 1.0;
};

/// Gaussian class clusters: means drawn once from means_seed (shared by
/// every split), points from noise_seed, classes assigned round-robin.
Dataset make_blobs(int classes, int dim, Eigen::Index n, double separation,
                   double noise_sigma, std::uint64_t means_seed,
                   std::uint64_t noise_seed);

/// Deterministic subsample of count rows, original order preserved.
Dataset subsample(const Dataset& data, Eigen::Index count, std::uint64_t seed);

/// Materialize a source. idx files are validated against their magic
/// numbers (0x00000803 images, 0x00000801 labels) and big-endian headers;
/// failures report the byte offset. The seed drives blob noise and
/// subsampling; means_seed keeps blob geometry shared across splits.
Dataset ingest(const DatasetSource& source, std::uint64_t means_seed,
               std::uint64_t split_seed);

// -- text artifacts --------------------------------------------------------

std::string format_double(double v);  // shortest round-trip decimal

void write_training_log(const std::filesystem::path& path,
                        const std::vector<trainer::TrainLogRow>& log);

void write_spectrum(const std::filesystem::path& tsv_path,
                    const std::filesystem::path& summary_path,
                    const spectral::SpectrumSummary& summary);

/// One record per input: kind, score and bound, flags, then per class the
/// predicted probability, variance, variance bound, sd and sd bound.
/// Column order is frozen in docs/formats.md.
struct PredictionRecord {
  delta::UncertaintyReport report;
  Eigen::VectorXd probs;
  int predicted_class = 0;
  int true_class = 0;
};

void write_report_batch(const std::filesystem::path& path,
                        const std::vector<PredictionRecord>& records);
std::vector<PredictionRecord> read_report_batch(
    const std::filesystem::path& path);

void write_ranking(const std::filesystem::path& path,
                   const std::vector<std::int64_t>& ids,
                   const std::vector<PredictionRecord>& records);

}  // namespace duq::io
