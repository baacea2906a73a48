#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdint>
#include <filesystem>
#include <fstream>

#include "duq/cli.hpp"
#include "duq/checks.hpp"
#include "duq/io.hpp"
#include "helpers.hpp"

using namespace duq;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  const fs::path dir = fs::temp_directory_path() / ("duq_test_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_be32(std::ofstream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

// two 2x2 images: all zeros labeled 0, all 255 labeled 1
void write_idx_fixture(const fs::path& images, const fs::path& labels) {
  {
    std::ofstream out(images, std::ios::binary);
    write_be32(out, 0x00000803u);
    write_be32(out, 2);
    write_be32(out, 2);
    write_be32(out, 2);
    const unsigned char zeros[4] = {0, 0, 0, 0};
    const unsigned char ones[4] = {255, 255, 255, 255};
    out.write(reinterpret_cast<const char*>(zeros), 4);
    out.write(reinterpret_cast<const char*>(ones), 4);
  }
  std::ofstream out(labels, std::ios::binary);
  write_be32(out, 0x00000801u);
  write_be32(out, 2);
  const unsigned char lab[2] = {0, 1};
  out.write(reinterpret_cast<const char*>(lab), 2);
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

const char* kBlobsConfig = R"({
  "seed": 11,
  "network": { "layer_sizes": [4, 8, 6, 3], "l2_rate": 0.01 },
  "dataset": {
    "train": { "kind": "synthetic_blobs", "classes": 3, "dim": 4, "n": 120,
               "separation": 2.5, "noise_sigma": 1.0 },
    "test":  { "kind": "synthetic_blobs", "classes": 3, "dim": 4, "n": 45,
               "separation": 2.5, "noise_sigma": 1.0 }
  },
  "training": { "batch_size": 40, "max_steps": 1200,
                "schedule": [[0, 1e-2], [900, 1e-3]], "log_every": 200 },
  "spectral": { "k": 12, "block_size": 32 }
})";

}  // namespace

TEST_CASE("crafted idx pair round-trips with normalization and one-hot") {
  const auto dir = temp_dir("idx");
  write_idx_fixture(dir / "img", dir / "lab");

  io::DatasetSource src;
  src.kind = io::SourceKind::idx_pair;
  src.images_path = (dir / "img").string();
  src.labels_path = (dir / "lab").string();
  src.classes = 2;
  src.normalization = io::Normalization::unit_interval;

  const Dataset data = io::ingest(src, 1, 2);
  CHECK(data.size() == 2);
  CHECK(data.input_dim() == 4);
  CHECK(data.inputs.row(0).maxCoeff() == 0.0);
  CHECK(data.inputs.row(1).minCoeff() == 1.0);
  CHECK(data.targets(0, 0) == 1.0);
  CHECK(data.targets(1, 1) == 1.0);
}

TEST_CASE("idx ingestion reports magic mismatch and truncation with offsets") {
  const auto dir = temp_dir("idx_bad");
  write_idx_fixture(dir / "img", dir / "lab");

  io::DatasetSource src;
  src.kind = io::SourceKind::idx_pair;
  src.images_path = (dir / "lab").string();  // wrong magic on purpose
  src.labels_path = (dir / "lab").string();
  src.classes = 2;
  CHECK_THROWS_WITH_AS(io::ingest(src, 1, 2),
                       doctest::Contains("magic mismatch"), io::ConfigError);

  // truncate the image payload
  src.images_path = (dir / "img").string();
  fs::resize_file(dir / "img", 18);
  CHECK_THROWS_WITH_AS(io::ingest(src, 1, 2),
                       doctest::Contains("truncated file at byte"),
                       io::ConfigError);

  // out-of-range label
  write_idx_fixture(dir / "img", dir / "lab");
  {
    std::fstream f(dir / "lab", std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(9);
    const char big = 7;
    f.write(&big, 1);
  }
  CHECK_THROWS_WITH_AS(io::ingest(src, 1, 2),
                       doctest::Contains("label out of range"),
                       io::ConfigError);
}

TEST_CASE("csv ingestion: three rows round-trip, label column anywhere") {
  const auto dir = temp_dir("csv");
  {
    std::ofstream out(dir / "data.csv");
    out << "f0,label,f1\n1.5,0,2.5\n-1.0,1,0.25\n3.0,2,-4.5\n";
  }
  io::DatasetSource src;
  src.kind = io::SourceKind::csv;
  src.csv_path = (dir / "data.csv").string();
  src.classes = 3;
  const Dataset data = io::ingest(src, 1, 2);
  CHECK(data.size() == 3);
  CHECK(data.input_dim() == 2);
  CHECK(data.inputs(1, 1) == 0.25);
  CHECK(data.targets(2, 2) == 1.0);

  std::ofstream(dir / "data.csv") << "f0,f1\n1,2\n";
  CHECK_THROWS_WITH_AS(io::ingest(src, 1, 2), doctest::Contains("label"),
                       io::ConfigError);
}

TEST_CASE("subsampling is deterministic and order-preserving") {
  nn::NetworkConfig net;
  net.layer_sizes = {3, 2};
  const Dataset data = testing::random_dataset(net, 500, 41);
  const Dataset a = io::subsample(data, 60, 99);
  const Dataset b = io::subsample(data, 60, 99);
  CHECK((a.inputs - b.inputs).cwiseAbs().maxCoeff() == 0.0);
  const Dataset c = io::subsample(data, 60, 100);
  CHECK((a.inputs - c.inputs).cwiseAbs().maxCoeff() != 0.0);
}

TEST_CASE("checkpoint container round-trips bit-exactly") {
  const auto dir = temp_dir("ckpt");
  io::Checkpoint c;
  c.network.layer_sizes = {4, 6, 3};
  c.network.l2_rate = 0.015;
  c.seed = 909;
  c.params = nn::init_params(c.network, 909);

  io::write_checkpoint(dir / "a.bin", c);
  io::write_checkpoint(dir / "b.bin", c);
  CHECK(file_bytes(dir / "a.bin") == file_bytes(dir / "b.bin"));

  const io::Checkpoint back = io::read_checkpoint(dir / "a.bin");
  CHECK(back.network.layer_sizes == c.network.layer_sizes);
  CHECK(back.network.l2_rate == c.network.l2_rate);
  CHECK(back.seed == c.seed);
  CHECK((back.params - c.params).cwiseAbs().maxCoeff() == 0.0);

  std::ofstream(dir / "junk.bin", std::ios::binary) << "not a container";
  CHECK_THROWS_WITH_AS(io::read_checkpoint(dir / "junk.bin"),
                       doctest::Contains("magic mismatch"), io::ConfigError);
}

TEST_CASE("bundle container round-trips and validates after corruption") {
  const auto dir = temp_dir("bundle");
  const auto& fx = [] {
    static const checks::Fixture f = checks::make_tiny_fixture();
    return f;
  }();
  const auto bundle =
      spectral::opg_topk(fx.network, fx.omega_hat, fx.train, 6, 50);
  io::write_bundle(dir / "b.bin", bundle);
  const auto back = io::read_bundle(dir / "b.bin");
  back.validate();
  CHECK((back.q - bundle.q).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.eigenvalues - bundle.eigenvalues).cwiseAbs().maxCoeff() == 0.0);
  CHECK(back.lambda == bundle.lambda);
  CHECK(back.n_examples == bundle.n_examples);

  // overwrite one eigenvector entry with a value that breaks the basis
  {
    std::fstream f(dir / "b.bin",
                   std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(-8, std::ios::end);
    const double garbage = 0.75;
    f.write(reinterpret_cast<const char*>(&garbage), 8);
  }
  const auto bad = io::read_bundle(dir / "b.bin");
  CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("orthonormal"),
                       std::runtime_error);
}

TEST_CASE("run config: strict keys and value validation") {
  const auto dir = temp_dir("cfg");
  std::ofstream(dir / "run.json") << kBlobsConfig;
  const auto cfg = cli::load_run_config(dir / "run.json");
  CHECK(cfg.network.layer_sizes == std::vector<int>{4, 8, 6, 3});
  CHECK(cfg.spectral.k == 12);
  CHECK(cfg.training.schedule.size() == 2);

  std::ofstream(dir / "bad.json")
      << R"({ "seed": 1, "networks": {}, "dataset": {} })";
  CHECK_THROWS_WITH_AS(cli::load_run_config(dir / "bad.json"),
                       doctest::Contains("unknown key"), io::ConfigError);

  std::ofstream(dir / "incomplete.json")
      << R"({ "seed": 1, "network": {}, "dataset": {} })";
  CHECK_THROWS_AS(cli::load_run_config(dir / "incomplete.json"),
                  io::ConfigError);

  std::ofstream(dir / "syntax.json") << "{ not json";
  CHECK_THROWS_AS(cli::load_run_config(dir / "syntax.json"), io::ConfigError);

  CHECK_THROWS_WITH_AS(cli::load_run_config(dir / "missing.json"),
                       doctest::Contains("cannot open"), io::ConfigError);
}

TEST_CASE("pipeline commands produce deterministic artifacts end to end") {
  const auto dir = temp_dir("pipeline");
  const auto config_path = dir / "run.json";
  std::ofstream(config_path) << kBlobsConfig;
  const auto cfg = cli::load_run_config(config_path);

  const auto run_all = [&](const fs::path& out) {
    REQUIRE(cli::cmd_train(cfg, out) == 0);
    REQUIRE(cli::cmd_spectrum(cfg, out, delta::EstimatorKind::hessian, {}) == 0);
    REQUIRE(cli::cmd_spectrum(cfg, out, delta::EstimatorKind::opg, {}) == 0);
    for (auto kind : {delta::EstimatorKind::hessian, delta::EstimatorKind::opg,
                      delta::EstimatorKind::sandwich})
      REQUIRE(cli::cmd_uncertainty(cfg, out, kind, cli::Split::test) == 0);
    REQUIRE(cli::cmd_rank(cfg, out, delta::EstimatorKind::hessian,
                          cli::Split::test, delta::RankOrder::desc, 10) == 0);
    REQUIRE(cli::cmd_compare(cfg, out) == 0);
  };
  run_all(dir / "a");
  run_all(dir / "b");

  for (const auto* name :
       {"checkpoint.bin", "training_log.tsv", "bundle_hessian.bin",
        "bundle_opg.bin", "spectrum_hessian.tsv", "spectrum_opg.json",
        "reports_hessian_test.tsv", "reports_opg_test.tsv",
        "reports_sandwich_test.tsv", "ranking_hessian_test.tsv",
        "compare.tsv", "train_report.json"}) {
    CAPTURE(name);
    CHECK(file_bytes(dir / "a" / name) == file_bytes(dir / "b" / name));
  }

  // reports survive the text round trip
  const auto records = io::read_report_batch(dir / "a/reports_opg_test.tsv");
  CHECK(records.size() == 45);
  CHECK(records.front().report.kind == delta::EstimatorKind::opg);
  CHECK(records.front().report.variance.size() == 3);
  for (const auto& rec : records)
    CHECK(rec.report.variance.minCoeff() >= 0.0);
}

TEST_CASE("cli dispatcher maps failures to exit statuses") {
  const auto dir = temp_dir("cli_status");
  const auto config_path = (dir / "run.json").string();
  std::ofstream(dir / "run.json") << kBlobsConfig;
  const auto out = (dir / "out").string();

  const auto run = [](std::vector<std::string> args) {
    std::vector<char*> argv;
    args.insert(args.begin(), "duq");
    for (auto& a : args) argv.push_back(a.data());
    return cli::run_main(static_cast<int>(argv.size()), argv.data());
  };

  // missing dataset path -> user error, names the path
  CHECK(run({"train", "--config", (dir / "absent.json").string()}) == 2);
  // uncertainty before spectrum: missing bundle file
  CHECK(run({"train", "--config", config_path, "--out", out}) == 0);
  CHECK(run({"uncertainty", "--config", config_path, "--out", out}) == 2);
  CHECK(run({"spectrum", "--config", config_path, "--out", out, "--kind",
             "opg"}) == 0);
  CHECK(run({"uncertainty", "--config", config_path, "--out", out, "--kind",
             "opg"}) == 0);
  CHECK(run({"rank", "--config", config_path, "--out", out, "--kind", "opg",
             "--top", "5"}) == 0);
  CHECK(run({"nonsense"}) == 2);
}

TEST_CASE("oracle-check validates artifacts and fails on a corrupt bundle") {
  const auto dir = temp_dir("oracle_cmd");
  const auto& fx = [] {
    static const checks::Fixture f = checks::make_tiny_fixture();
    return f;
  }();
  const auto bundle =
      spectral::opg_topk(fx.network, fx.omega_hat, fx.train, 4, 60);
  io::write_bundle(dir / "bundle_opg.bin", bundle);
  {
    std::fstream f(dir / "bundle_opg.bin",
                   std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(-8, std::ios::end);
    const double garbage = 0.9;
    f.write(reinterpret_cast<const char*>(&garbage), 8);
  }
  const auto run = [](std::vector<std::string> args) {
    std::vector<char*> argv;
    args.insert(args.begin(), "duq");
    for (auto& a : args) argv.push_back(a.data());
    return cli::run_main(static_cast<int>(argv.size()), argv.data());
  };
  CHECK(run({"oracle-check", "--out", dir.string()}) == 1);
}
