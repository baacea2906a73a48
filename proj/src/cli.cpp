#include "duq/cli.hpp"

#include <fstream>
#include <iostream>
#include <set>

#include <CLI11.hpp>
#include <json.hpp>

#include "duq/checks.hpp"
#include "duq/oracle.hpp"
#include "duq/rng.hpp"
#include "duq/spectral.hpp"

namespace duq::cli {

using nlohmann::json;

namespace {

void check_keys(const json& obj, const std::string& where,
                const std::set<std::string>& allowed) {
  for (const auto& [key, value] : obj.items())
    if (!allowed.count(key))
      throw io::ConfigError("config: unknown key '" + key + "' in " + where);
}

io::DatasetSource parse_source(const json& obj, const std::string& where) {
  check_keys(obj, where,
             {"kind", "classes", "subsample", "normalization", "images",
              "labels", "csv", "dim", "n", "separation", "noise_sigma"});
  io::DatasetSource s;
  const auto must_exist = [&](const std::string& path) {
    if (!std::filesystem::exists(path))
      throw io::ConfigError("config: missing dataset path " + path + " (" +
                            where + ")");
    return path;
  };
  const std::string kind = obj.at("kind").get<std::string>();
  if (kind == "idx_pair") {
    s.kind = io::SourceKind::idx_pair;
    s.images_path = must_exist(obj.at("images").get<std::string>());
    s.labels_path = must_exist(obj.at("labels").get<std::string>());
  } else if (kind == "csv") {
    s.kind = io::SourceKind::csv;
    s.csv_path = must_exist(obj.at("csv").get<std::string>());
  } else if (kind == "synthetic_blobs") {
    s.kind = io::SourceKind::synthetic_blobs;
    s.dim = obj.at("dim").get<int>();
    s.n = obj.at("n").get<Eigen::Index>();
    s.separation = obj.value("separation", 3.0);
    s.noise_sigma = obj.value("noise_sigma", 1.0);
  } else {
    throw io::ConfigError("config: unknown dataset kind '" + kind + "'");
  }
  s.classes = obj.at("classes").get<int>();
  s.subsample = obj.value("subsample", Eigen::Index{0});
  const std::string norm = obj.value("normalization", std::string("none"));
  if (norm == "none")
    s.normalization = io::Normalization::none;
  else if (norm == "unit_interval")
    s.normalization = io::Normalization::unit_interval;
  else
    throw io::ConfigError("config: unknown normalization '" + norm + "'");
  return s;
}

RunConfig parse_run_config(const json& root);

}  // namespace

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw io::ConfigError("cannot open config: " + path.string());
  json root;
  try {
    root = json::parse(in);
  } catch (const json::exception& e) {
    throw io::ConfigError("config parse error in " + path.string() + ": " +
                          e.what());
  }
  try {
    return parse_run_config(root);
  } catch (const json::exception& e) {
    throw io::ConfigError("config error in " + path.string() + ": " + e.what());
  }
}

namespace {

RunConfig parse_run_config(const json& root) {
  check_keys(root, "top level",
             {"seed", "network", "dataset", "training", "spectral"});
  RunConfig cfg;
  cfg.seed = root.value("seed", std::uint64_t{0});

  const json& net = root.at("network");
  check_keys(net, "network", {"layer_sizes", "l2_rate"});
  cfg.network.layer_sizes = net.at("layer_sizes").get<std::vector<int>>();
  cfg.network.l2_rate = net.at("l2_rate").get<double>();
  cfg.network.validate();

  const json& ds = root.at("dataset");
  check_keys(ds, "dataset", {"train", "test"});
  cfg.train_source = parse_source(ds.at("train"), "dataset.train");
  cfg.test_source = parse_source(ds.at("test"), "dataset.test");

  if (root.contains("training")) {
    const json& tr = root.at("training");
    check_keys(tr, "training",
               {"batch_size", "max_steps", "schedule", "beta1", "beta2",
                "epsilon", "shuffle", "log_every"});
    cfg.training.batch_size = tr.value("batch_size", cfg.training.batch_size);
    cfg.training.max_steps = tr.value("max_steps", cfg.training.max_steps);
    if (tr.contains("schedule")) {
      cfg.training.schedule.clear();
      for (const auto& pair : tr.at("schedule"))
        cfg.training.schedule.emplace_back(pair.at(0).get<int>(),
                                           pair.at(1).get<double>());
    }
    cfg.training.beta1 = tr.value("beta1", cfg.training.beta1);
    cfg.training.beta2 = tr.value("beta2", cfg.training.beta2);
    cfg.training.epsilon_hat = tr.value("epsilon", cfg.training.epsilon_hat);
    cfg.training.shuffle = tr.value("shuffle", cfg.training.shuffle);
    cfg.training.log_every = tr.value("log_every", cfg.training.log_every);
    cfg.training.validate();
  }

  if (root.contains("spectral")) {
    const json& sp = root.at("spectral");
    check_keys(sp, "spectral",
               {"k", "block_size", "lanczos_tol", "lanczos_max_iters",
                "check_every"});
    cfg.spectral.k = sp.value("k", cfg.spectral.k);
    cfg.spectral.block_size = sp.value("block_size", cfg.spectral.block_size);
    cfg.spectral.lanczos_tol =
        sp.value("lanczos_tol", cfg.spectral.lanczos_tol);
    cfg.spectral.lanczos_max_iters =
        sp.value("lanczos_max_iters", cfg.spectral.lanczos_max_iters);
    cfg.spectral.check_every = sp.value("check_every", cfg.spectral.check_every);
  }
  return cfg;
}

}  // namespace

Dataset load_split(const RunConfig& cfg, Split split) {
  const Rng base(cfg.seed);
  const io::DatasetSource& src =
      split == Split::train ? cfg.train_source : cfg.test_source;
  const std::uint64_t means_seed = base.fork(100).seed();
  const std::uint64_t split_seed =
      base.fork(split == Split::train ? 101 : 102).seed();
  Dataset data = io::ingest(src, means_seed, split_seed);
  if (data.input_dim() != cfg.network.input_dim())
    throw io::ConfigError("config: dataset feature width " +
                          std::to_string(data.input_dim()) +
                          " != network input " +
                          std::to_string(cfg.network.input_dim()));
  if (data.num_classes() != cfg.network.output_dim())
    throw io::ConfigError("config: dataset class count != network output");
  return data;
}

namespace {

const char* split_name(Split s) { return s == Split::train ? "train" : "test"; }

std::filesystem::path ensure_dir(const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  return dir;
}

io::Checkpoint load_checkpoint(const std::filesystem::path& out_dir) {
  return io::read_checkpoint(out_dir / "checkpoint.bin");
}

spectral::SpectralBundle load_bundle(const std::filesystem::path& out_dir,
                                     spectral::BundleKind kind) {
  auto b = io::read_bundle(out_dir / bundle_file_name(kind));
  b.validate();
  return b;
}

}  // namespace

std::string bundle_file_name(spectral::BundleKind kind) {
  return kind == spectral::BundleKind::hessian ? "bundle_hessian.bin"
                                               : "bundle_opg.bin";
}

std::string report_file_name(delta::EstimatorKind kind, Split split) {
  return std::string("reports_") + delta::to_string(kind) + "_" +
         split_name(split) + ".tsv";
}

int cmd_train(const RunConfig& cfg, const std::filesystem::path& out_dir) {
  ensure_dir(out_dir);
  const Dataset train = load_split(cfg, Split::train);
  const Dataset test = load_split(cfg, Split::test);

  trainer::TrainConfig tcfg = cfg.training;
  tcfg.seed = Rng(cfg.seed).fork(7).seed();
  const trainer::TrainReport report =
      trainer::train(cfg.network, train, tcfg, &test);

  io::Checkpoint ckpt{cfg.network, tcfg.seed, report.omega_hat};
  io::write_checkpoint(out_dir / "checkpoint.bin", ckpt);
  io::write_training_log(out_dir / "training_log.tsv", report.log);

  std::ofstream summary(out_dir / "train_report.json");
  summary << "{\n"
          << "  \"steps_run\": " << report.steps_run << ",\n"
          << "  \"final_cost\": " << io::format_double(report.final_cost)
          << ",\n"
          << "  \"final_grad_norm\": "
          << io::format_double(report.final_grad_norm) << ",\n"
          << "  \"train_accuracy\": "
          << io::format_double(report.train_accuracy) << ",\n"
          << "  \"test_accuracy\": "
          << io::format_double(report.test_accuracy.value_or(-1.0)) << "\n"
          << "}\n";
  std::cout << "trained " << report.steps_run << " steps, cost "
            << report.final_cost << ", |grad| " << report.final_grad_norm
            << ", train acc " << report.train_accuracy << ", test acc "
            << report.test_accuracy.value_or(-1.0) << "\n";
  return 0;
}

int cmd_spectrum(const RunConfig& cfg, const std::filesystem::path& out_dir,
                 delta::EstimatorKind kind, std::optional<int> k_override) {
  if (kind == delta::EstimatorKind::sandwich)
    throw io::ConfigError("spectrum: compute hessian and opg bundles; the "
                          "sandwich combines them at prediction time");
  ensure_dir(out_dir);
  const io::Checkpoint ckpt = load_checkpoint(out_dir);
  const Dataset train = load_split(cfg, Split::train);
  const int k = k_override.value_or(cfg.spectral.k);

  spectral::SpectralBundle bundle;
  if (kind == delta::EstimatorKind::hessian) {
    spectral::LanczosConfig lcfg;
    lcfg.k = k;
    lcfg.tol = cfg.spectral.lanczos_tol;
    lcfg.max_iters = cfg.spectral.lanczos_max_iters;
    lcfg.check_every = cfg.spectral.check_every;
    lcfg.seed = Rng(cfg.seed).fork(11).seed();
    bundle = spectral::hessian_topk(ckpt.network, ckpt.params, train, k, lcfg);
  } else {
    bundle = spectral::opg_topk(ckpt.network, ckpt.params, train, k,
                                cfg.spectral.block_size,
                                Rng(cfg.seed).fork(12).seed());
  }
  bundle.validate();

  const auto bkind = kind == delta::EstimatorKind::hessian
                         ? spectral::BundleKind::hessian
                         : spectral::BundleKind::opg;
  io::write_bundle(out_dir / bundle_file_name(bkind), bundle);
  const auto summary = spectral::spectrum_report(bundle);
  const std::string stem =
      std::string("spectrum_") + delta::to_string(kind);
  io::write_spectrum(out_dir / (stem + ".tsv"), out_dir / (stem + ".json"),
                     summary);
  std::cout << delta::to_string(kind) << " bundle: k=" << bundle.k
            << " lambda_k=" << bundle.lambda_k
            << " lambda_tilde=" << bundle.lambda_tilde
            << " eps_lambda=" << bundle.eps_lambda
            << " iterations=" << bundle.iterations << "\n";
  return 0;
}

int cmd_uncertainty(const RunConfig& cfg, const std::filesystem::path& out_dir,
                    delta::EstimatorKind kind, Split split) {
  ensure_dir(out_dir);
  const io::Checkpoint ckpt = load_checkpoint(out_dir);
  const Dataset data = load_split(cfg, split);
  const Eigen::Index p = nn::param_count(ckpt.network);

  spectral::SpectralBundle hb, gb;
  delta::SandwichCross cross;
  if (kind != delta::EstimatorKind::opg) {
    hb = load_bundle(out_dir, spectral::BundleKind::hessian);
    if (hb.dim() != p)
      throw io::ConfigError("uncertainty: bundle dim != checkpoint params");
  }
  if (kind != delta::EstimatorKind::hessian) {
    gb = load_bundle(out_dir, spectral::BundleKind::opg);
    if (gb.dim() != p)
      throw io::ConfigError("uncertainty: bundle dim != checkpoint params");
  }
  if (kind == delta::EstimatorKind::sandwich)
    cross = delta::make_sandwich_cross(hb, gb);

  const Eigen::MatrixXd probs =
      nn::forward_batch(ckpt.network, ckpt.params, data.inputs);

  std::vector<io::PredictionRecord> records;
  records.reserve(data.size());
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    const RowMatrixXd f =
        nn::sensitivity(ckpt.network, ckpt.params, data.inputs.row(i).transpose());
    io::PredictionRecord rec;
    switch (kind) {
      case delta::EstimatorKind::hessian:
        rec.report = delta::predict_uncertainty(hb, f, i);
        break;
      case delta::EstimatorKind::opg:
        rec.report = delta::predict_uncertainty(gb, f, i);
        break;
      case delta::EstimatorKind::sandwich:
        rec.report = delta::predict_uncertainty_sandwich(hb, gb, cross, f, i);
        break;
    }
    rec.probs = probs.row(i).transpose();
    int pred = 0, truth = 0;
    for (int m = 1; m < data.num_classes(); ++m) {
      if (probs(i, m) > probs(i, pred)) pred = m;
      if (data.targets(i, m) > data.targets(i, truth)) truth = m;
    }
    rec.predicted_class = pred;
    rec.true_class = truth;
    records.push_back(std::move(rec));
  }

  io::write_report_batch(out_dir / report_file_name(kind, split), records);

  std::vector<delta::UncertaintyReport> reports;
  std::vector<int> pred, truth;
  for (const auto& rec : records) {
    reports.push_back(rec.report);
    pred.push_back(rec.predicted_class);
    truth.push_back(rec.true_class);
  }
  const auto stats = delta::fp_tp_split_stats(reports, pred, truth);
  std::ofstream sf(out_dir / (std::string("stats_") + delta::to_string(kind) +
                              "_" + split_name(split) + ".json"));
  sf << "{\n"
     << "  \"tp_count\": " << stats.tp_count << ",\n"
     << "  \"fp_count\": " << stats.fp_count << ",\n"
     << "  \"tp_mean_score\": "
     << (stats.tp_mean_score ? io::format_double(*stats.tp_mean_score)
                             : "null")
     << ",\n"
     << "  \"fp_mean_score\": "
     << (stats.fp_mean_score ? io::format_double(*stats.fp_mean_score)
                             : "null")
     << "\n}\n";
  std::cout << delta::to_string(kind) << " reports over " << records.size()
            << " " << split_name(split) << " inputs written\n";
  return 0;
}

int cmd_rank(const RunConfig& cfg, const std::filesystem::path& out_dir,
             delta::EstimatorKind kind, Split split, delta::RankOrder order,
             std::size_t top) {
  (void)cfg;
  const auto records =
      io::read_report_batch(out_dir / report_file_name(kind, split));
  std::vector<delta::UncertaintyReport> reports;
  for (const auto& rec : records) reports.push_back(rec.report);
  const auto ids = delta::rank_by_score(reports, order, top);
  io::write_ranking(out_dir / (std::string("ranking_") +
                               delta::to_string(kind) + "_" +
                               split_name(split) + ".tsv"),
                    ids, records);
  std::cout << "ranked " << ids.size() << " inputs\n";
  return 0;
}

int cmd_compare(const RunConfig& cfg, const std::filesystem::path& out_dir) {
  (void)cfg;
  const std::array<std::pair<delta::EstimatorKind, delta::EstimatorKind>, 3>
      pairs = {{{delta::EstimatorKind::hessian, delta::EstimatorKind::opg},
                {delta::EstimatorKind::hessian, delta::EstimatorKind::sandwich},
                {delta::EstimatorKind::opg, delta::EstimatorKind::sandwich}}};

  std::ofstream out(out_dir / "compare.tsv");
  if (!out) throw io::ConfigError("cannot write compare.tsv");
  out << "split\tx_kind\ty_kind\tr2\talpha\tbeta\tn_points\n";
  bool wrote_any = false;
  for (Split split : {Split::train, Split::test}) {
    std::array<std::vector<io::PredictionRecord>, 3> batches;
    bool have_all = true;
    for (int k = 0; k < 3; ++k) {
      const auto path =
          out_dir /
          report_file_name(static_cast<delta::EstimatorKind>(k), split);
      if (!std::filesystem::exists(path)) {
        have_all = false;
        break;
      }
      batches[k] = io::read_report_batch(path);
    }
    if (!have_all) continue;
    for (const auto& [ka, kb] : pairs) {
      std::vector<delta::UncertaintyReport> a, b;
      for (const auto& rec : batches[static_cast<int>(ka)])
        a.push_back(rec.report);
      for (const auto& rec : batches[static_cast<int>(kb)])
        b.push_back(rec.report);
      const auto stats = delta::compare_estimators(a, b);
      out << split_name(split) << '\t' << delta::to_string(ka) << '\t'
          << delta::to_string(kb) << '\t' << io::format_double(stats.r2)
          << '\t' << io::format_double(stats.alpha) << '\t'
          << io::format_double(stats.beta) << '\t' << stats.n_points << '\n';
      std::cout << split_name(split) << " " << delta::to_string(ka) << " vs "
                << delta::to_string(kb) << ": R2=" << stats.r2
                << " alpha=" << stats.alpha << " beta=" << stats.beta << "\n";
      wrote_any = true;
    }
  }
  if (!wrote_any)
    throw io::ConfigError(
        "compare: no split has all three report batches in " +
        out_dir.string());
  return 0;
}

int cmd_oracle_check(std::optional<std::filesystem::path> artifact_dir,
                     std::uint64_t seed) {
  bool all_pass = true;

  if (artifact_dir) {
    // validate whatever artifacts a previous run left behind
    const auto ckpt_path = *artifact_dir / "checkpoint.bin";
    if (std::filesystem::exists(ckpt_path)) {
      io::read_checkpoint(ckpt_path);
      std::cout << "pass  checkpoint readable\n";
    }
    for (auto kind :
         {spectral::BundleKind::hessian, spectral::BundleKind::opg}) {
      const auto path = *artifact_dir / bundle_file_name(kind);
      if (!std::filesystem::exists(path)) continue;
      try {
        io::read_bundle(path).validate();
        std::cout << "pass  bundle valid: " << path.filename().string() << "\n";
      } catch (const std::exception& e) {
        std::cout << "FAIL  " << path.filename().string() << ": " << e.what()
                  << "\n";
        all_pass = false;
      }
    }
  }

  for (const auto& r : checks::run_oracle_suite(seed)) {
    std::cout << (r.pass ? "pass  " : "FAIL  ") << r.name;
    if (!r.detail.empty()) std::cout << " (" << r.detail << ")";
    std::cout << "\n";
    if (!r.pass) all_pass = false;
  }
  if (!all_pass) throw std::runtime_error("oracle check suite failed");
  return 0;
}

int run_main(int argc, char** argv) {
  CLI::App app{"Delta-method epistemic uncertainty for dense classifiers"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "out", kind_str = "hessian",
              split_str = "test", order_str = "desc";
  std::optional<int> k_override;
  std::size_t top = 0;
  std::uint64_t check_seed = 7;

  const auto add_common = [&](CLI::App* sub, bool needs_config) {
    auto* opt = sub->add_option("--config", config_path, "run configuration");
    if (needs_config) opt->required();
    sub->add_option("--out", out_dir, "artifact directory");
  };

  auto* train = app.add_subcommand("train", "fit the classifier");
  add_common(train, true);
  auto* spectrum =
      app.add_subcommand("spectrum", "compute a top-K curvature bundle");
  add_common(spectrum, true);
  spectrum->add_option("--kind", kind_str, "hessian|opg");
  spectrum->add_option("--k", k_override, "eigenpair count");
  auto* uncertainty =
      app.add_subcommand("uncertainty", "per-input uncertainty reports");
  add_common(uncertainty, true);
  uncertainty->add_option("--kind", kind_str, "hessian|opg|sandwich");
  uncertainty->add_option("--split", split_str, "train|test");
  auto* rank = app.add_subcommand("rank", "order inputs by score");
  add_common(rank, true);
  rank->add_option("--kind", kind_str, "hessian|opg|sandwich");
  rank->add_option("--split", split_str, "train|test");
  rank->add_option("--order", order_str, "asc|desc");
  rank->add_option("--top", top, "keep the first N (0 = all)");
  auto* compare = app.add_subcommand("compare", "pairwise estimator regressions");
  add_common(compare, true);
  auto* oracle_check =
      app.add_subcommand("oracle-check", "dense brute-force cross-checks");
  add_common(oracle_check, false);
  oracle_check->add_option("--seed", check_seed, "fixture seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const auto parse_kind = [&]() {
      if (kind_str == "hessian") return delta::EstimatorKind::hessian;
      if (kind_str == "opg") return delta::EstimatorKind::opg;
      if (kind_str == "sandwich") return delta::EstimatorKind::sandwich;
      throw io::ConfigError("unknown estimator kind '" + kind_str + "'");
    };
    const auto parse_split = [&]() {
      if (split_str == "train") return Split::train;
      if (split_str == "test") return Split::test;
      throw io::ConfigError("unknown split '" + split_str + "'");
    };

    if (oracle_check->parsed()) {
      std::optional<std::filesystem::path> dir;
      if (oracle_check->count("--out")) dir = out_dir;
      return cmd_oracle_check(dir, check_seed);
    }
    const RunConfig cfg = load_run_config(config_path);
    if (train->parsed()) return cmd_train(cfg, out_dir);
    if (spectrum->parsed())
      return cmd_spectrum(cfg, out_dir, parse_kind(), k_override);
    if (uncertainty->parsed())
      return cmd_uncertainty(cfg, out_dir, parse_kind(), parse_split());
    if (rank->parsed()) {
      const auto order = order_str == "asc" ? delta::RankOrder::asc
                                            : delta::RankOrder::desc;
      return cmd_rank(cfg, out_dir, parse_kind(), parse_split(), order, top);
    }
    if (compare->parsed()) return cmd_compare(cfg, out_dir);
    return 2;
  } catch (const io::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "invariant failure: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace duq::cli
