#include "duq/io.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "duq/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "containers are written little-endian");

namespace duq::io {

namespace {

constexpr char kCheckpointMagic[8] = {'D', 'U', 'Q', 'C', 'K', 'P', 'T', '1'};
constexpr char kBundleMagic[8] = {'D', 'U', 'Q', 'B', 'N', 'D', 'L', '1'};
constexpr std::uint32_t kContainerVersion = 1;

std::ofstream open_out(const std::filesystem::path& path, bool binary) {
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) throw ConfigError("cannot open for writing: " + path.string());
  return out;
}

std::ifstream open_in(const std::filesystem::path& path, bool binary) {
  std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
  if (!in) throw ConfigError("cannot open: " + path.string());
  return in;
}

template <typename T>
void put(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& in, const std::filesystem::path& path) {
  T v;
  const auto offset = in.tellg();
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in)
    throw ConfigError("truncated file at byte " +
                      std::to_string(static_cast<long long>(offset)) + ": " +
                      path.string());
  return v;
}

void put_doubles(std::ofstream& out, const double* data, std::int64_t count) {
  out.write(reinterpret_cast<const char*>(data),
            static_cast<std::streamsize>(count * sizeof(double)));
}

void get_doubles(std::ifstream& in, const std::filesystem::path& path,
                 double* data, std::int64_t count) {
  const auto offset = in.tellg();
  in.read(reinterpret_cast<char*>(data),
          static_cast<std::streamsize>(count * sizeof(double)));
  if (!in)
    throw ConfigError("truncated file at byte " +
                      std::to_string(static_cast<long long>(offset)) + ": " +
                      path.string());
}

void expect_magic(std::ifstream& in, const std::filesystem::path& path,
                  const char (&magic)[8]) {
  char got[8];
  in.read(got, 8);
  if (!in || std::memcmp(got, magic, 8) != 0)
    throw ConfigError("magic mismatch at byte 0: " + path.string());
  const auto version = get<std::uint32_t>(in, path);
  if (version != kContainerVersion)
    throw ConfigError("unsupported container version in " + path.string());
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  c.network.validate();
  auto out = open_out(path, true);
  out.write(kCheckpointMagic, 8);
  put(out, kContainerVersion);
  put(out, static_cast<std::uint32_t>(c.network.layer_sizes.size()));
  for (int t : c.network.layer_sizes) put(out, static_cast<std::uint32_t>(t));
  put(out, c.network.l2_rate);
  put(out, c.seed);
  put(out, static_cast<std::uint64_t>(c.params.size()));
  put_doubles(out, c.params.data(), c.params.size());
  if (!out) throw ConfigError("write failed: " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  auto in = open_in(path, true);
  expect_magic(in, path, kCheckpointMagic);
  Checkpoint c;
  const auto layers = get<std::uint32_t>(in, path);
  if (layers < 2 || layers > 1024)
    throw ConfigError("checkpoint: implausible layer count in " + path.string());
  c.network.layer_sizes.resize(layers);
  for (auto& t : c.network.layer_sizes)
    t = static_cast<int>(get<std::uint32_t>(in, path));
  c.network.l2_rate = get<double>(in, path);
  c.seed = get<std::uint64_t>(in, path);
  const auto p = get<std::uint64_t>(in, path);
  if (p != static_cast<std::uint64_t>(nn::param_count(c.network)))
    throw ConfigError("checkpoint: parameter count disagrees with layout in " +
                      path.string());
  c.params.resize(static_cast<Eigen::Index>(p));
  get_doubles(in, path, c.params.data(), c.params.size());
  return c;
}

void write_bundle(const std::filesystem::path& path,
                  const spectral::SpectralBundle& b) {
  auto out = open_out(path, true);
  out.write(kBundleMagic, 8);
  put(out, kContainerVersion);
  put(out, static_cast<std::uint32_t>(b.kind));
  put(out, static_cast<std::uint64_t>(b.dim()));
  put(out, static_cast<std::uint32_t>(b.k));
  put(out, static_cast<std::uint64_t>(b.n_examples));
  put(out, b.lambda);
  put(out, b.lambda_k);
  put(out, b.lambda_tilde);
  put(out, b.eps_lambda);
  put(out, b.flags);
  put(out, static_cast<std::uint32_t>(b.iterations));
  put(out, static_cast<std::uint32_t>(b.block_size));
  put_doubles(out, b.eigenvalues.data(), b.eigenvalues.size());
  put_doubles(out, b.q.data(), static_cast<std::int64_t>(b.q.size()));
  if (!out) throw ConfigError("write failed: " + path.string());
}

spectral::SpectralBundle read_bundle(const std::filesystem::path& path) {
  auto in = open_in(path, true);
  expect_magic(in, path, kBundleMagic);
  spectral::SpectralBundle b;
  const auto kind = get<std::uint32_t>(in, path);
  if (kind > 1) throw ConfigError("bundle: unknown kind in " + path.string());
  b.kind = static_cast<spectral::BundleKind>(kind);
  const auto p = get<std::uint64_t>(in, path);
  const auto k = get<std::uint32_t>(in, path);
  if (p == 0 || k == 0 || k > p)
    throw ConfigError("bundle: implausible dimensions in " + path.string());
  b.k = static_cast<int>(k);
  b.n_examples = static_cast<std::int64_t>(get<std::uint64_t>(in, path));
  b.lambda = get<double>(in, path);
  b.lambda_k = get<double>(in, path);
  b.lambda_tilde = get<double>(in, path);
  b.eps_lambda = get<double>(in, path);
  b.flags = get<std::uint32_t>(in, path);
  b.iterations = static_cast<int>(get<std::uint32_t>(in, path));
  b.block_size = static_cast<int>(get<std::uint32_t>(in, path));
  b.eigenvalues.resize(k);
  get_doubles(in, path, b.eigenvalues.data(), k);
  b.q.resize(static_cast<Eigen::Index>(p), k);
  get_doubles(in, path, b.q.data(), static_cast<std::int64_t>(b.q.size()));
  return b;
}

// -- datasets ---------------------------------------------------------------

Dataset make_blobs(int classes, int dim, Eigen::Index n, double separation,
                   double noise_sigma, std::uint64_t means_seed,
                   std::uint64_t noise_seed) {
  if (classes < 2 || dim < 1 || n < 1)
    throw ConfigError("blobs: need classes >= 2, dim >= 1, n >= 1");
  Rng means_rng(means_seed);
  Eigen::MatrixXd means(classes, dim);
  for (int c = 0; c < classes; ++c)
    for (int j = 0; j < dim; ++j) means(c, j) = separation * means_rng.normal();

  Rng rng(noise_seed);
  Dataset data;
  data.inputs.resize(n, dim);
  data.targets = Eigen::MatrixXd::Zero(n, classes);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int c = static_cast<int>(i % classes);
    for (int j = 0; j < dim; ++j)
      data.inputs(i, j) = means(c, j) + noise_sigma * rng.normal();
    data.targets(i, c) = 1.0;
  }
  return data;
}

Dataset subsample(const Dataset& data, Eigen::Index count, std::uint64_t seed) {
  if (count < 1 || count > data.size())
    throw ConfigError("subsample: count out of range");
  std::vector<Eigen::Index> idx(data.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  for (Eigen::Index i = 0; i < count; ++i) {
    const Eigen::Index j = i + rng.uniform_index(data.size() - i);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(count);
  std::sort(idx.begin(), idx.end());

  Dataset out;
  out.inputs.resize(count, data.inputs.cols());
  out.targets.resize(count, data.targets.cols());
  for (Eigen::Index i = 0; i < count; ++i) {
    out.inputs.row(i) = data.inputs.row(idx[i]);
    out.targets.row(i) = data.targets.row(idx[i]);
  }
  return out;
}

namespace {

std::uint32_t read_be32(std::ifstream& in, const std::filesystem::path& path) {
  unsigned char b[4];
  const auto offset = in.tellg();
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in)
    throw ConfigError("truncated file at byte " +
                      std::to_string(static_cast<long long>(offset)) + ": " +
                      path.string());
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

Dataset ingest_idx(const DatasetSource& source) {
  if (source.classes < 2)
    throw ConfigError("idx source: classes must be given (>= 2)");
  const std::filesystem::path images(source.images_path);
  const std::filesystem::path labels(source.labels_path);

  auto img = open_in(images, true);
  if (const auto magic = read_be32(img, images); magic != 0x00000803u) {
    std::ostringstream msg;
    msg << "magic mismatch at byte 0 in " << images.string() << ": got 0x"
        << std::hex << magic << ", expected 0x803";
    throw ConfigError(msg.str());
  }
  const std::uint32_t n = read_be32(img, images);
  const std::uint32_t rows = read_be32(img, images);
  const std::uint32_t cols = read_be32(img, images);
  const std::int64_t pixels = std::int64_t(rows) * cols;

  auto lab = open_in(labels, true);
  if (const auto magic = read_be32(lab, labels); magic != 0x00000801u) {
    std::ostringstream msg;
    msg << "magic mismatch at byte 0 in " << labels.string() << ": got 0x"
        << std::hex << magic << ", expected 0x801";
    throw ConfigError(msg.str());
  }
  if (read_be32(lab, labels) != n)
    throw ConfigError("idx pair: image and label counts differ");

  Dataset data;
  data.inputs.resize(n, pixels);
  data.targets = Eigen::MatrixXd::Zero(n, source.classes);
  std::vector<unsigned char> buf(pixels);
  const double scale =
      source.normalization == Normalization::unit_interval ? 1.0 / 255.0 : 1.0;
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto offset = img.tellg();
    img.read(reinterpret_cast<char*>(buf.data()), pixels);
    if (!img)
      throw ConfigError("truncated file at byte " +
                        std::to_string(static_cast<long long>(offset)) + ": " +
                        images.string());
    for (std::int64_t j = 0; j < pixels; ++j)
      data.inputs(i, j) = scale * buf[j];

    const auto loffset = lab.tellg();
    unsigned char label;
    lab.read(reinterpret_cast<char*>(&label), 1);
    if (!lab)
      throw ConfigError("truncated file at byte " +
                        std::to_string(static_cast<long long>(loffset)) + ": " +
                        labels.string());
    if (label >= source.classes)
      throw ConfigError("label out of range at byte " +
                        std::to_string(static_cast<long long>(loffset)) + ": " +
                        labels.string());
    data.targets(i, label) = 1.0;
  }
  return data;
}

Dataset ingest_csv(const DatasetSource& source) {
  if (source.classes < 2)
    throw ConfigError("csv source: classes must be given (>= 2)");
  const std::filesystem::path path(source.csv_path);
  auto in = open_in(path, false);

  std::string line;
  if (!std::getline(in, line))
    throw ConfigError("csv: missing header row in " + path.string());
  std::vector<std::string> headers;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) headers.push_back(cell);
  }
  int label_col = -1;
  for (std::size_t i = 0; i < headers.size(); ++i)
    if (headers[i] == "label") label_col = static_cast<int>(i);
  if (label_col < 0)
    throw ConfigError("csv: no column named 'label' in " + path.string());
  const int features = static_cast<int>(headers.size()) - 1;
  if (features < 1) throw ConfigError("csv: no feature columns");

  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> row;
    int col = 0, label = -1;
    while (std::getline(ss, cell, ',')) {
      char* end = nullptr;
      const double v = std::strtod(cell.c_str(), &end);
      if (end == cell.c_str())
        throw ConfigError("csv: non-numeric cell at line " +
                          std::to_string(lineno) + " in " + path.string());
      if (col == label_col)
        label = static_cast<int>(v);
      else
        row.push_back(v);
      ++col;
    }
    if (col != static_cast<int>(headers.size()))
      throw ConfigError("csv: wrong column count at line " +
                        std::to_string(lineno) + " in " + path.string());
    if (label < 0 || label >= source.classes)
      throw ConfigError("csv: label out of range at line " +
                        std::to_string(lineno) + " in " + path.string());
    rows.push_back(std::move(row));
    labels.push_back(label);
  }
  if (rows.empty()) throw ConfigError("csv: no data rows in " + path.string());

  Dataset data;
  data.inputs.resize(static_cast<Eigen::Index>(rows.size()), features);
  data.targets = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows.size()),
                                       source.classes);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (int j = 0; j < features; ++j) data.inputs(i, j) = rows[i][j];
    data.targets(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
  }
  return data;
}

}  // namespace

Dataset ingest(const DatasetSource& source, std::uint64_t means_seed,
               std::uint64_t split_seed) {
  Dataset data;
  switch (source.kind) {
    case SourceKind::idx_pair:
      data = ingest_idx(source);
      break;
    case SourceKind::csv:
      if (source.normalization != Normalization::none)
        throw ConfigError("csv source: normalization must be 'none'");
      data = ingest_csv(source);
      break;
    case SourceKind::synthetic_blobs:
      if (source.normalization != Normalization::none)
        throw ConfigError("blobs source: normalization must be 'none'");
      data = make_blobs(source.classes, source.dim, source.n,
                        source.separation, source.noise_sigma, means_seed,
                        split_seed);
      break;
  }
  if (source.subsample > 0 && source.subsample < data.size())
    data = subsample(data, source.subsample,
                     splitmix64(split_seed ^ 0x5ab5a));
  data.validate();
  return data;
}

// -- text artifacts ---------------------------------------------------------

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_training_log(const std::filesystem::path& path,
                        const std::vector<trainer::TrainLogRow>& log) {
  auto out = open_out(path, false);
  out << "step\tlearning_rate\tcost\tgrad_norm\n";
  for (const auto& row : log)
    out << row.step << '\t' << format_double(row.learning_rate) << '\t'
        << format_double(row.cost) << '\t' << format_double(row.grad_norm)
        << '\n';
}

void write_spectrum(const std::filesystem::path& tsv_path,
                    const std::filesystem::path& summary_path,
                    const spectral::SpectrumSummary& s) {
  {
    auto out = open_out(tsv_path, false);
    out << "index\teigenvalue\n";
    for (Eigen::Index i = 0; i < s.eigenvalues.size(); ++i)
      out << (i + 1) << '\t' << format_double(s.eigenvalues[i]) << '\n';
  }
  auto out = open_out(summary_path, false);
  out << "{\n"
      << "  \"kind\": \""
      << (s.kind == spectral::BundleKind::hessian ? "hessian" : "opg")
      << "\",\n"
      << "  \"dim\": " << s.dim << ",\n"
      << "  \"k\": " << s.k << ",\n"
      << "  \"n_examples\": " << s.n_examples << ",\n"
      << "  \"lambda\": " << format_double(s.lambda) << ",\n"
      << "  \"lambda_k\": " << format_double(s.lambda_k) << ",\n"
      << "  \"lambda_tilde\": " << format_double(s.lambda_tilde) << ",\n"
      << "  \"eps_lambda\": " << format_double(s.eps_lambda) << ",\n"
      << "  \"gap_width\": " << format_double(s.gap_width) << ",\n"
      << "  \"below_lambda_count\": " << s.below_lambda_count << ",\n"
      << "  \"below_zero_count\": " << s.below_zero_count << ",\n"
      << "  \"iterations\": " << s.iterations << ",\n"
      << "  \"flags\": " << s.flags << "\n"
      << "}\n";
}

void write_report_batch(const std::filesystem::path& path,
                        const std::vector<PredictionRecord>& records) {
  auto out = open_out(path, false);
  if (records.empty()) throw ConfigError("report batch: nothing to write");
  const Eigen::Index t = records.front().report.variance.size();
  out << "id\tkind\tk\tpred_class\ttrue_class\tclamped\tscore\tscore_error";
  for (Eigen::Index m = 0; m < t; ++m)
    out << "\tprob_" << m << "\tvar_" << m << "\tvar_err_" << m << "\tsd_" << m
        << "\tsd_err_" << m;
  out << '\n';
  for (const auto& rec : records) {
    const auto& r = rec.report;
    out << r.input_id << '\t' << delta::to_string(r.kind) << '\t' << r.k
        << '\t' << rec.predicted_class << '\t' << rec.true_class << '\t'
        << (r.clamped ? 1 : 0) << '\t' << format_double(r.score) << '\t'
        << format_double(r.score_error);
    for (Eigen::Index m = 0; m < t; ++m)
      out << '\t' << format_double(rec.probs[m]) << '\t'
          << format_double(r.variance[m]) << '\t'
          << format_double(r.variance_error[m]) << '\t'
          << format_double(r.sd[m]) << '\t' << format_double(r.sd_error[m]);
    out << '\n';
  }
}

std::vector<PredictionRecord> read_report_batch(
    const std::filesystem::path& path) {
  auto in = open_in(path, false);
  std::string line;
  if (!std::getline(in, line))
    throw ConfigError("report batch: empty file " + path.string());
  std::vector<std::string> headers;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, '\t')) headers.push_back(cell);
  }
  if (headers.size() < 13 || (headers.size() - 8) % 5 != 0)
    throw ConfigError("report batch: unexpected column layout in " +
                      path.string());
  const Eigen::Index t = static_cast<Eigen::Index>((headers.size() - 8) / 5);

  std::vector<PredictionRecord> records;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, '\t')) cells.push_back(cell);
    if (cells.size() != headers.size())
      throw ConfigError("report batch: bad row at line " +
                        std::to_string(lineno) + " in " + path.string());
    PredictionRecord rec;
    auto& r = rec.report;
    r.input_id = std::stoll(cells[0]);
    const std::string& kind = cells[1];
    if (kind == "hessian")
      r.kind = delta::EstimatorKind::hessian;
    else if (kind == "opg")
      r.kind = delta::EstimatorKind::opg;
    else if (kind == "sandwich")
      r.kind = delta::EstimatorKind::sandwich;
    else
      throw ConfigError("report batch: unknown kind at line " +
                        std::to_string(lineno));
    r.k = std::stoi(cells[2]);
    rec.predicted_class = std::stoi(cells[3]);
    rec.true_class = std::stoi(cells[4]);
    r.clamped = cells[5] == "1";
    r.score = std::strtod(cells[6].c_str(), nullptr);
    r.score_error = std::strtod(cells[7].c_str(), nullptr);
    rec.probs.resize(t);
    r.variance.resize(t);
    r.variance_error.resize(t);
    r.sd.resize(t);
    r.sd_error.resize(t);
    for (Eigen::Index m = 0; m < t; ++m) {
      const std::size_t base = 8 + 5 * static_cast<std::size_t>(m);
      rec.probs[m] = std::strtod(cells[base].c_str(), nullptr);
      r.variance[m] = std::strtod(cells[base + 1].c_str(), nullptr);
      r.variance_error[m] = std::strtod(cells[base + 2].c_str(), nullptr);
      r.sd[m] = std::strtod(cells[base + 3].c_str(), nullptr);
      r.sd_error[m] = std::strtod(cells[base + 4].c_str(), nullptr);
    }
    records.push_back(std::move(rec));
  }
  return records;
}

void write_ranking(const std::filesystem::path& path,
                   const std::vector<std::int64_t>& ids,
                   const std::vector<PredictionRecord>& records) {
  std::map<std::int64_t, const PredictionRecord*> by_id;
  for (const auto& rec : records) by_id[rec.report.input_id] = &rec;
  auto out = open_out(path, false);
  out << "rank\tid\tscore\n";
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto it = by_id.find(ids[i]);
    if (it == by_id.end())
      throw ConfigError("ranking: id missing from report batch");
    out << (i + 1) << '\t' << ids[i] << '\t'
        << format_double(it->second->report.score) << '\n';
  }
}

}  // namespace duq::io
