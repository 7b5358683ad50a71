#include "masklab/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "masklab/error.hpp"

namespace masklab {

namespace {

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

double parse_double(std::string_view text, std::size_t line) {
  text = trim(text);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) {
    throw ValidationError("csv line " + std::to_string(line) + ": malformed decimal '" +
                          std::string(text) + "'");
  }
  return v;
}

long parse_label(std::string_view text, std::size_t line) {
  text = trim(text);
  long v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) {
    throw ValidationError("csv line " + std::to_string(line) + ": malformed label '" +
                          std::string(text) + "'");
  }
  return v;
}

}  // namespace

void LabeledDataset::validate() const {
  const auto n = static_cast<std::size_t>(features.rows());
  if (noisy_labels.size() != n) throw ValidationError("dataset: noisy label count != rows");
  if (clean_labels && clean_labels->size() != n) {
    throw ValidationError("dataset: clean label count != rows");
  }
  if (classes < 2) throw ValidationError("dataset: need at least 2 classes");
  auto check = [&](const std::vector<int>& labels, const char* what) {
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
        throw ValidationError(std::string("dataset: ") + what + " label at row " +
                              std::to_string(i) + " outside [0," + std::to_string(classes) + ")");
      }
    }
  };
  check(noisy_labels, "noisy");
  if (clean_labels) check(*clean_labels, "clean");
  std::vector<char> seen(n, 0);
  for (const auto* index : {&train_index, &test_index}) {
    for (std::size_t i : *index) {
      if (i >= n) throw ValidationError("dataset: split index out of range");
      if (seen[i]++) throw ValidationError("dataset: train/test split indices overlap");
    }
  }
}

Matrix LabeledDataset::rows(const std::vector<std::size_t>& index) const {
  Matrix out(static_cast<Eigen::Index>(index.size()), features.cols());
  for (std::size_t r = 0; r < index.size(); ++r) {
    out.row(static_cast<Eigen::Index>(r)) = features.row(static_cast<Eigen::Index>(index[r]));
  }
  return out;
}

std::vector<int> LabeledDataset::noisy_at(const std::vector<std::size_t>& index) const {
  std::vector<int> out(index.size());
  for (std::size_t r = 0; r < index.size(); ++r) out[r] = noisy_labels[index[r]];
  return out;
}

std::vector<int> LabeledDataset::reference_at(const std::vector<std::size_t>& index) const {
  const auto& src = clean_labels ? *clean_labels : noisy_labels;
  std::vector<int> out(index.size());
  for (std::size_t r = 0; r < index.size(); ++r) out[r] = src[index[r]];
  return out;
}

void LabeledDataset::split(std::uint64_t seed, double train_fraction) {
  std::vector<std::size_t> order(size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = Rng(seed).fork("split");
  rng.shuffle(order);
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(order.size())));
  train_index.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  test_index.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
}

Matrix class_means(std::size_t classes, std::size_t dim, double separation) {
  const auto c = static_cast<Eigen::Index>(classes);
  const auto d = static_cast<Eigen::Index>(dim);
  Matrix means = Matrix::Zero(c, d);
  if (classes <= dim) {
    for (Eigen::Index k = 0; k < c; ++k) means(k, k) = separation;
    return means;
  }
  Rng rng(0x6d61736b6c6162ULL);
  for (Eigen::Index k = 0; k < c; ++k) {
    for (Eigen::Index j = 0; j < d; ++j) means(k, j) = rng.normal();
    means.row(k) *= separation / means.row(k).norm();
  }
  return means;
}

LabeledDataset synth_dataset(std::size_t classes, std::size_t n_per_class, std::size_t dim,
                             double separation, std::uint64_t seed) {
  if (classes < 2) throw ValidationError("synth_dataset: need C >= 2");
  if (dim < 2) throw ValidationError("synth_dataset: need d >= 2");
  if (n_per_class < 5) throw ValidationError("synth_dataset: need n_per_class >= 5");
  if (!(separation >= 0.0) || !std::isfinite(separation)) {
    throw ValidationError("synth_dataset: separation must be finite and nonnegative");
  }
  const Matrix means = class_means(classes, dim, separation);
  const std::size_t n = classes * n_per_class;
  LabeledDataset data;
  data.classes = classes;
  data.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
  std::vector<int> labels(n);
  Rng rng = Rng(seed).fork("features");
  for (std::size_t k = 0; k < classes; ++k) {
    for (std::size_t i = 0; i < n_per_class; ++i) {
      const auto row = static_cast<Eigen::Index>(k * n_per_class + i);
      labels[static_cast<std::size_t>(row)] = static_cast<int>(k);
      for (Eigen::Index j = 0; j < data.features.cols(); ++j) {
        data.features(row, j) = means(static_cast<Eigen::Index>(k), j) + rng.normal();
      }
    }
  }
  data.noisy_labels = labels;
  data.clean_labels = std::move(labels);
  data.provenance = {{"kind", "synthetic"},
                     {"classes", classes},
                     {"n_per_class", n_per_class},
                     {"dim", dim},
                     {"separation", separation},
                     {"seed", seed}};
  data.split(seed);
  return data;
}

void corrupt_dataset(LabeledDataset& data, const TransitionMatrix& transition, Rng& rng) {
  if (transition.classes() != data.classes) {
    throw ValidationError("corrupt_dataset: transition matrix has C=" +
                          std::to_string(transition.classes()) + ", dataset has C=" +
                          std::to_string(data.classes));
  }
  if (!data.clean_labels) data.clean_labels = data.noisy_labels;
  data.noisy_labels = corrupt_labels(*data.clean_labels, transition, rng);
  data.corruption = transition;
  nlohmann::json prior = data.provenance;
  data.provenance = {{"kind", "corrupted"}, {"source", prior}, {"transition", to_json(transition)}};
}

LabeledDataset load_csv_dataset(const std::filesystem::path& path, const CsvSchema& schema,
                                CsvLoadStats* stats) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open dataset file '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("dataset file '" + path.string() + "' is empty");
  const auto header = split_commas(trim(line));
  bool has_clean = false;
  std::size_t dim = 0;
  for (std::size_t i = 0; i < header.size(); ++i) {
    const auto name = trim(header[i]);
    if (name == "f" + std::to_string(i)) {
      if (dim != i) throw ValidationError("csv header: feature columns must come first");
      dim = i + 1;
    } else if (name == "label" && i == dim) {
      continue;
    } else if (name == "clean_label" && i == dim + 1) {
      has_clean = true;
    } else {
      throw ValidationError("csv header: unexpected column '" + std::string(name) +
                            "' (expected f0,...,f{d-1},label[,clean_label])");
    }
  }
  if (dim == 0 || header.size() < dim + 1) {
    throw ValidationError("csv header: needs at least one feature column and a label column");
  }
  const std::size_t arity = dim + 1 + (has_clean ? 1 : 0);

  std::vector<double> values;
  std::vector<long> noisy, clean;
  CsvLoadStats local;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const auto text = trim(line);
    if (text.empty()) {
      ++local.skipped;
      continue;
    }
    const auto cells = split_commas(text);
    if (cells.size() != arity) {
      ++local.skipped;
      continue;
    }
    for (std::size_t j = 0; j < dim; ++j) values.push_back(parse_double(cells[j], line_no));
    const long y = parse_label(cells[dim], line_no);
    const long yc = has_clean ? parse_label(cells[dim + 1], line_no) : 0;
    for (long v : {y, yc}) {
      if (v < 0 || (schema.classes && static_cast<std::size_t>(v) >= *schema.classes)) {
        throw ValidationError("csv line " + std::to_string(line_no) + ": label " +
                              std::to_string(v) + " outside [0," +
                              (schema.classes ? std::to_string(*schema.classes) : std::string("C")) +
                              ")");
      }
    }
    noisy.push_back(y);
    if (has_clean) clean.push_back(yc);
    ++local.ingested;
  }
  if (local.ingested == 0) throw ValidationError("dataset file '" + path.string() + "' has no rows");

  LabeledDataset data;
  long max_label = 0;
  for (long v : noisy) max_label = std::max(max_label, v);
  for (long v : clean) max_label = std::max(max_label, v);
  data.classes = schema.classes ? *schema.classes : static_cast<std::size_t>(max_label + 1);
  data.features.resize(static_cast<Eigen::Index>(local.ingested), static_cast<Eigen::Index>(dim));
  for (std::size_t r = 0; r < local.ingested; ++r) {
    for (std::size_t j = 0; j < dim; ++j) {
      data.features(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = values[r * dim + j];
    }
  }
  data.noisy_labels.assign(noisy.begin(), noisy.end());
  if (has_clean) data.clean_labels = std::vector<int>(clean.begin(), clean.end());
  data.provenance = {{"kind", "csv"},
                     {"path", path.string()},
                     {"rows_ingested", local.ingested},
                     {"rows_skipped", local.skipped}};
  data.split(schema.split_seed);
  data.validate();
  if (stats) *stats = local;
  return data;
}

void write_csv_dataset(const LabeledDataset& data, const std::filesystem::path& path,
                       bool include_clean) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write dataset file '" + path.string() + "'");
  const bool clean = include_clean && data.clean_labels.has_value();
  for (std::size_t j = 0; j < data.dim(); ++j) out << 'f' << j << ',';
  out << "label";
  if (clean) out << ",clean_label";
  out << '\n';
  char buf[32];
  for (Eigen::Index r = 0; r < data.features.rows(); ++r) {
    for (Eigen::Index j = 0; j < data.features.cols(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", data.features(r, j));
      out << buf << ',';
    }
    out << data.noisy_labels[static_cast<std::size_t>(r)];
    if (clean) out << ',' << (*data.clean_labels)[static_cast<std::size_t>(r)];
    out << '\n';
  }
  if (!out) throw ValidationError("failed writing dataset file '" + path.string() + "'");
}

}  // namespace masklab
