#include "masklab/experiment.hpp"

#include <atomic>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <thread>

#include "masklab/error.hpp"
#include "masklab/metrics.hpp"

namespace masklab {

namespace {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

std::string fmt17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string describe_net(const DenseNet& net) {
  std::string out = std::to_string(net.input_dim());
  for (const auto& layer : net.layers()) {
    out += "-" + std::to_string(layer.weight.rows()) + ":" + std::string(to_string(layer.activation));
  }
  return out;
}

json aggregate(const std::vector<double>& values) {
  if (values.empty()) return nullptr;
  const MeanSd s = mean_sd(values);
  return {{"mean", s.mean}, {"sd", s.sd}};
}

}  // namespace

std::string curve_csv(const std::vector<CurvePoint>& curve) {
  std::string out = "step,loss,test_accuracy\n";
  for (const auto& p : curve) {
    out += std::to_string(p.step) + "," + fmt17(p.loss) + "," + fmt17(p.test_accuracy) + "\n";
  }
  return out;
}

std::string masking_log_csv(const std::vector<MaskingLogRow>& log) {
  std::string out = "step,reconstructor_loss,critic_loss,alignment_loss,test_accuracy,transition_error\n";
  for (const auto& r : log) {
    out += std::to_string(r.step) + "," + fmt17(r.reconstructor_loss) + "," + fmt17(r.critic_loss) +
           "," + fmt17(r.alignment_loss) + "," + fmt17(r.test_accuracy) + "," +
           (r.transition_error ? fmt17(*r.transition_error) : std::string()) + "\n";
  }
  return out;
}

json environment_stamp() {
  return {{"library", "masklab"},
          {"version", "0.1.0"},
#if defined(__clang__)
          {"compiler", std::string("clang ") + __clang_version__},
#elif defined(__GNUC__)
          {"compiler", std::string("gcc ") + __VERSION__},
#else
          {"compiler", "unknown"},
#endif
          {"cplusplus", static_cast<long>(__cplusplus)},
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
                        "." + std::to_string(EIGEN_MINOR_VERSION)},
          {"float", "float64"},
          {"rng", "xoshiro256** seeded by splitmix64"}};
}

LabeledDataset experiment_dataset(const RunConfig& cfg, std::uint64_t seed) {
  LabeledDataset data = synth_dataset(cfg.data.classes, cfg.data.n_per_class, cfg.data.dim,
                                      cfg.data.separation, seed);
  Rng rng = Rng(seed).fork("corrupt");
  corrupt_dataset(data, cfg.noise.transition(cfg.data.classes), rng);
  return data;
}

CellResult run_cell(const RunConfig& cfg, const std::string& method, std::uint64_t seed) {
  CellResult cell;
  cell.method = method;
  cell.seed = seed;
  const auto start = Clock::now();
  try {
    LabeledDataset data = experiment_dataset(cfg, seed);
    TrainConfig train = cfg.train;
    train.seed = seed;
    const StructureMask true_mask = cfg.noise.mask(cfg.data.classes);
    auto score_matrix = [&](const TransitionMatrix& estimate) {
      cell.estimate = estimate;
      cell.transition_error = transition_error(estimate, *data.corruption);
      const StructureMask extracted =
          extract_structure(estimate, cfg.masking.sigmoid).thresholded();
      cell.structure = structure_f1(extracted, true_mask);
    };

    if (method == "clean" || method == "noisy") {
      if (method == "clean") data.noisy_labels = *data.clean_labels;
      const TrainResult r = train_noisy(data, train);
      cell.test_accuracy = r.curve.empty()
                               ? accuracy(r.classifier.predict(data.rows(data.test_index)),
                                          data.reference_at(data.test_index))
                               : r.curve.back().test_accuracy;
      cell.curve_csv = curve_csv(r.curve);
    } else if (method == "f_correction") {
      const CorrectedTrainResult r = train_f_correction(data, train);
      cell.test_accuracy = accuracy(r.classifier.predict(data.rows(data.test_index)),
                                    data.reference_at(data.test_index));
      cell.degenerate_estimate = r.degenerate_estimate;
      score_matrix(r.transition);
      cell.curve_csv = curve_csv(r.curve);
    } else if (method == "s_adaptation") {
      const AnchorEstimate init = anchor_initialization(data, train);
      const CorrectedTrainResult r = train_s_adaptation(data, train, init.matrix);
      cell.test_accuracy = accuracy(r.classifier.predict(data.rows(data.test_index)),
                                    data.reference_at(data.test_index));
      cell.degenerate_estimate = init.degenerate;
      score_matrix(r.transition);
      cell.curve_csv = curve_csv(r.curve);
    } else if (method == "masking") {
      MaskingConfig mc = cfg.masking_config();
      mc.train = train;
      const StructureMask prior = cfg.experiment.prior == "full"
                                      ? build_mask(MaskKind::full, cfg.data.classes)
                                      : true_mask;
      const MaskingResult r = train_masking(data, prior, mc);
      cell.test_accuracy = accuracy(r.classifier.predict(data.rows(data.test_index)),
                                    data.reference_at(data.test_index));
      score_matrix(r.estimate.mean);
      cell.curve_csv = masking_log_csv(r.log);
    } else {
      throw ValidationError("unknown method '" + method + "'");
    }
    cell.ok = true;
  } catch (const std::exception& e) {
    cell.ok = false;
    cell.error = e.what();
  }
  cell.wall_clock_s = std::chrono::duration<double>(Clock::now() - start).count();
  return cell;
}

json run_comparison(const RunConfig& cfg, const ComparisonOptions& options) {
  cfg.validate();
  const auto start = Clock::now();
  const auto& methods = cfg.experiment.methods;
  const auto& seeds = cfg.experiment.seeds;
  const std::size_t cells = methods.size() * seeds.size();
  std::vector<CellResult> results(cells);

  // Cells are independent; results land in fixed slots so the report does not
  // depend on scheduling.
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next.fetch_add(1); i < cells; i = next.fetch_add(1)) {
      results[i] = run_cell(cfg, methods[i / seeds.size()], seeds[i % seeds.size()]);
    }
  };
  const std::size_t jobs = std::max<std::size_t>(1, std::min(options.jobs, cells));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
  }

  if (options.curves_dir) {
    std::filesystem::create_directories(*options.curves_dir);
    for (const auto& cell : results) {
      if (!cell.ok) continue;
      const auto path = *options.curves_dir / (cell.method + "_seed" + std::to_string(cell.seed) + ".csv");
      std::ofstream out(path);
      if (!out) throw ValidationError("cannot write curve file '" + path.string() + "'");
      out << cell.curve_csv;
    }
  }

  const StructureMask true_mask = cfg.noise.mask(cfg.data.classes);
  const TransitionMatrix truth = cfg.noise.transition(cfg.data.classes);
  Rng arch_rng(0);
  TrainConfig arch_train = cfg.train;
  const Classifier arch_clf = Classifier::initialize(cfg.data.dim, cfg.data.classes, arch_train);
  const Generator arch_gen =
      Generator::initialize(cfg.data.classes, cfg.masking, TransitionMatrix::identity(cfg.data.classes), arch_rng);
  const Critic arch_critic = Critic::initialize(cfg.data.classes, cfg.masking, arch_rng);

  json report;
  report["schema"] = kReportSchema;
  report["config"] = cfg.to_json();
  report["config_hash"] = cfg.hash();
  report["environment"] = environment_stamp();
  report["architecture"] = {{"classifier", describe_net(arch_clf.net)},
                            {"generator", describe_net(arch_gen.net)},
                            {"critic", describe_net(arch_critic.net)}};
  report["truth"] = {{"transition", to_json(truth)}, {"mask", to_json(true_mask)}};
  report["methods"] = json::array();
  for (std::size_t m = 0; m < methods.size(); ++m) {
    json entry;
    entry["name"] = methods[m];
    entry["seeds"] = seeds;
    entry["per_seed"] = json::array();
    std::vector<double> acc, terr, prec, rec, f1;
    double wall = 0.0;
    bool any_matrix = false;
    for (std::size_t s = 0; s < seeds.size(); ++s) {
      const CellResult& cell = results[m * seeds.size() + s];
      wall += cell.wall_clock_s;
      json row = {{"seed", cell.seed}, {"status", cell.ok ? "ok" : "failed"},
                  {"wall_clock_s", cell.wall_clock_s}};
      if (!cell.ok) {
        row["error"] = cell.error;
        entry["per_seed"].push_back(std::move(row));
        continue;
      }
      row["test_accuracy"] = cell.test_accuracy;
      acc.push_back(cell.test_accuracy);
      if (cell.transition_error) {
        any_matrix = true;
        row["transition_error"] = *cell.transition_error;
        row["structure_precision"] = cell.structure->precision;
        row["structure_recall"] = cell.structure->recall;
        row["structure_f1"] = cell.structure->f1;
        row["degenerate_estimate"] = cell.degenerate_estimate;
        row["estimate"] = to_json(*cell.estimate);
        terr.push_back(*cell.transition_error);
        prec.push_back(cell.structure->precision);
        rec.push_back(cell.structure->recall);
        f1.push_back(cell.structure->f1);
      } else {
        row["transition_error"] = nullptr;
      }
      entry["per_seed"].push_back(std::move(row));
    }
    entry["test_accuracy"] = aggregate(acc);
    entry["transition_error"] = any_matrix ? aggregate(terr) : json(nullptr);
    entry["structure_precision"] = any_matrix ? aggregate(prec) : json(nullptr);
    entry["structure_recall"] = any_matrix ? aggregate(rec) : json(nullptr);
    entry["structure_f1"] = any_matrix ? aggregate(f1) : json(nullptr);
    entry["failed_cells"] = seeds.size() - acc.size();
    entry["wall_clock_s"] = wall;
    report["methods"].push_back(std::move(entry));
  }
  report["wall_clock_s"] = std::chrono::duration<double>(Clock::now() - start).count();
  return report;
}

json strip_timing(const json& report) {
  if (report.is_object()) {
    json out = json::object();
    for (const auto& [key, value] : report.items()) {
      if (key == "wall_clock_s") continue;
      out[key] = strip_timing(value);
    }
    return out;
  }
  if (report.is_array()) {
    json out = json::array();
    for (const auto& v : report) out.push_back(strip_timing(v));
    return out;
  }
  return report;
}

}  // namespace masklab
