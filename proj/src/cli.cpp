#include "masklab/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "masklab/baselines.hpp"
#include "masklab/config.hpp"
#include "masklab/dataset.hpp"
#include "masklab/error.hpp"
#include "masklab/experiment.hpp"
#include "masklab/masking.hpp"
#include "masklab/metrics.hpp"
#include "masklab/noise_model.hpp"

namespace masklab::cli {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError("'" + path + "' is not valid JSON: " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw ValidationError("failed writing '" + path.string() + "'");
}

void emit_json(const json& doc, const std::string& path, std::ostream& out) {
  if (path.empty()) {
    out << doc.dump(2) << '\n';
  } else {
    write_text(path, doc.dump(2) + "\n");
  }
}

std::vector<std::size_t> parse_list(const std::string& text, const char* flag) {
  std::vector<std::size_t> values;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const long v = std::stol(item, &used);
      if (used != item.size() || v < 0) throw std::invalid_argument(item);
      values.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw ValidationError(std::string(flag) + ": '" + item + "' is not a nonnegative integer");
    }
  }
  return values;
}

MaskParams mask_params_from_flags(const std::string& cols, const std::string& blocks) {
  MaskParams p;
  if (!cols.empty()) p.noise_columns = parse_list(cols, "--cols");
  if (!blocks.empty()) p.block_sizes = parse_list(blocks, "--blocks");
  return p;
}

std::string method_key(const std::string& flag) {
  if (flag == "noisy") return "noisy";
  if (flag == "f-correction") return "f_correction";
  if (flag == "s-adaptation") return "s_adaptation";
  if (flag == "masking") return "masking";
  throw ValidationError("unknown method '" + flag + "'");
}

struct Options {
  std::string config, out, data, structure = "tri", truth_out, method, prior, out_dir, kind, cols,
      blocks, matrix, toy, truth, curves_dir;
  double rate = -1.0, hi = 0.1, lo = 0.01;
  std::size_t classes = 0, jobs = 1;
  std::uint64_t seed = 0;
};

int cmd_synth(const Options& o, std::ostream& out) {
  RunConfig cfg = o.config.empty() ? RunConfig{} : RunConfig::load(o.config);
  const std::uint64_t seed = o.seed != 0 ? o.seed : cfg.data.seed;
  const LabeledDataset data = synth_dataset(cfg.data.classes, cfg.data.n_per_class, cfg.data.dim,
                                            cfg.data.separation, seed);
  write_csv_dataset(data, o.out);
  out << "wrote " << data.size() << " rows (C=" << data.classes << ", d=" << data.dim() << ") to "
      << o.out << '\n';
  return kExitOk;
}

int cmd_corrupt(const Options& o, std::ostream& out) {
  CsvSchema schema;
  if (o.classes) schema.classes = o.classes;
  LabeledDataset data = load_csv_dataset(o.data, schema);
  const MaskKind kind = mask_kind_from_string(o.structure);
  const double rate = o.rate >= 0.0 ? o.rate : default_noise_rate(kind);
  NoiseConfig noise;
  noise.structure = kind;
  noise.rate = rate;
  const MaskParams flags = mask_params_from_flags(o.cols, o.blocks);
  noise.noise_columns = flags.noise_columns;
  noise.block_sizes = flags.block_sizes;
  const TransitionMatrix t = noise.transition(data.classes);
  Rng rng = Rng(o.seed).fork("corrupt");
  corrupt_dataset(data, t, rng);
  write_csv_dataset(data, o.out);
  if (!o.truth_out.empty()) write_text(o.truth_out, to_json(t).dump(2) + "\n");
  std::size_t flipped = 0;
  for (std::size_t i = 0; i < data.size(); ++i) flipped += data.noisy_labels[i] != (*data.clean_labels)[i];
  out << "flipped " << flipped << " of " << data.size() << " labels\n";
  return kExitOk;
}

int cmd_train(const Options& o, std::ostream& out) {
  const std::string method = method_key(o.method);
  if (method == "masking" && o.prior.empty()) {
    throw ValidationError(
        "train --method masking needs a structure prior (--prior mask.json). Without transition "
        "knowledge use --prior full: unmasking every transition reduces MASKING to the "
        "unconstrained S-adaptation objective.");
  }
  RunConfig cfg = o.config.empty() ? RunConfig{} : RunConfig::load(o.config);
  CsvSchema schema;
  if (o.classes) schema.classes = o.classes;
  schema.split_seed = o.seed;
  LabeledDataset data = load_csv_dataset(o.data, schema);
  if (!o.truth.empty()) {
    const TransitionMatrix truth = transition_from_json(read_json(o.truth));
    if (truth.classes() != data.classes) throw ValidationError("--truth matrix size does not match data");
    data.corruption = truth;
  }
  TrainConfig train = cfg.train;
  train.seed = o.seed;

  fs::create_directories(o.out_dir);
  json summary = {{"method", method}, {"data", o.data}, {"seed", o.seed}, {"config", cfg.to_json()}};
  std::optional<TransitionMatrix> estimate;
  double acc = 0.0;
  const Matrix test_x = data.rows(data.test_index);
  const auto test_y = data.reference_at(data.test_index);
  if (method == "noisy") {
    const TrainResult r = train_noisy(data, train);
    acc = accuracy(r.classifier.predict(test_x), test_y);
    write_text(fs::path(o.out_dir) / "curve.csv", curve_csv(r.curve));
  } else if (method == "f_correction") {
    const CorrectedTrainResult r = train_f_correction(data, train);
    acc = accuracy(r.classifier.predict(test_x), test_y);
    estimate = r.transition;
    summary["degenerate_estimate"] = r.degenerate_estimate;
    write_text(fs::path(o.out_dir) / "curve.csv", curve_csv(r.curve));
  } else if (method == "s_adaptation") {
    const AnchorEstimate init = anchor_initialization(data, train);
    const CorrectedTrainResult r = train_s_adaptation(data, train, init.matrix);
    acc = accuracy(r.classifier.predict(test_x), test_y);
    estimate = r.transition;
    write_text(fs::path(o.out_dir) / "curve.csv", curve_csv(r.curve));
  } else {
    const StructureMask prior = o.prior == "full" ? build_mask(MaskKind::full, data.classes)
                                                  : mask_from_json(read_json(o.prior));
    MaskingConfig mc = cfg.masking_config();
    mc.train = train;
    const MaskingResult r = train_masking(data, prior, mc);
    acc = accuracy(r.classifier.predict(test_x), test_y);
    estimate = r.estimate.mean;
    write_text(fs::path(o.out_dir) / "curve.csv", masking_log_csv(r.log));
    json se = rows_to_json(r.estimate.standard_error);
    write_text(fs::path(o.out_dir) / "transition_stderr.json", json{{"rows", se}}.dump(2) + "\n");
  }
  summary["test_accuracy"] = acc;
  summary["test_labels"] = data.clean_labels ? "clean" : "noisy";
  if (estimate) {
    write_text(fs::path(o.out_dir) / "transition.json", to_json(*estimate).dump(2) + "\n");
    const StructureMask structure =
        extract_structure(*estimate, cfg.masking.sigmoid).thresholded();
    write_text(fs::path(o.out_dir) / "structure.json", to_json(structure).dump(2) + "\n");
    if (data.corruption) summary["transition_error"] = transition_error(*estimate, *data.corruption);
  }
  write_text(fs::path(o.out_dir) / "summary.json", summary.dump(2) + "\n");
  out << method << ": test accuracy " << acc << '\n';
  return kExitOk;
}

int cmd_mask(const Options& o, std::ostream& out) {
  const MaskKind kind = mask_kind_from_string(o.kind);
  const StructureMask mask = build_mask(kind, o.classes, mask_params_from_flags(o.cols, o.blocks));
  emit_json(to_json(mask), o.out, out);
  return kExitOk;
}

int cmd_distill(const Options& o, std::ostream& out) {
  const TransitionMatrix t = transition_from_json(read_json(o.matrix));
  emit_json(to_json(distill_mask(t, o.hi, o.lo)), o.out, out);
  return kExitOk;
}

int cmd_compare(const Options& o, std::ostream& out) {
  RunConfig cfg = o.config.empty() ? RunConfig{} : RunConfig::load(o.config);
  ComparisonOptions options;
  options.jobs = o.jobs;
  if (!o.curves_dir.empty()) options.curves_dir = o.curves_dir;
  const json report = run_comparison(cfg, options);
  write_text(o.out, report.dump(2) + "\n");
  for (const auto& m : report["methods"]) {
    out << m["name"].get<std::string>() << ": accuracy ";
    if (m["test_accuracy"].is_null()) {
      out << "n/a";
    } else {
      out << m["test_accuracy"]["mean"].get<double>() << " +- " << m["test_accuracy"]["sd"].get<double>();
    }
    if (!m["transition_error"].is_null()) {
      out << ", transition error " << m["transition_error"]["mean"].get<double>();
    }
    out << '\n';
  }
  return kExitOk;
}

int cmd_elbo(const Options& o, std::ostream& out) {
  const ElboToy toy = ElboToy::from_json(read_json(o.toy));
  const ElboCheck r = elbo_toy_check(toy);
  out << json{{"elbo", r.elbo}, {"loglik", r.loglik}, {"gap", r.loglik - r.elbo}}.dump(2) << '\n';
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"masklab: noisy-label learning with structure priors"};
  app.require_subcommand(1);
  Options o;

  auto* synth = app.add_subcommand("synth", "Write a synthetic Gaussian dataset as CSV");
  synth->add_option("--config", o.config, "RunConfig JSON (data section)");
  synth->add_option("--out", o.out, "Output CSV")->required();
  synth->add_option("--seed", o.seed, "Overrides data.seed when nonzero");

  auto* corrupt = app.add_subcommand("corrupt", "Flip labels with a structured transition matrix");
  corrupt->add_option("--data", o.data)->required();
  corrupt->add_option("--structure", o.structure, "column | tri | block");
  corrupt->add_option("--rate", o.rate, "Noise rate in [0,1)");
  corrupt->add_option("--cols", o.cols, "Noise columns for column structure, e.g. 3,5");
  corrupt->add_option("--blocks", o.blocks, "Block sizes for block structure, e.g. 5,5");
  corrupt->add_option("--classes", o.classes);
  corrupt->add_option("--seed", o.seed);
  corrupt->add_option("--out", o.out)->required();
  corrupt->add_option("--truth-out", o.truth_out, "Write the corrupting matrix as JSON");

  auto* train = app.add_subcommand("train", "Train one method on a CSV dataset");
  train->add_option("--method", o.method, "noisy | f-correction | s-adaptation | masking")
      ->required()
      ->check(CLI::IsMember({"noisy", "f-correction", "s-adaptation", "masking"}));
  train->add_option("--data", o.data)->required();
  train->add_option("--prior", o.prior, "Prior mask JSON, or 'full'");
  train->add_option("--truth", o.truth, "True transition JSON for error reporting");
  train->add_option("--config", o.config);
  train->add_option("--classes", o.classes);
  train->add_option("--seed", o.seed);
  train->add_option("--out-dir", o.out_dir)->required();

  auto* mask = app.add_subcommand("mask", "Build a structure mask");
  mask->add_option("--kind", o.kind, "column | tri | block | full")
      ->required()
      ->check(CLI::IsMember({"column", "tri", "block", "full"}));
  mask->add_option("--classes", o.classes)->required();
  mask->add_option("--cols", o.cols);
  mask->add_option("--blocks", o.blocks);
  mask->add_option("--out", o.out, "Output JSON (stdout when omitted)");

  auto* distill = app.add_subcommand("distill", "Threshold an estimated matrix into a mask");
  distill->add_option("--matrix", o.matrix)->required();
  distill->add_option("--hi", o.hi);
  distill->add_option("--lo", o.lo);
  distill->add_option("--out", o.out, "Output JSON (stdout when omitted)");

  auto* compare = app.add_subcommand("compare", "Run the seeded multi-method comparison");
  compare->add_option("--config", o.config);
  compare->add_option("--out", o.out)->required();
  compare->add_option("--jobs", o.jobs)->check(CLI::PositiveNumber);
  compare->add_option("--curves-dir", o.curves_dir, "Write per-cell training curves here");

  auto* elbo = app.add_subcommand("elbo-check", "Evaluate both sides of the bound on a toy");
  elbo->add_option("--toy", o.toy)->required();

  std::vector<std::string> argv_storage{"masklab"};
  argv_storage.insert(argv_storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_storage) argv.push_back(a.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  }

  try {
    if (*synth) return cmd_synth(o, out);
    if (*corrupt) return cmd_corrupt(o, out);
    if (*train) return cmd_train(o, out);
    if (*mask) return cmd_mask(o, out);
    if (*distill) return cmd_distill(o, out);
    if (*compare) return cmd_compare(o, out);
    if (*elbo) return cmd_elbo(o, out);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const nlohmann::json::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "aborted: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitValidation;
}

}  // namespace masklab::cli
