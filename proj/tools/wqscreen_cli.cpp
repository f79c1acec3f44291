/*
 * Copyright 2026 The wqscreen Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */


// Command-line entry point. Every subcommand writes its outputs plus a
// manifest.json into --out.

#include <openssl/evp.h>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "wqscreen/wqscreen.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace wqscreen::cli {
namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitFlagged = 2;

std::string Sha256(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorKind::kIo, "SHA-256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 15]);
  }
  return out;
}

std::string Dump(const json& j) { return j.dump(2) + "\n"; }

struct Options {
  std::string config;
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;
  std::string out = ".";
  std::string schema;
  std::vector<std::string> inputs;
  std::string model;
  bool assert_mode = false;
  std::string features = "all";
};

// Tracks inputs and outputs for the manifest.
class Run {
 public:
  Run(std::string subcommand, const Options& opt) : subcommand_(std::move(subcommand)), opt_(opt) {
    fs::create_directories(opt.out);
  }

  std::string Read(const std::string& path) {
    std::string data = csv::ReadFile(path);
    inputs_.push_back({{"path", path}, {"sha256", Sha256(data)}});
    return data;
  }

  json ReadJson(const std::string& path) {
    const std::string text = Read(path);
    try {
      return json::parse(text);
    } catch (const json::parse_error& e) {
      throw Error(ErrorKind::kSchema, path + ": " + e.what());
    }
  }

  json Config() { return opt_.config.empty() ? json::object() : ReadJson(opt_.config); }

  std::vector<FieldRecord> Records(const std::string& path) {
    ColumnSchema schema;
    if (!opt_.schema.empty()) schema = ColumnSchemaFromJson(ReadJson(opt_.schema));
    auto parsed = ParseRecords(Read(path), schema);
    for (const auto& w : parsed.warnings) {
      std::cerr << path << ": row " << w.row << ", " << w.column << " = '" << w.value << "': " << w.message << "\n";
    }
    return std::move(parsed.records);
  }

  void Write(const std::string& name, std::string_view content) {
    const std::string path = (fs::path(opt_.out) / name).string();
    csv::WriteFile(path, content);
    outputs_.push_back({{"path", path}, {"sha256", Sha256(content)}});
  }

  void Finish(const json& effective_config, std::optional<std::uint64_t> seed) {
    json m = {{"subcommand", subcommand_},
              {"versions", {{"wqscreen", kVersion}, {"pipeline_model", 1}}},
              {"config", effective_config},
              {"config_sha256", Sha256(effective_config.dump())},
              {"inputs", inputs_},
              {"outputs", outputs_}};
    m["seed"] = seed ? json(*seed) : json(nullptr);
    csv::WriteFile((fs::path(opt_.out) / "manifest.json").string(), Dump(m));
  }

  std::optional<std::uint64_t> Seed() const {
    if (opt_.seed_opt && opt_.seed_opt->count() > 0) return opt_.seed;
    return std::nullopt;
  }

 private:
  std::string subcommand_;
  const Options& opt_;
  json inputs_ = json::array();
  json outputs_ = json::array();
};

const std::string& OnlyInput(const Options& opt, const char* what) {
  if (opt.inputs.size() != 1) throw CLI::ValidationError("expected exactly one " + std::string(what));
  return opt.inputs.front();
}

std::string MatrixCsv(const FeatureMatrix& m) {
  std::string out;
  csv::Row header{"uuid"};
  for (const auto& c : m.columns()) header.push_back(c.name);
  csv::AppendRow(out, header);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    csv::Row row{m.row_ids()[r]};
    for (std::size_t c = 0; c < m.cols(); ++c) row.push_back(m.missing(r, c) ? std::string() : FormatDouble(m.value(r, c)));
    csv::AppendRow(out, row);
  }
  return out;
}

std::string CurveCsv(const CvReport& cv) {
  const auto pooled = cv.pooled_view();
  std::string out;
  csv::AppendRow(out, {"t", "precision", "recall", "f1", "f2"});
  for (const auto& p : ThresholdCurve(pooled.probs, pooled.labels, UniformGrid(101), 2.0)) {
    csv::AppendRow(out, {FormatDouble(p.t), FormatDouble(p.precision), FormatDouble(p.recall), FormatDouble(p.f1),
                         FormatDouble(p.fbeta)});
  }
  return out;
}

json MetricsJson(const CvReport& cv) {
  return {{"name", cv.name},
          {"pooled", cv.pooled.ToJson()},
          {"global_threshold", cv.global_threshold},
          {"threshold_mean", cv.threshold_mean},
          {"threshold_sd", cv.threshold_sd},
          {"mean_fold_fbeta", cv.mean_fold_fbeta},
          {"used_ptc", cv.used_ptc}};
}

PipelineConfig LoadPipelineConfig(Run& run) {
  PipelineConfig pc = PipelineConfig::FromJson(run.Config());
  if (auto s = run.Seed()) pc.seed = *s;
  return pc;
}

// ---------------------------------------------------------------------------

int Qc(const Options& opt) {
  Run run("qc", opt);
  const json cfg = run.Config();
  const QcConfig qc = QcConfig::FromJson(cfg);
  const auto records = run.Records(OnlyInput(opt, "records CSV"));
  const QcBatchResult result = EvaluateBatch(records, qc);
  run.Write("verdicts.jsonl", VerdictsJsonLines(result.verdicts));
  std::string summary;
  csv::AppendRow(summary, {"kind", "name", "count"});
  for (const auto& [name, n] : result.flags.category_counts) csv::AppendRow(summary, {"category", name, std::to_string(n)});
  for (const auto& rule : kQcRules) {
    const auto it = result.flags.rule_counts.find(std::string(rule.code));
    if (it != result.flags.rule_counts.end()) csv::AppendRow(summary, {"rule", it->first, std::to_string(it->second)});
  }
  run.Write("qc_summary.csv", summary);
  run.Finish(cfg, std::nullopt);
  std::cout << QcSummaryTable(result);
  const auto alerts = result.flags.category_counts.find("ALERT");
  return alerts != result.flags.category_counts.end() && alerts->second > 0 ? kExitFlagged : kExitOk;
}

int Clean(const Options& opt) {
  Run run("clean", opt);
  json cfg = run.Config();
  const AliasDictionary dict = cfg.contains("dictionary") ? AliasDictionary::FromJson(cfg.at("dictionary")) : DefaultDictionary();
  const PlausibilityBounds bounds = cfg.contains("bounds") ? PlausibilityBounds::FromJson(cfg.at("bounds")) : PlausibilityBounds{};
  if (!cfg.contains("outlier_z")) cfg["outlier_z"] = 4.0;
  const auto records = Harmonize(run.Records(OnlyInput(opt, "records CSV")), dict);
  CleanResult cleaned = Clean(records, bounds);
  std::string outlier_log;
  if (!cfg.at("outlier_z").is_null()) {
    CleanResult screened = ScreenOutliers(cleaned.records, cfg.at("outlier_z").get<double>());
    outlier_log = screened.log.ToJsonLines();
    cleaned.records = std::move(screened.records);
  }
  run.Write("clean.csv", WriteRecordsCsv(cleaned.records));
  run.Write("clean_log.jsonl", cleaned.log.ToJsonLines());
  run.Write("outlier_log.jsonl", outlier_log);
  run.Finish(cfg, std::nullopt);
  std::cout << "kept " << cleaned.records.size() << " of " << records.size() << " records\n";
  return kExitOk;
}

int EncodeCmd(const Options& opt) {
  Run run("encode", opt);
  const auto records = run.Records(OnlyInput(opt, "records CSV"));
  const Encoded enc = Encode(records);
  run.Write("features.csv", MatrixCsv(enc.matrix));
  std::string labels;
  csv::AppendRow(labels, {"uuid", "tc_present", "ec_present"});
  for (std::size_t i = 0; i < records.size(); ++i) {
    csv::AppendRow(labels, {enc.matrix.row_ids()[i], std::to_string(enc.labels.tc[i]), std::to_string(enc.labels.ec[i])});
  }
  run.Write("labels.csv", labels);
  run.Write("encoding.json", Dump(enc.schema.ToJson()));
  run.Finish(json::object(), std::nullopt);
  return kExitOk;
}

int Synth(const Options& opt) {
  Run run("synth", opt);
  if (!opt.inputs.empty()) throw CLI::ValidationError("synth takes no positional inputs");
  SynthConfig sc = SynthConfig::FromJson(run.Config());
  if (auto s = run.Seed()) sc.seed = *s;
  const SynthResult result = Generate(sc);
  run.Write("fixture.csv", FixtureCsv(result.records));
  run.Write("truth.json", Dump(result.truth.ToJson(result.records)));
  run.Finish(sc.ToJson(), sc.seed);
  return kExitOk;
}

// Logistic baseline on the full-data scaled features; missing cells take the
// column mean (0 after scaling).
json LogisticBaseline(const FeatureMatrix& matrix, std::span<const int> ec) {
  std::vector<std::size_t> all(matrix.rows());
  std::iota(all.begin(), all.end(), 0);
  FeatureMatrix x = FitFoldScaler(matrix, all).Transform(matrix);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t c = 0; c < x.cols(); ++c) {
      if (x.missing(r, c)) x.Set(r, c, 0.0);
    }
  }
  return LogisticToJson(FitLogistic(x, ec, 1.0));
}

int Train(const Options& opt) {
  Run run("train", opt);
  const PipelineConfig pc = LoadPipelineConfig(run);
  const auto records = run.Records(OnlyInput(opt, "records CSV"));
  const Encoded enc = Encode(records);
  PipelineRun result = FinalizePipeline(enc.matrix, enc.labels.tc, enc.labels.ec, pc);
  result.model.encoding = enc.schema;
  const CvReport baseline = RunStage2(enc.matrix, nullptr, enc.labels.ec, result.plan, pc.stage2, pc.beta,
                                      pc.calibration, DeriveSeed(pc.seed, 3), "without_ptc");
  run.Write("model.json", Dump(result.model.ToJson()));
  run.Write("cv_report.json", Dump(result.cv.ToJson()));
  run.Write("cv_report_no_ptc.json", Dump(baseline.ToJson()));
  run.Write("folds.json", Dump(result.plan.ToJson()));
  run.Write("ptc.json", Dump(result.ptc.ToJson()));
  run.Write("logistic.json", Dump(LogisticBaseline(enc.matrix, enc.labels.ec)));
  run.Finish(pc.ToJson(), pc.seed);
  std::cout << "stage-1 AUC " << FormatDouble(result.ptc.stage1_auc) << ", pooled OOF AUC with PTC "
            << FormatDouble(result.cv.pooled.roc_auc) << ", without " << FormatDouble(baseline.pooled.roc_auc)
            << ", t* " << FormatDouble(result.model.t_star) << "\n";
  return kExitOk;
}

PipelineModel LoadModel(Run& run, const Options& opt) {
  if (opt.model.empty()) throw CLI::ValidationError("--model is required");
  PipelineModel model = PipelineModel::FromJson(run.ReadJson(opt.model));
  if (!model.encoding) throw Error(ErrorKind::kSchema, "model has no encoding schema; retrain with the CLI");
  return model;
}

int PredictCmd(const Options& opt) {
  Run run("predict", opt);
  const PipelineModel model = LoadModel(run, opt);
  const auto records = run.Records(OnlyInput(opt, "records CSV"));
  const FeatureMatrix rows = EncodeFeatures(records, *model.encoding);
  const auto predictions = Predict(model, rows);
  std::string out;
  csv::AppendRow(out, {"uuid", "ptc", "probability", "decision"});
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    csv::AppendRow(out, {records[i].uuid, FormatDouble(predictions[i].ptc), FormatDouble(predictions[i].probability),
                         predictions[i].decision ? "1" : "0"});
  }
  run.Write("predictions.csv", out);
  run.Finish(json::object(), std::nullopt);
  return kExitOk;
}

// --assert checks every "min_<metric>" / "max_<metric>" key of the config
// against the pooled bundle.
int Evaluate(const Options& opt) {
  Run run("evaluate", opt);
  const json cfg = run.Config();
  const CvReport cv = CvReport::FromJson(run.ReadJson(OnlyInput(opt, "CV report JSON")));
  const json metrics = MetricsJson(cv);
  run.Write("metrics.json", Dump(metrics));
  run.Write("curve.csv", CurveCsv(cv));
  int code = kExitOk;
  if (opt.assert_mode) {
    const json limits = cfg.value("assert", json{{"min_roc_auc", 0.5}});
    json verdicts = json::array();
    for (const auto& [key, bound] : limits.items()) {
      const bool is_min = key.rfind("min_", 0) == 0;
      if (!is_min && key.rfind("max_", 0) != 0) throw Error(ErrorKind::kParameter, "assertion key '" + key + "' needs a min_ or max_ prefix");
      const std::string metric = key.substr(4);
      if (!metrics.at("pooled").contains(metric)) throw Error(ErrorKind::kParameter, "unknown metric '" + metric + "'");
      const json& value = metrics.at("pooled").at(metric);
      const bool pass = value.is_number() && (is_min ? value.get<double>() >= bound.get<double>()
                                                     : value.get<double>() <= bound.get<double>());
      verdicts.push_back({{"assertion", key}, {"bound", bound}, {"value", value}, {"pass", pass}});
      std::cout << (pass ? "PASS " : "FAIL ") << key << " " << bound.dump() << " (observed " << value.dump() << ")\n";
      if (!pass) code = kExitFlagged;
    }
    run.Write("assertions.json", Dump(verdicts));
  }
  run.Finish(cfg, std::nullopt);
  return code;
}

int Compare(const Options& opt) {
  Run run("compare", opt);
  json cfg = run.Config();
  if (opt.inputs.size() < 2) throw CLI::ValidationError("compare needs a reference report and at least one challenger");
  const int n_boot = cfg.value("n_boot", 10000);
  cfg["n_boot"] = n_boot;
  const std::uint64_t seed = run.Seed().value_or(cfg.value("seed", std::uint64_t{0}));
  const CvReport reference = CvReport::FromJson(run.ReadJson(opt.inputs.front()));
  std::vector<CvReport> challengers;
  std::set<std::string> names{reference.name};
  for (std::size_t i = 1; i < opt.inputs.size(); ++i) {
    challengers.push_back(CvReport::FromJson(run.ReadJson(opt.inputs[i])));
    if (!names.insert(challengers.back().name).second) {
      throw Error(ErrorKind::kParameter, "duplicate report name '" + challengers.back().name + "'");
    }
  }
  const ComparisonReport report = CompareModels(reference, challengers, n_boot, seed);
  run.Write("comparison.json", Dump(report.ToJson()));
  run.Write("comparison.csv", report.ToCsv());
  run.Finish(cfg, seed);
  return kExitOk;
}

int Explain(const Options& opt) {
  Run run("explain", opt);
  const PipelineModel model = LoadModel(run, opt);
  const auto records = run.Records(OnlyInput(opt, "records CSV"));
  const FeatureMatrix x2 = Stage2Inputs(model, EncodeFeatures(records, *model.encoding));
  const auto attributions = TreeShap(model.stage2, x2);
  run.Write("beeswarm.csv", ExportBeeswarm(attributions, x2));
  run.Write("mean_abs_shap.csv", MeanAbsShapCsv(MeanAbsShap(model.stage2, x2)));
  run.Finish(json::object(), std::nullopt);
  return kExitOk;
}

int Ablate(const Options& opt) {
  Run run("ablate", opt);
  const PipelineConfig pc = LoadPipelineConfig(run);
  const auto records = run.Records(OnlyInput(opt, "records CSV"));
  const Encoded enc = Encode(records);
  std::vector<std::size_t> keep;
  for (std::size_t c = 0; c < enc.matrix.cols(); ++c) {
    const ColumnKind kind = enc.matrix.column(c).kind;
    if (opt.features == "all" || (opt.features == "contextual" && kind == ColumnKind::kContextual) ||
        (opt.features == "physico" && kind == ColumnKind::kPhysicochemical)) {
      keep.push_back(c);
    }
  }
  const FeatureMatrix subset = enc.matrix.SelectColumns(keep);
  PipelineRun result = FinalizePipeline(subset, enc.labels.tc, enc.labels.ec, pc);
  result.cv.name = "ablate_" + opt.features;
  run.Write("cv_report.json", Dump(result.cv.ToJson()));
  run.Write("metrics.json", Dump(MetricsJson(result.cv)));
  run.Write("curve.csv", CurveCsv(result.cv));
  json cfg = pc.ToJson();
  cfg["features"] = opt.features;
  run.Finish(cfg, pc.seed);
  std::cout << opt.features << ": " << subset.cols() << " columns, pooled OOF AUC "
            << FormatDouble(result.cv.pooled.roc_auc) << "\n";
  return kExitOk;
}

}  // namespace

int Main(int argc, char** argv) {
  CLI::App app{"wqscreen: two-stage drinking-water contamination screening toolkit", "wqscreen"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);
  Options opt;
  int (*handler)(const Options&) = nullptr;

  auto add = [&](const char* name, const char* help, int (*fn)(const Options&), bool takes_inputs = true) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", opt.config, "JSON configuration file")->check(CLI::ExistingFile);
    sub->add_option("--seed", opt.seed, "Master seed");
    sub->add_option("--out", opt.out, "Output directory")->capture_default_str();
    if (takes_inputs) sub->add_option("inputs", opt.inputs, "Input files")->check(CLI::ExistingFile);
    sub->callback([&handler, fn] { handler = fn; });
    return sub;
  };
  auto needs_schema = [&](CLI::App* sub) {
    sub->add_option("--schema", opt.schema, "JSON column-name mapping for the records CSV")->check(CLI::ExistingFile);
  };
  needs_schema(add("qc", "Triage survey records (exit 2 on any ALERT)", Qc));
  needs_schema(add("clean", "Harmonize, clean and outlier-screen records", Clean));
  needs_schema(add("encode", "One-hot encode cleaned records", EncodeCmd));
  add("synth", "Generate a synthetic fixture", Synth, false);
  needs_schema(add("train", "Cross-validate and refit the two-stage pipeline", Train));
  auto* predict = add("predict", "Score records with a trained model", PredictCmd);
  predict->add_option("--model", opt.model, "Pipeline model JSON")->required()->check(CLI::ExistingFile);
  needs_schema(predict);
  auto* evaluate = add("evaluate", "Metrics and threshold curve from a CV report", Evaluate);
  evaluate->add_flag("--assert", opt.assert_mode, "Exit 2 when a configured metric bound fails");
  add("compare", "Paired bootstrap, McNemar and BH-FDR against a reference report", Compare);
  auto* explain = add("explain", "Tree-Shapley attributions for the stage-2 model", Explain);
  explain->add_option("--model", opt.model, "Pipeline model JSON")->required()->check(CLI::ExistingFile);
  needs_schema(explain);
  auto* ablate = add("ablate", "Cross-validate on a feature subset", Ablate);
  ablate->add_option("--features", opt.features, "Feature subset")
      ->check(CLI::IsMember({"all", "contextual", "physico"}))
      ->capture_default_str();
  needs_schema(ablate);

  if (argc <= 1) {
    std::cerr << app.help();
    return kExitUsage;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (app.exit(e) == 0) return kExitOk;
    std::cerr << "\n" << app.help();
    return kExitUsage;
  }
  for (CLI::App* sub : app.get_subcommands()) opt.seed_opt = sub->get_option("--seed");
  try {
    return handler(opt);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
}

}  // namespace wqscreen::cli

int main(int argc, char** argv) { return wqscreen::cli::Main(argc, argv); }
