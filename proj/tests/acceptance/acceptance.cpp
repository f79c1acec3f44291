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

// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
// failure.

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>
#include <unistd.h>

#include "wqscreen/wqscreen.hpp"

#include "../support/oracles.hpp"

namespace fs = std::filesystem;
using namespace wqscreen;

namespace {

using Clock = std::chrono::steady_clock;

double Seconds(Clock::time_point since) { return std::chrono::duration<double>(Clock::now() - since).count(); }

std::uint64_t Bits(double v) { return std::bit_cast<std::uint64_t>(v); }

std::string Fmt(const char* format, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, format, args...);
  return buf;
}

// Collects failed checks for one criterion.
struct Check {
  std::vector<std::string> failures;

  void operator()(bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  }
  bool ok() const { return failures.empty(); }
};

struct Outcome {
  bool pass = false;
  std::string detail;
};

Outcome Finish(const Check& c, std::string detail) {
  if (!c.ok()) {
    for (const auto& f : c.failures) detail += "; failed: " + f;
  }
  return {c.ok(), detail};
}

Encoded SynthFixture(int n, std::uint64_t seed) {
  SynthConfig sc;
  sc.n_rows = n;
  sc.seed = seed;
  return Encode(Generate(sc).records);
}

Outcome Contingency() {
  const auto t0 = Clock::now();
  const auto r = ContingencyStats({216, 458, 49, 1484});
  const double secs = Seconds(t0);
  Check c;
  c(std::fabs(r.chi2 - 366.11) <= 0.5, Fmt("chi2 %.4f", r.chi2));
  c(r.p < 1e-4, Fmt("p %.3g", r.p));
  c(std::fabs(r.odds_ratio - 14.28) <= 0.02, Fmt("OR %.4f", r.odds_ratio));
  c(std::fabs(r.rate_given_tc0 - 0.185) <= 0.001, Fmt("rate|TC=0 %.5f", r.rate_given_tc0));
  c(std::fabs(r.rate_given_tc1 - 0.764) <= 0.001, Fmt("rate|TC=1 %.5f", r.rate_given_tc1));
  c(secs < 1.0, Fmt("runtime %.3fs", secs));
  return Finish(c, Fmt("chi2=%.3f p=%.2g OR=%.3f rates=%.4f/%.4f in %.2gs", r.chi2, r.p, r.odds_ratio,
                       r.rate_given_tc0, r.rate_given_tc1, secs));
}

Outcome MetricIdentities() {
  // P = 696602 / 919000 = 0.758, R = 696602 / 758000 = 0.919.
  const ConfusionCounts counts{696602, 222398, 61398, 100000};
  const auto b = ClassificationBundle(counts, 2.0);
  Check c;
  c(std::fabs(b.precision - 0.758) < 1e-9, Fmt("precision %.6f", b.precision));
  c(std::fabs(b.recall - 0.919) < 1e-9, Fmt("recall %.6f", b.recall));
  c(std::fabs(b.f1 - 0.831) <= 0.001, Fmt("F1 %.5f", b.f1));
  c(std::fabs(b.f2 - 0.881) <= 0.001, Fmt("F2 %.5f", b.f2));
  c(b.fbeta == b.f2, "fbeta at beta 2 differs from f2");
  return Finish(c, Fmt("P=%.3f R=%.3f F1=%.4f F2=%.4f", b.precision, b.recall, b.f1, b.f2));
}

Outcome SplitSizes() {
  std::vector<int> labels(2207, 0);
  std::fill(labels.begin(), labels.begin() + 1533, 1);
  Rng rng(11);
  rng.Shuffle(labels);
  const auto s = StratifiedSplit(labels, 0.2, 3);
  std::vector<int> seen(labels.size(), 0);
  for (auto i : s.train) ++seen[i];
  for (auto i : s.test) ++seen[i];
  Check c;
  c(s.train.size() == 1765, Fmt("train %zu", s.train.size()));
  c(s.test.size() == 442, Fmt("test %zu", s.test.size()));
  c(std::all_of(seen.begin(), seen.end(), [](int v) { return v == 1; }), "split is not a partition");
  return Finish(c, Fmt("%zu / %zu", s.train.size(), s.test.size()));
}

Outcome NoLeakage() {
  const auto t0 = Clock::now();
  const auto enc = SynthFixture(1000, 21);
  const PipelineConfig pc;
  const auto plan = PlanFolds(enc.labels.ec, pc.folds, pc.inner_fraction, 5);
  const auto ptc = GenerateOofPtc(enc.matrix, enc.labels.tc, plan, pc.stage1, pc.nested_ptc, 6);
  const auto cv = RunStage2(enc.matrix, &ptc, enc.labels.ec, plan, pc.stage2, pc.beta, pc.calibration, 7);
  Check c;
  for (int f = 0; f < plan.k; ++f) {
    auto tc = enc.labels.tc, ec = enc.labels.ec;
    const auto held = plan.HeldOut(f);
    auto perm = held;
    Rng rng(100 + static_cast<std::uint64_t>(f));
    rng.Shuffle(perm);
    for (std::size_t i = 0; i < held.size(); ++i) {
      tc[held[i]] = 1 - enc.labels.tc[perm[i]];
      ec[held[i]] = 1 - enc.labels.ec[perm[i]];
    }
    const auto ptc2 = GenerateOofPtc(enc.matrix, tc, plan, pc.stage1, pc.nested_ptc, 6);
    const auto cv2 = RunStage2(enc.matrix, &ptc2, ec, plan, pc.stage2, pc.beta, pc.calibration, 7);
    const auto fs = static_cast<std::size_t>(f);
    bool same_ptc = true;
    for (auto i : held) same_ptc = same_ptc && Bits(ptc.values[i]) == Bits(ptc2.values[i]);
    for (std::size_t i = 0; i < plan.rows(); ++i) {
      same_ptc = same_ptc && Bits(ptc.inner_values[fs][i]) == Bits(ptc2.inner_values[fs][i]);
    }
    c(same_ptc, Fmt("fold %d PTC", f));
    c(ptc.fold_models[fs] == ptc2.fold_models[fs], Fmt("fold %d stage-1 model", f));
    c(cv.folds[fs].model == cv2.folds[fs].model, Fmt("fold %d stage-2 model", f));
    c(cv.folds[fs].calibrator == cv2.folds[fs].calibrator, Fmt("fold %d calibrator", f));
    c(Bits(cv.folds[fs].threshold) == Bits(cv2.folds[fs].threshold), Fmt("fold %d threshold", f));
  }
  const double secs = Seconds(t0);
  c(secs < 120, Fmt("runtime %.1fs", secs));
  return Finish(c, Fmt("%d folds probed, n=1000, %.1fs", plan.k, secs));
}

FeatureMatrix OneColumn(const std::vector<double>& x) {
  FeatureMatrix m({{"x0", ColumnKind::kPhysicochemical}}, x.size());
  for (std::size_t r = 0; r < x.size(); ++r) {
    if (std::isnan(x[r])) {
      m.SetMissing(r, 0);
    } else {
      m.Set(r, 0, x[r]);
    }
  }
  return m;
}

Outcome OracleEquivalences() {
  Check c;
  Rng rng(5);
  int auc_cases = 0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 2 + rng.Below(199);
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng.Below(t % 2 ? 10 : 100000)) / 7.0;
      y[i] = rng.Uniform() < 0.3;
    }
    y[0] = 1;
    y[1] = 0;
    c(std::fabs(RocAuc(s, y) - oracle::PairwiseAuc(s, y)) <= 1e-12, Fmt("(a) instance %d", t));
    ++auc_cases;
  }

  int pav_cases = 0;
  for (std::size_t n = 1; n <= 6; ++n) {
    for (int tied = 0; tied < 2; ++tied) {
      std::vector<double> x(n);
      for (std::size_t i = 0; i < n; ++i) x[i] = tied ? static_cast<double>(i / 2) : static_cast<double>(n - i) * 0.1;
      for (unsigned mask = 0; mask < (1u << n); ++mask) {
        std::vector<double> y(n);
        for (std::size_t i = 0; i < n; ++i) y[i] = (mask >> i) & 1u;
        const auto fit = PavFit(x, y);
        const auto want = oracle::ExhaustiveMonotoneFit(x, y);
        double worst = 0;
        for (std::size_t i = 0; i < n; ++i) worst = std::max(worst, std::fabs(fit[i] - want[i]));
        c(worst <= 1e-9, Fmt("(b) n=%zu mask=%u", n, mask));
        ++pav_cases;
      }
    }
  }

  int sweep_cases = 0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 1 + rng.Below(120);
    std::vector<double> p(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = static_cast<double>(rng.Below(t % 2 ? 8 : 1000)) / 1000.0;
      y[i] = rng.Bernoulli(0.2 + 0.6 * p[i]);
    }
    y[0] = 1;
    const auto got = SelectThreshold(p, y, 2.0);
    const auto want = oracle::SweepOracle(p, y, 2.0);
    c(got.threshold == want.threshold && std::fabs(got.fbeta - want.fbeta) <= 1e-12, Fmt("(c) instance %d", t));
    ++sweep_cases;
  }

  int shap_rows = 0;
  for (int t = 0; t < 50; ++t) {
    const int p = 1 + static_cast<int>(rng.Below(8));
    Tree tree;
    oracle::Grow(tree, rng, 0, 1 + static_cast<int>(rng.Below(3)), p);
    const auto model = oracle::Wrap({tree}, p, rng.Uniform(), 0.5 + rng.Uniform());
    for (int r = 0; r < 20; ++r) {
      std::vector<double> x(static_cast<std::size_t>(p));
      std::vector<std::uint8_t> miss(static_cast<std::size_t>(p), 0);
      for (std::size_t j = 0; j < x.size(); ++j) {
        if (rng.Uniform() < 0.1) {
          miss[j] = 1;
          x[j] = std::nan("");
        } else {
          x[j] = rng.Uniform();
        }
      }
      const auto fast = TreeShap(model, x, miss);
      const auto slow = BruteForceShap(model, x, miss);
      double worst = std::fabs(fast.base_value - slow.base_value);
      for (std::size_t j = 0; j < x.size(); ++j) worst = std::max(worst, std::fabs(fast.values[j] - slow.values[j]));
      c(worst <= 1e-9, Fmt("(d) tree %d row %d", t, r));
      ++shap_rows;
    }
  }

  int gain_cases = 0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 2 + rng.Below(199);
    std::vector<double> x(n), g(n), h(n), count(n, 1.0);
    const std::size_t levels = 2 + rng.Below(60);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = rng.Uniform() < 0.1 ? NAN : static_cast<double>(rng.Below(levels)) * 0.37;
      const double q = rng.Uniform();
      g[i] = q - (rng.Uniform() < 0.5 ? 1.0 : 0.0);
      h[i] = std::max(1e-3, q * (1 - q));
    }
    const auto binned = BinFeatures(OneColumn(x), 256);
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), 0);
    const std::vector<std::size_t> feats = {0};
    SplitParams params;
    params.l2 = t % 3 == 0 ? 0.0 : 1.5;
    params.min_samples_per_leaf = 1 + static_cast<double>(rng.Below(4));
    const auto best = FindBestSplit(binned, g, h, count, all, feats, params);
    const double raw = oracle::RawBestGain(x, g, h, params.l2, params.min_samples_per_leaf);
    const double want = raw > params.min_gain ? raw : 0.0;
    c(std::fabs((best.valid() ? best.gain : 0.0) - want) <= 1e-9, Fmt("(e) instance %d", t));
    ++gain_cases;
  }
  return Finish(c, Fmt("(a) %d AUC, (b) %d PAV, (c) %d sweeps, (d) %d SHAP rows, (e) %d gains, %zu mismatches",
                       auc_cases, pav_cases, sweep_cases, shap_rows, gain_cases, c.failures.size()));
}

Outcome StatisticalMachinery() {
  Check c;
  auto near_all = [](const std::vector<double>& got, const std::vector<double>& want, double tol) {
    if (got.size() != want.size()) return false;
    for (std::size_t i = 0; i < got.size(); ++i) {
      if (std::fabs(got[i] - want[i]) > tol) return false;
    }
    return true;
  };
  c(near_all(BhFdr(std::vector<double>{0.01, 0.02, 0.03}), {0.03, 0.03, 0.03}, 1e-12), "BH [0.01,0.02,0.03]");
  c(near_all(BhFdr(std::vector<double>{0.005, 0.04, 0.04, 0.8}), {0.02, 0.16 / 3, 0.16 / 3, 0.8}, 1e-12),
    "BH [0.005,0.04,0.04,0.8]");
  Rng rng(17);
  int vectors = 0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t m = 1 + rng.Below(40);
    std::vector<double> p(m);
    for (auto& v : p) v = rng.Uniform() < 0.2 ? rng.Uniform() * 0.01 : rng.Uniform();
    const auto q = BhFdr(p);
    bool ok = q.size() == m;
    for (std::size_t i = 0; ok && i < m; ++i) ok = q[i] >= p[i] && q[i] <= 1.0;
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });
    for (std::size_t i = 1; ok && i < m; ++i) ok = q[order[i - 1]] <= q[order[i]];
    c(ok, Fmt("random vector %d", t));
    ++vectors;
  }
  const double sf = ChiSquareSf1(3.841);
  c(std::fabs(sf - 0.05) <= 1e-3, Fmt("sf(3.841) %.6f", sf));
  std::vector<int> ref, cand;
  for (int i = 0; i < 10; ++i) ref.push_back(1), cand.push_back(0);
  for (int i = 0; i < 2; ++i) ref.push_back(0), cand.push_back(1);
  for (int i = 0; i < 30; ++i) ref.push_back(1), cand.push_back(1);
  const auto mc = McNemar(ref, cand);
  c(mc.b == 10 && mc.c == 2, "McNemar discordant counts");
  c(std::fabs(mc.statistic - 4.083) <= 0.01, Fmt("McNemar %.4f", mc.statistic));
  return Finish(c, Fmt("BH cases ok, %d random vectors, sf(3.841)=%.5f, McNemar=%.4f", vectors, sf, mc.statistic));
}

Outcome TwoStageValueAdd() {
  const auto t0 = Clock::now();
  int higher = 0, significant = 0;
  std::string per_seed;
  for (int s = 0; s < 5; ++s) {
    SynthConfig sc;
    sc.seed = 100 + static_cast<std::uint64_t>(s);
    const auto enc = Encode(Generate(sc).records);
    PipelineConfig pc;
    pc.seed = static_cast<std::uint64_t>(s);
    const auto plan = PlanFolds(enc.labels.ec, pc.folds, pc.inner_fraction, DeriveSeed(pc.seed, 1));
    const auto ptc = GenerateOofPtc(enc.matrix, enc.labels.tc, plan, pc.stage1, pc.nested_ptc, DeriveSeed(pc.seed, 2));
    const auto with = RunStage2(enc.matrix, &ptc, enc.labels.ec, plan, pc.stage2, pc.beta, pc.calibration,
                                DeriveSeed(pc.seed, 3));
    const auto without = RunStage2(enc.matrix, nullptr, enc.labels.ec, plan, pc.stage2, pc.beta, pc.calibration,
                                   DeriveSeed(pc.seed, 3));
    const auto w = with.pooled_view();
    const auto o = without.pooled_view();
    const auto d = PairedBootstrapDelta(o.probs, w.probs, w.labels, w.fold_ids, BootMetric::kRocAuc, 2000, 7);
    if (with.pooled.roc_auc > without.pooled.roc_auc) ++higher;
    if (d.delta > 0 && d.p_value < 0.05) ++significant;
    per_seed += Fmt(" [seed %d dAUC=%+.4f p=%.3f]", s, with.pooled.roc_auc - without.pooled.roc_auc, d.p_value);
  }
  const double secs = Seconds(t0);
  Check c;
  c(higher >= 4, Fmt("with-PTC AUC higher in %d/5 seeds", higher));
  c(significant >= 3, Fmt("positive and p<0.05 in %d/5 seeds", significant));
  c(secs < 300, Fmt("runtime %.1fs", secs));
  return Finish(c, Fmt("higher %d/5, significant %d/5, %.1fs;%s", higher, significant, secs, per_seed.c_str()));
}

Outcome FdrUnderNull() {
  const auto t0 = Clock::now();
  int cells = 0, rejected = 0, seed_cells = 0, seed_rejected = 0;
  for (int d = 0; d < 20; ++d) {
    const auto enc = SynthFixture(600, 500 + static_cast<std::uint64_t>(d));
    const PipelineConfig pc;
    const auto plan = PlanFolds(enc.labels.ec, pc.folds, pc.inner_fraction, DeriveSeed(d, 1));
    const auto ref = RunStage2(enc.matrix, nullptr, enc.labels.ec, plan, pc.stage2, pc.beta, pc.calibration,
                               DeriveSeed(d, 3), "reference");
    CvReport clone = ref;
    clone.name = "clone";
    // Same configuration retrained under another learner seed.
    const auto reseeded = RunStage2(enc.matrix, nullptr, enc.labels.ec, plan, pc.stage2, pc.beta, pc.calibration,
                                    DeriveSeed(d, 4), "reseeded");
    const auto cmp = CompareModels(ref, {clone, reseeded}, 2000, static_cast<std::uint64_t>(d));
    for (const auto& row : cmp.rows) {
      if (row.challenger == "clone") {
        ++cells;
        rejected += row.significant(0.05);
      } else {
        ++seed_cells;
        seed_rejected += row.significant(0.05);
      }
    }
  }
  Check c;
  c(cells == 60, Fmt("%d clone cells", cells));
  c(rejected * 10 <= cells, Fmt("clone rejections %d/%d", rejected, cells));
  c(seed_rejected * 10 <= seed_cells, Fmt("reseeded rejections %d/%d", seed_rejected, seed_cells));
  return Finish(c, Fmt("clone %d/%d, reseeded clone %d/%d cells rejected at q<0.05, %.1fs", rejected, cells,
                       seed_rejected, seed_cells, Seconds(t0)));
}

Outcome QcGolden() {
  const std::string data = WQSCREEN_TEST_DATA;
  const auto parsed = ParseRecords(csv::ReadFile(data + "/qc_golden.csv"));
  Check c;
  c(parsed.warnings.empty(), "parse warnings");
  c(parsed.records.size() == 12, Fmt("%zu records", parsed.records.size()));
  const auto out = EvaluateBatch(parsed.records);
  std::istringstream expected(csv::ReadFile(data + "/qc_golden_expected.jsonl"));
  std::istringstream actual(VerdictsJsonLines(out.verdicts));
  std::string e, a;
  int line = 0;
  while (std::getline(expected, e)) {
    const bool have = static_cast<bool>(std::getline(actual, a));
    c(have && a == e, Fmt("verdict line %d", line));
    ++line;
  }
  c(!std::getline(actual, a), "extra verdicts");

  auto has = [&](std::size_t row, const char* code, QcCategory cat) {
    if (row >= out.verdicts.size()) return false;
    const auto& v = out.verdicts[row];
    return v.category == cat && std::find(v.triggered.begin(), v.triggered.end(), code) != v.triggered.end();
  };
  c(out.verdicts.size() == 12 && out.verdicts[0].category == QcCategory::kOk && out.verdicts[0].triggered.empty(),
    "compliant record OK");
  c(has(1, "GPS_LOW_ACCURACY", QcCategory::kReview), "GPS 45 m REVIEW");
  c(has(2, "DUPLICATE_UUID", QcCategory::kAlert), "duplicate uuid ALERT");
  c(has(3, "DURATION_SHORT", QcCategory::kReview), "2-min household survey REVIEW");
  c(has(4, "VALUE_IMPLAUSIBLE", QcCategory::kAlert), "pH 15.2 ALERT");
  int batch = 0;
  for (const auto& v : out.verdicts) batch += std::count(v.triggered.begin(), v.triggered.end(), "BATCH_FILLING");
  c(batch == 6, Fmt("BATCH_FILLING on %d records", batch));
  std::set<QcDomain> domains;
  for (const auto& v : out.verdicts) {
    for (const auto& code : v.triggered) domains.insert(FindQcRule(code).domain);
  }
  c(domains.size() == 7, Fmt("%zu domains exercised", domains.size()));
  return Finish(c, Fmt("%d verdicts match, %zu domains exercised", line, domains.size()));
}

int Shell(const std::string& cmd) {
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string Slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Runs the CLI chain inside `dir` with relative paths throughout.
bool EndToEnd(const fs::path& dir, std::string& error) {
  fs::create_directories(dir);
  std::ofstream(dir / "synth.json") << R"({"n_rows": 400})";
  std::ofstream(dir / "compare.json") << R"({"n_boot": 500})";
  const std::string cli = WQSCREEN_CLI;
  const std::vector<std::string> steps = {
      "synth --config synth.json --seed 13 --out syn",
      "train syn/fixture.csv --seed 13 --out tr",
      "evaluate tr/cv_report.json --out ev",
      "compare tr/cv_report_no_ptc.json tr/cv_report.json --config compare.json --seed 13 --out cmp",
      "explain --model tr/model.json syn/fixture.csv --out ex",
  };
  for (const auto& step : steps) {
    const int rc = Shell("cd '" + dir.string() + "' && '" + cli + "' " + step + " > log.txt 2>&1");
    if (rc != 0) {
      error = "'" + step + "' exited " + std::to_string(rc) + ": " + Slurp(dir / "log.txt");
      return false;
    }
  }
  return true;
}

Outcome Determinism() {
  const auto t0 = Clock::now();
  const fs::path root = fs::temp_directory_path() / ("wqscreen_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(root);
  Check c;
  std::string error;
  const bool ran = EndToEnd(root / "a", error) && EndToEnd(root / "b", error);
  c(ran, error);
  std::size_t compared = 0;
  if (ran) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(root / "a")) {
      if (e.is_regular_file()) files.push_back(fs::relative(e.path(), root / "a"));
    }
    std::size_t in_b = 0;
    for (const auto& e : fs::recursive_directory_iterator(root / "b")) in_b += e.is_regular_file();
    c(files.size() == in_b, Fmt("file counts %zu vs %zu", files.size(), in_b));
    for (const auto& f : files) {
      c(Slurp(root / "a" / f) == Slurp(root / "b" / f), f.string() + " differs");
      ++compared;
    }
  }
  fs::remove_all(root);
  return Finish(c, Fmt("%zu files byte-identical across two runs, %.1fs", compared, Seconds(t0)));
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"contingency reproduction", Contingency},
      {"metric identities", MetricIdentities},
      {"split reproduction", SplitSizes},
      {"no-leakage probe", NoLeakage},
      {"oracle equivalences", OracleEquivalences},
      {"statistical machinery", StatisticalMachinery},
      {"two-stage value-add", TwoStageValueAdd},
      {"FDR calibration under the null", FdrUnderNull},
      {"QC golden vectors", QcGolden},
      {"end-to-end determinism", Determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s criterion %zu: %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
