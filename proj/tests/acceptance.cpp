// Acceptance runs. Prints one PASS/FAIL line per criterion and exits nonzero
// when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "planesynth.hpp"
#include "planesynth/testing/self_check.hpp"

using namespace planesynth;
namespace pt = planesynth::testing;

namespace {

constexpr std::size_t kSteps = 300;
constexpr std::size_t kRecoverySteps = 400;
constexpr double kRecoveryPsnr = 30.0;
const std::vector<std::uint64_t> kSeeds = {1, 2, 3, 4, 5};

struct Outcome {
  bool pass{false};
  std::string detail;
};

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s.precision(digits);
  s << std::fixed << v;
  return s.str();
}

std::string suite_detail(const pt::SuiteResult& r) {
  std::string s = std::to_string(r.passed) + " passed, " + std::to_string(r.failed) + " failed";
  for (const auto& f : r.failures) s += "; " + f;
  return s;
}

RunConfig base_config(const std::string& scene, std::uint64_t seed) {
  RunConfig c;
  c.scene = scene;
  c.seed = seed;
  c.planes = kFamilyBins;
  c.steps = kSteps;
  c.rig = Rig{64, 64, 64};
  return c;
}

// Memoised fits keyed by a description of the run, so that criteria sharing a
// configuration share the run.
class Runs {
 public:
  const FitResult& get(const RunConfig& c) {
    const std::string key = c.scene + "/" + std::to_string(c.seed) + "/" + std::string(to_string(c.placement)) + "/" +
                            c.schedule + "/" + (c.loss.mask == MaskMode::On ? "mask" : "nomask") + "/" +
                            std::to_string(c.steps);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    const auto t0 = std::chrono::steady_clock::now();
    FitResult r = run_fit(c);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("  run %-40s rv %10.4f  total %.6f  psnr %6.2f  (%.1f s)\n", key.c_str(), r.final_rv,
                r.final_loss.total, r.final_psnr, secs);
    std::fflush(stdout);
    return cache_.emplace(key, std::move(r)).first->second;
  }

 private:
  std::map<std::string, FitResult> cache_;
};

Outcome compositing_identity() {
  const auto r = pt::compositing_identity_suite(1, 1000);
  return {r.ok(), suite_detail(r)};
}

Outcome oracle_equivalence() {
  const auto r = pt::oracle_suite();
  return {r.ok(), suite_detail(r)};
}

Outcome gradient_suite() {
  const auto r = pt::gradient_suite();
  return {r.ok(), suite_detail(r)};
}

Outcome attention_correctness() {
  const auto r = pt::attention_suite();
  const auto full = attention_memory_estimate(64, 64, 64 * 64, 32);
  const auto bs = attention_memory_estimate(64, 64, 400, 32);
  return {r.ok(), suite_detail(r) + "; matrix " + std::to_string(full.matrix_bytes) + " -> " +
                      std::to_string(bs.matrix_bytes) + " bytes"};
}

Outcome placement_trend(Runs& runs) {
  const std::vector<PlacementKind> arms = {PlacementKind::Random, PlacementKind::Equal, PlacementKind::Global,
                                           PlacementKind::Local};
  std::map<PlacementKind, double> med;
  for (PlacementKind k : arms) {
    std::vector<double> rv;
    for (std::uint64_t s : kSeeds) {
      RunConfig c = base_config("uniform", s);
      c.placement = k;
      rv.push_back(runs.get(c).final_rv);
    }
    med[k] = median_of(rv);
  }
  std::vector<PlacementKind> order = arms;  // best (lowest RV) first
  std::sort(order.begin(), order.end(), [&](PlacementKind a, PlacementKind b) { return med[a] < med[b]; });
  const auto rank_of = [&](PlacementKind k) { return std::size_t(std::find(order.begin(), order.end(), k) - order.begin()); };
  const bool local_vs_random = med[PlacementKind::Local] <= 0.7 * med[PlacementKind::Random];
  const bool local_vs_equal = med[PlacementKind::Local] <= med[PlacementKind::Equal];
  const bool global_bottom = rank_of(PlacementKind::Global) >= 2;
  std::string d = "median RV random " + fmt(med[PlacementKind::Random]) + ", equal " + fmt(med[PlacementKind::Equal]) +
                  ", global " + fmt(med[PlacementKind::Global]) + ", local " + fmt(med[PlacementKind::Local]) +
                  "; local/random " + fmt(med[PlacementKind::Local] / med[PlacementKind::Random], 3) +
                  (local_vs_random ? " <= 0.7" : " > 0.7") + "; local " + (local_vs_equal ? "<=" : ">") +
                  " equal; global rank " + std::to_string(rank_of(PlacementKind::Global) + 1) + " of 4" +
                  (global_bottom ? "" : " (needs 3 or 4)");
  return {local_vs_random && local_vs_equal && global_bottom, d};
}

Outcome schedule_trend(Runs& runs) {
  auto wins = [&](const std::string& family, const std::string& better, std::string& log) {
    std::size_t n = 0;
    for (std::uint64_t s : kSeeds) {
      RunConfig u = base_config(family, s), a = base_config(family, s);
      a.schedule = "aopt";
      const double lu = runs.get(u).final_loss.total, la = runs.get(a).final_loss.total;
      const bool win = better == "aopt" ? la <= lu : lu <= la;
      n += win;
      log += " " + std::to_string(s) + (win ? "+" : "-");
    }
    return n;
  };
  std::string agg_log, uni_log;
  const std::size_t agg = wins("aggregated", "aopt", agg_log);
  const std::size_t uni = wins("uniform", "uopt", uni_log);
  return {agg >= 3 && uni >= 3, "aggregated: A-opt <= U-opt on " + std::to_string(agg) + "/5 (" + agg_log.substr(1) +
                                    "); uniform: U-opt <= A-opt on " + std::to_string(uni) + "/5 (" +
                                    uni_log.substr(1) + ")"};
}

Outcome mask_ablation(Runs& runs) {
  std::size_t n = 0;
  std::string log;
  for (std::uint64_t s : kSeeds) {
    RunConfig on = base_config("occlusion", s), off = base_config("occlusion", s);
    off.loss.mask = MaskMode::Off;
    const double p_on = runs.get(on).final_psnr, p_off = runs.get(off).final_psnr;
    n += p_on >= p_off;
    log += " " + std::to_string(s) + ":" + fmt(p_on, 2) + (p_on >= p_off ? ">=" : "<") + fmt(p_off, 2);
  }
  return {n >= 4, "masked PSNR >= unmasked on " + std::to_string(n) + "/5 seeds (" + log.substr(1) + ")"};
}

Outcome recovery(Runs& runs) {
  const RecoveryScene truth = recovery_scene(1, Rig{64, 64, 64});
  RunConfig c = base_config("recovery", 1);
  c.steps = kRecoverySteps;
  const FitResult& r = runs.get(c);
  const DisparityBins bins = family_bins();
  bool ok = r.final_psnr > kRecoveryPsnr;
  std::string d = "target PSNR " + fmt(r.final_psnr, 2) + (ok ? " > " : " <= ") + fmt(kRecoveryPsnr, 0) + " dB;";
  for (std::size_t k = 0; k < 3; ++k) {
    const double err = std::abs(r.stack.disparity[truth.bins[k]] - truth.disparity[k]) / bins.width();
    ok = ok && err <= 0.1;
    d += " plane " + std::to_string(truth.bins[k] + 1) + " off by " + fmt(err, 3) + " bin widths";
  }
  return {ok, d + " (limit 0.1)"};
}

Outcome determinism(Runs& runs) {
  RunConfig c = base_config("uniform", 1);
  const std::string first = history_csv(runs.get(c).history, c.planes);
  const std::string again = history_csv(run_fit(c).history, c.planes);
  return {first == again, std::string("history CSV of the first placement-sweep seed ") +
                              (first == again ? "is byte-identical" : "differs") + " on rerun (" +
                              std::to_string(first.size()) + " bytes)"};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    double limit_seconds;
    std::function<Outcome()> run;
  };
  Runs runs;
  const std::vector<Criterion> criteria = {
      {1, "compositing identity", 1.0, compositing_identity},
      {2, "oracle equivalence", 10.0, oracle_equivalence},
      {3, "gradient suite", 60.0, gradient_suite},
      {4, "block-sampled attention", 10.0, attention_correctness},
      {5, "placement trend", 900.0, [&] { return placement_trend(runs); }},
      {6, "schedule trend", 900.0, [&] { return schedule_trend(runs); }},
      {7, "mask ablation", 600.0, [&] { return mask_ablation(runs); }},
      {8, "exact-representability recovery", 300.0, [&] { return recovery(runs); }},
      {9, "determinism", 0.0, [&] { return determinism(runs); }},
  };
  std::vector<std::string> lines;
  int failures = 0;
  for (const auto& c : criteria) {
    std::printf("criterion %d (%s)\n", c.id, c.name);
    std::fflush(stdout);
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::string timing = fmt(secs, 2) + " s";
    if (c.limit_seconds > 0.0) {
      timing += " (limit " + fmt(c.limit_seconds, 0) + " s)";
      if (secs >= c.limit_seconds) {
        o.pass = false;
        timing += " over the time limit";
      }
    }
    failures += !o.pass;
    char head[96];
    std::snprintf(head, sizeof head, "criterion %d %s: ", c.id, o.pass ? "PASS" : "FAIL");
    lines.push_back(std::string(head) + c.name + ": " + o.detail + " [" + timing + "]");
    std::printf("%s\n", lines.back().c_str());
    std::fflush(stdout);
  }
  std::printf("\nsummary\n");
  for (const auto& l : lines) std::printf("%s\n", l.c_str());
  std::printf("%d of %zu criteria passed\n", int(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
