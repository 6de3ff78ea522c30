// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fail.

#include <sys/wait.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fei/diagnostics.hpp"
#include "fei/evaluation.hpp"
#include "fei/parallel.hpp"
#include "support.hpp"

using namespace fei;
using fei::testing::max_relative_error;
using fei::testing::random_tensor;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

const std::vector<ClipMode> kAllModes{ClipMode::None, ClipMode::VM, ClipMode::IVM, ClipMode::AVM,
                                      ClipMode::IBM};

// Shared between criteria 3 and 9.
std::vector<Tensor> g_fixture_maps;

Verdict gradient_oracle() {
  Rng rng(2024);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const NetworkModel m = fei::testing::random_conv_model(rng);
    const Tensor x = random_tensor(rng, m.input_shape);
    const Index target = rng.uniform_int(0, m.num_classes - 1);
    const Tensor analytic = backward_category(m, forward(m, x), target);
    worst = std::max(worst, max_relative_error(analytic, finite_diff_gradient(m, x, target, 1e-5)));
  }
  return {worst < 1e-6, "20 models, worst relative error " + sci(worst)};
}

Verdict clip_tables() {
  Rng rng(99);
  long checked = 0, wrong = 0;
  for (int gs : {-1, 0, 1})
    for (int order : {-1, 0, 1})
      for (int xs : {-1, 0, 1})
        for (int rep = 0; rep < 1000; ++rep) {
          const double g = gs * rng.uniform(0.01, 5.0);
          const double x = xs * rng.uniform(0.01, 5.0);
          const double xt = x + order * rng.uniform(0.01, 5.0);
          const bool up = g >= 0.0, over = xt > x;
          const double want[5] = {g, (up && over) || (!up && !over) ? 0.0 : g, up && over ? 0.0 : g,
                                  !up && !over ? 0.0 : g, up && x <= 0.0 ? 0.0 : g};
          for (std::size_t k = 0; k < kAllModes.size(); ++k) wrong += apply_clip(g, xt, x, kAllModes[k]) != want[k];
          const double composed =
              apply_clip(apply_clip(g, xt, x, ClipMode::IVM), xt, x, ClipMode::AVM);
          wrong += apply_clip(g, xt, x, ClipMode::VM) != composed;
          checked += 6;
        }
  return {wrong == 0, std::to_string(checked) + " checks over 27 sign cells, " + std::to_string(wrong) + " wrong"};
}

Verdict ensemble_invariants() {
  const NetworkModel& model = fei::testing::fixture_model();
  const auto samples = fei::testing::fixture_samples(10);
  double worst_residual = 0.0;
  bool consistent = true, bounded = true;
  g_fixture_maps.clear();
  for (const auto& s : samples) {
    const MaskEnsemble e = optimize_attribution(model, s.image, s.target, AttributionConfig{});
    g_fixture_maps.push_back(e.map);
    for (std::size_t i = 0; i < e.alphas.size(); ++i) {
      bounded &= e.alphas[i].min() >= 0.0 && e.alphas[i].max() <= 1.0 && e.deltas[i].min() >= 0.0;
      if (i > 0) consistent &= (e.alphas[i].data() - e.alphas[i - 1].data()).minCoeff() >= 0.0;
      worst_residual = std::max(worst_residual, e.area_residuals[i]);
    }
    bounded &= e.map.min() >= 0.0 && e.map.max() <= 1.0;
  }

  // binary alpha blends against set perturbation
  bool binary_exact = true;
  Rng rng(3);
  const Tensor ref = make_reference(ReferenceSpec::blur(2.0), samples[0].image);
  for (int trial = 0; trial < 20; ++trial) {
    const double f = rng.uniform();
    const PixelSet lower = lower_fractile(g_fixture_maps[0], f);
    Tensor alpha({32, 32}, 1.0);
    for (const Pixel& p : lower) alpha(p.row, p.col) = 0.0;
    binary_exact &= bit_equal(blend_lower(samples[0].image, alpha, ref), perturb(samples[0].image, lower, ref));
    Tensor beta({32, 32}, 0.0);
    const PixelSet upper = upper_fractile(g_fixture_maps[0], f);
    for (const Pixel& p : upper) beta(p.row, p.col) = 1.0;
    binary_exact &= bit_equal(blend_upper(samples[0].image, beta, ref), perturb(samples[0].image, upper, ref));
  }
  return {consistent && bounded && worst_residual <= 0.05 && binary_exact,
          "consistent=" + std::to_string(consistent) + " bounded=" + std::to_string(bounded) +
              " worst area residual " + fmt(worst_residual) + " binary blends exact=" + std::to_string(binary_exact)};
}

Verdict loss_gradients() {
  double worst = 0.0;
  std::size_t params = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    NetworkModel m;
    m.input_shape = {1, 4, 4};
    m.num_classes = 3;
    m.layers = {conv2d(1, 2, 3, 1, 1), relu(true), maxpool2x2(), flatten(), linear(8, 3)};
    m.validate();
    initialize_weights(m, seed);
    for (auto& l : m.layers)
      if (l.has_weights()) l.weight.data() *= 3.0;
    params = std::max<std::size_t>(params, m.parameter_count());
    Rng rng(seed);
    const Tensor x = random_tensor(rng, m.input_shape);
    const Tensor ref = random_tensor(rng, m.input_shape);
    const Tensor alpha = random_tensor(rng, {4, 4}, 0.1, 0.6);
    const auto trace = forward(m, x);
    const double f = 0.2, beta = 0.3, h = 1e-5;
    for (auto loss : {&preservation_loss, &deletion_loss}) {
      const LossResult r = loss(m, x, trace, alpha, f, beta, ref, ClipMode::None, 1);
      Tensor numeric(alpha.shape());
      for (Index p = 0; p < alpha.size(); ++p) {
        Tensor hi = alpha, lo = alpha;
        hi[p] += h;
        lo[p] -= h;
        numeric[p] = (loss(m, x, trace, hi, f, beta, ref, ClipMode::None, 1).loss -
                      loss(m, x, trace, lo, f, beta, ref, ClipMode::None, 1).loss) / (2 * h);
      }
      worst = std::max(worst, max_relative_error(r.grad_alpha, numeric));
    }
  }
  return {worst < 1e-6 && params <= 200,
          "preservation and deletion, " + std::to_string(params) + " parameters, worst relative error " + sci(worst)};
}

Verdict preservation_ordering() {
  const auto report = compare_methods(fei::testing::fixture_model(), fei::testing::fixture_samples(20),
                                      {method_from_name("ibm"), method_from_name("none"), method_from_name("ibm_l1")},
                                      {0, 1, 2}, {}, thread_limit_from_env());
  const double ibm = report.summary[0].preservation_mean, none = report.summary[1].preservation_mean,
               l1 = report.summary[2].preservation_mean;
  return {ibm > none && ibm > l1, "mean preservation AUC ibm " + fmt(ibm) + ", none " + fmt(none) + ", ibm_l1 " + fmt(l1)};
}

Verdict defense_contrast() {
  const NetworkModel& model = fei::testing::fixture_model();
  const auto report = defense_test(model, kAllModes, AttributionConfig{}, {}, {0, 1, 2}, thread_limit_from_env());
  std::string rates;
  for (const auto& m : report.modes) rates += " " + std::string(to_string(m.mode)) + " " + fmt(m.rate);
  const double none = report.at(ClipMode::None).rate, ibm = report.at(ClipMode::IBM).rate;

  // informational only: how the verdict moves with the area coefficient
  for (double c : {1e-3, 1e-4}) {
    AttributionConfig a;
    a.schedule.beta_coefficient = c;
    const auto r = defense_test(model, {ClipMode::None, ClipMode::IBM}, a, {}, {0, 1, 2}, thread_limit_from_env());
    std::cout << "info: defense with beta coefficient " << c << ": none " << fmt(r.modes[0].rate) << ", ibm "
              << fmt(r.modes[1].rate) << "\n";
  }
  return {none >= 0.9 && ibm < none, "success rates" + rates};
}

Verdict reconstruction_contrast() {
  const NetworkModel& model = fei::testing::fixture_model();
  const auto samples = fei::testing::fixture_samples(5);
  double mse[2] = {0.0, 0.0};
  const ClipMode modes[2] = {ClipMode::VM, ClipMode::AVM};
  for (int k = 0; k < 2; ++k)
    for (const auto& s : samples)
      for (std::uint64_t seed : {0, 1, 2}) {
        ReconstructionConfig cfg;
        cfg.clip_mode = modes[k];
        cfg.seed = seed;
        mse[k] += mean_squared_error(reconstruct(model, s.image, s.target, cfg), s.image) / 15.0;
      }
  return {mse[0] < mse[1], "mean MSE vm " + fmt(mse[0]) + ", avm " + fmt(mse[1])};
}

Verdict sanity_cascade() {
  const NetworkModel& model = fei::testing::fixture_model();
  const auto samples = fei::testing::fixture_samples(5);
  std::size_t weighted = 0;
  for (const auto& l : model.layers) weighted += l.has_weights();
  bool stage0_exact = true;
  double stage1 = 0.0, full = 0.0;
  for (const auto& s : samples) {
    const auto r = sanity_check(model, s.image, s.target, weighted, AttributionConfig{});
    stage0_exact &= r.stages[0].spearman == 1.0;
    stage1 += r.stages[1].spearman / 5.0;
    full += r.stages.back().spearman / 5.0;
  }
  return {stage0_exact && full < stage1, "stage 0 exact=" + std::to_string(stage0_exact) + ", mean stage 1 " +
                                             fmt(stage1) + ", mean stage " + std::to_string(weighted) + " " + fmt(full)};
}

Verdict rank_invariance() {
  if (g_fixture_maps.empty()) return {false, "no fixture maps (criterion 3 did not run)"};
  const NetworkModel& model = fei::testing::fixture_model();
  const auto samples = fei::testing::fixture_samples(g_fixture_maps.size());
  const EvalProtocol protocol;
  const std::vector<std::function<double(double)>> transforms = {
      [](double v) { return std::exp(5.0 * v); }, [](double v) { return v * v * v + v - 3.0; },
      [](double v) { return std::atan(10.0 * v); }, [](double v) { return 2.0 * v + 0.25; }};
  std::size_t compared = 0, differing = 0;
  for (std::size_t i = 0; i < g_fixture_maps.size(); ++i) {
    const Tensor& map = g_fixture_maps[i];
    const Tensor pres_ref = make_reference(protocol.preservation_reference, samples[i].image);
    const Tensor del_ref = make_reference(protocol.deletion_reference, samples[i].image);
    const auto pres = faithfulness_curve(model, samples[i].image, map, CurveKind::Preservation, pres_ref, samples[i].target);
    const auto del = faithfulness_curve(model, samples[i].image, map, CurveKind::Deletion, del_ref, samples[i].target);
    for (const auto& fn : transforms) {
      Tensor t(map.shape());
      for (Index k = 0; k < map.size(); ++k) t[k] = fn(map[k]);
      for (double f : pres.fractions)
        differing += lower_fractile(t, f) != lower_fractile(map, f) || upper_fractile(t, f) != upper_fractile(map, f);
      const auto p2 = faithfulness_curve(model, samples[i].image, t, CurveKind::Preservation, pres_ref, samples[i].target);
      const auto d2 = faithfulness_curve(model, samples[i].image, t, CurveKind::Deletion, del_ref, samples[i].target);
      differing += p2.scores != pres.scores || p2.auc != pres.auc || d2.scores != del.scores || d2.auc != del.auc;
      ++compared;
    }
  }
  return {differing == 0, std::to_string(compared) + " map/transform pairs, " + std::to_string(differing) + " differences"};
}

// Criterion 10 ---------------------------------------------------------------

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(FEI_CLI_PATH) + " " + args + " >>" + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Verdict reproducibility() {
  const fs::path root = fs::temp_directory_path() / "fei_acceptance_replay";
  fs::remove_all(root);
  fs::create_directories(root);
  const fs::path log = root / "log.txt";
  const std::string model = fei::testing::fixture_model_path().string();
  const std::string data = (root / "data").string();
  const std::string small = " --fractions 0.7,0.3 --iters 10";

  struct Case {
    std::string name, args, out;  // out is the --out value
  };
  const std::vector<Case> cases = {
      {"gen-data", "gen-data --count 6 --seed 3", data},
      {"train-fixture", "train-fixture --train-count 150 --test-count 30 --epochs 2 --min-accuracy 0",
       (root / "train").string()},
      {"attribute", "attribute --model " + model + " --image " + data + " --index 2" + small, (root / "attr").string()},
      {"eval", "eval --model " + model + " --dataset " + data + " --count 2 --seeds 2 --methods ibm,none" + small,
       (root / "eval" / "report.csv").string()},
      {"reconstruct", "reconstruct --model " + model + " --image " + data + " --iters 20", (root / "rec").string()},
      {"defense", "defense --model " + model + " --seeds 1 --clip none,ibm" + small, (root / "def").string()},
      {"sanity", "sanity --model " + model + " --image " + data + " --stages 2" + small, (root / "san").string()},
  };

  std::vector<std::string> problems;
  std::size_t files = 0;
  for (const auto& c : cases) {
    if (run_cli(c.args + " --out " + c.out, log) != 0) {
      problems.push_back(c.name + " failed");
      continue;
    }
    const fs::path out(c.out);
    const fs::path dir = c.name == "eval" ? out.parent_path() : out;
    const nlohmann::json manifest = nlohmann::json::parse(slurp(dir / "manifest.json"));
    const fs::path replay_out = root / "replay" / c.name / out.filename();
    if (run_cli("replay --manifest " + (dir / "manifest.json").string() + " --out " + replay_out.string(), log) != 0) {
      problems.push_back(c.name + " replay failed");
      continue;
    }
    const fs::path replay_dir = c.name == "eval" ? replay_out.parent_path() : replay_out;
    for (const auto& f : manifest.at("outputs")) {
      const std::string name = f.get<std::string>();
      ++files;
      if (slurp(dir / name) != slurp(replay_dir / name) || !fs::exists(replay_dir / name))
        problems.push_back(c.name + "/" + name + " differs");
    }
  }
  std::string detail = std::to_string(cases.size()) + " subcommands, " + std::to_string(files) + " outputs compared";
  for (const auto& p : problems) detail += "; " + p;
  if (problems.empty()) fs::remove_all(root);
  return {problems.empty() && files > 0, detail};
}

}  // namespace

int main() {
  const std::vector<std::pair<int, Verdict (*)()>> criteria = {
      {1, gradient_oracle},       {2, clip_tables},        {3, ensemble_invariants},
      {4, loss_gradients},        {5, preservation_ordering}, {6, defense_contrast},
      {7, reconstruction_contrast}, {8, sanity_cascade},   {9, rank_invariance},
      {10, reproducibility},
  };
  int failures = 0;
  for (const auto& [id, fn] : criteria) {
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failures += !v.pass;
    std::cout << "criterion " << id << ": " << (v.pass ? "PASS" : "FAIL") << " (" << v.detail << ")" << std::endl;
  }
  std::cout << (criteria.size() - failures) << "/" << criteria.size() << " criteria passed" << std::endl;
  return failures == 0 ? 0 : 1;
}
