// fei: command-line front end for attribution, evaluation and diagnostics.
//
// Every flag is held as a string so that the manifest records exactly what a
// run resolved to, and `fei replay` can feed those strings back unchanged.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fei/diagnostics.hpp"
#include "fei/error.hpp"
#include "fei/evaluation.hpp"
#include "fei/parallel.hpp"
#include "fei/serialize.hpp"
#include "fei/train.hpp"
#include "fei/viz_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kToolVersion = "1.0.0";

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Flags = std::map<std::string, std::string>;

struct FlagSpec {
  std::string name;
  std::string default_value;
  std::string help;
  std::vector<std::string> choices{};
  bool is_path = false;  ///< stored absolute in the manifest
};

struct RunContext {
  Flags flags;
  json input_hashes = json::object();
  json seeds = json::object();
  std::vector<std::string> outputs;
  fs::path manifest_dir;
};

// ---------------------------------------------------------------------------
// flag accessors

const std::string& str(const Flags& f, const std::string& key) {
  const auto it = f.find(key);
  if (it == f.end()) throw UsageError("missing flag --" + key);
  return it->second;
}

double num(const Flags& f, const std::string& key) {
  const std::string& s = str(f, key);
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw UsageError("--" + key + " expects a number, got '" + s + "'");
}

std::int64_t integer(const Flags& f, const std::string& key) {
  const std::string& s = str(f, key);
  try {
    std::size_t used = 0;
    const long long v = std::stoll(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw UsageError("--" + key + " expects an integer, got '" + s + "'");
}

std::uint64_t count(const Flags& f, const std::string& key) {
  const std::int64_t v = integer(f, key);
  if (v < 0) throw UsageError("--" + key + " must be non-negative");
  return static_cast<std::uint64_t>(v);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

std::vector<double> num_list(const Flags& f, const std::string& key) {
  std::vector<double> out;
  for (const auto& item : split_list(str(f, key))) {
    Flags one{{key, item}};
    out.push_back(num(one, key));
  }
  if (out.empty()) throw UsageError("--" + key + " needs at least one value");
  return out;
}

// ---------------------------------------------------------------------------
// files

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw fei::Error("io-error", "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void hash_input(RunContext& ctx, const fs::path& path) {
  ctx.input_hashes[path.string()] = "fnv1a64:" + hex64(fnv1a(read_bytes(path)));
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw fei::Error("io-error", "cannot write " + path.string());
  out << text;
  if (!out) throw fei::Error("io-error", "short write to " + path.string());
}

fs::path output_dir(RunContext& ctx, const std::string& key = "out") {
  const fs::path dir = str(ctx.flags, key);
  fs::create_directories(dir);
  ctx.manifest_dir = dir;
  return dir;
}

void record(RunContext& ctx, const fs::path& path) { ctx.outputs.push_back(path.filename().string()); }

// A dataset directory holds images.idx / labels.idx as written by gen-data.
fs::path images_file(const fs::path& p) { return fs::is_directory(p) ? p / "images.idx" : p; }

fei::Tensor load_image(RunContext& ctx, const std::string& image_key, const std::string& index_key) {
  const fs::path path = images_file(str(ctx.flags, image_key));
  hash_input(ctx, path);
  if (path.extension() == ".pgm") {
    const fei::Tensor m = fei::read_pgm(path);
    return m.reshaped({1, m.dim(0), m.dim(1)});
  }
  const auto images = fei::read_idx_images(path);
  const std::uint64_t index = count(ctx.flags, index_key);
  if (index >= images.size())
    throw fei::Error("bad-index", "image index " + std::to_string(index) + " outside dataset of " +
                                      std::to_string(images.size()));
  return images[index];
}

fei::NetworkModel load_model(RunContext& ctx) {
  const fs::path path = str(ctx.flags, "model");
  hash_input(ctx, path);
  return fei::load_weights(path);
}

fei::Index resolve_target(const Flags& f, const fei::NetworkModel& model, const fei::Tensor& x) {
  if (str(f, "target") == "predicted") return fei::argmax_class(fei::forward(model, x));
  const std::int64_t t = integer(f, "target");
  if (t < 0 || t >= model.num_classes)
    throw fei::Error("bad-target", "target " + std::to_string(t) + " outside [0," +
                                       std::to_string(model.num_classes) + ")");
  return t;
}

fei::FractileSchedule schedule_from(const Flags& f) {
  fei::FractileSchedule s;
  s.fractions = num_list(f, "fractions");
  s.iterations = static_cast<int>(integer(f, "iters"));
  s.beta_coefficient = num(f, "beta-coef");
  s.validate();
  return s;
}

fei::AdamParams adam_from(const Flags& f) {
  fei::AdamParams a;
  a.lr = num(f, "lr");
  return a;
}

// Defense takes a list of clip modes and sets the mode per trial itself.
fei::AttributionConfig attribution_from(RunContext& ctx, bool single_clip = true) {
  const Flags& f = ctx.flags;
  fei::AttributionConfig a;
  a.schedule = schedule_from(f);
  if (single_clip) a.config.clip_mode = fei::parse_clip_mode(str(f, "clip"));
  a.config.objective = fei::parse_objective(str(f, "objective"));
  a.config.mode = fei::parse_ensemble_mode(str(f, "mode"));
  a.config.adam = adam_from(f);
  a.config.rng_seed = count(f, "seed");
  a.reference.kind = fei::parse_reference_kind(str(f, "reference"));
  a.reference.sigma = num(f, "sigma");
  a.reference.seed = a.config.rng_seed;
  ctx.seeds["seed"] = a.config.rng_seed;
  return a;
}

json tensor_json(const fei::Tensor& t) {
  return json{{"shape", t.shape()},
              {"values", std::vector<double>(t.data().begin(), t.data().end())}};
}

// ---------------------------------------------------------------------------
// subcommands

void run_gen_data(RunContext& ctx) {
  const Flags& f = ctx.flags;
  const std::uint64_t seed = count(f, "seed");
  ctx.seeds["seed"] = seed;
  const auto data = fei::gen_shapes(seed, count(f, "count"), fei::parse_split(str(f, "split")));
  const fs::path dir = output_dir(ctx);
  fei::write_idx_images(data.images, dir / "images.idx");
  fei::write_idx_labels(data.labels, dir / "labels.idx");
  std::vector<fei::Tensor> masks;
  for (const auto& m : data.masks) masks.push_back(m.reshaped({1, m.dim(0), m.dim(1)}));
  fei::write_idx_images(masks, dir / "masks.idx");
  json meta{{"seed", seed}, {"count", data.size()}, {"split", fei::to_string(data.split)},
            {"class_names", std::vector<std::string>(fei::kShapeClassNames.begin(),
                                                     fei::kShapeClassNames.end())}};
  write_text(dir / "dataset.json", meta.dump(2) + "\n");
  for (const char* name : {"images.idx", "labels.idx", "masks.idx", "dataset.json"})
    record(ctx, dir / name);
}

void run_train_fixture(RunContext& ctx) {
  const Flags& f = ctx.flags;
  fei::TrainConfig cfg;
  cfg.epochs = static_cast<int>(integer(f, "epochs"));
  cfg.batch_size = count(f, "batch");
  cfg.learning_rate = num(f, "lr");
  cfg.train_count = count(f, "train-count");
  cfg.test_count = count(f, "test-count");
  cfg.init_seed = count(f, "init-seed");
  cfg.shuffle_seed = count(f, "shuffle-seed");
  cfg.min_accuracy = num(f, "min-accuracy");
  const std::uint64_t dataset_seed = count(f, "dataset-seed");
  ctx.seeds = {{"dataset-seed", dataset_seed},
               {"init-seed", cfg.init_seed},
               {"shuffle-seed", cfg.shuffle_seed}};

  const fs::path dir = output_dir(ctx);
  const auto result = fei::train_fixture(dataset_seed, cfg);
  fei::save_weights(result.model, dir / "model.feiw");
  const json report{{"test_accuracy", result.test_accuracy},
                    {"final_train_loss", result.final_train_loss},
                    {"parameter_count", result.model.parameter_count()}};
  write_text(dir / "train_report.json", report.dump(2) + "\n");
  record(ctx, dir / "model.feiw");
  record(ctx, dir / "train_report.json");
  std::cout << "test accuracy " << result.test_accuracy << "\n";
}

void run_attribute(RunContext& ctx) {
  const Flags& f = ctx.flags;
  const auto model = load_model(ctx);
  const auto x = load_image(ctx, "image", "index");
  const fei::Index target = resolve_target(f, model, x);
  const auto attribution = attribution_from(ctx);
  const auto ens = fei::optimize_attribution(model, x, target, attribution);

  const fs::path dir = output_dir(ctx);
  fei::write_pgm(ens.map, dir / "M.pgm");
  record(ctx, dir / "M.pgm");
  fei::write_ppm(fei::render_heatmap(ens.map, x.reshaped(fei::spatial_shape(x)), 0.6),
                 dir / "heatmap.ppm");
  record(ctx, dir / "heatmap.ppm");
  json sidecar{{"target", target},
               {"predicted", fei::argmax_class(fei::forward(model, x))},
               {"clip_mode", fei::to_string(attribution.config.clip_mode)},
               {"objective", fei::to_string(attribution.config.objective)},
               {"mode", fei::to_string(attribution.config.mode)},
               {"fractions", ens.fractions},
               {"final_losses", ens.final_losses},
               {"area_residuals", ens.area_residuals},
               {"final_score", ens.final_score},
               {"alpha_maps", json::array()},
               {"map", tensor_json(ens.map)}};
  for (std::size_t i = 0; i < ens.alphas.size(); ++i) {
    const std::string name = "alpha_" + std::to_string(i) + ".pgm";
    fei::write_pgm(ens.alphas[i], dir / name);
    record(ctx, dir / name);
    sidecar["alpha_maps"].push_back({{"fraction", ens.fractions[i]}, {"file", name}});
  }
  const fei::EvalProtocol protocol;
  std::string curves;
  for (const auto kind : {fei::CurveKind::Preservation, fei::CurveKind::Deletion}) {
    const auto& ref = kind == fei::CurveKind::Preservation ? protocol.preservation_reference
                                                           : protocol.deletion_reference;
    const auto curve = fei::faithfulness_curve(model, x, ens.map, kind, ref, target, protocol.grid_step);
    const std::string name = std::string(fei::to_string(kind)) + "_curve.csv";
    write_text(dir / name, fei::curve_csv(curve));
    record(ctx, dir / name);
    sidecar[std::string(fei::to_string(kind)) + "_auc"] = curve.auc;
  }
  write_text(dir / "attribution.json", sidecar.dump(2) + "\n");
  record(ctx, dir / "attribution.json");
}

void run_eval(RunContext& ctx) {
  const Flags& f = ctx.flags;
  const auto model = load_model(ctx);
  const fs::path dataset = str(f, "dataset");
  const fs::path images_path = images_file(dataset);
  hash_input(ctx, images_path);
  auto images = fei::read_idx_images(images_path);
  std::vector<fei::Index> labels;
  const bool by_label = str(f, "target") == "label";
  if (by_label) {
    const fs::path labels_path = fs::is_directory(dataset) ? dataset / "labels.idx"
                                                           : fs::path(str(f, "labels"));
    hash_input(ctx, labels_path);
    labels = fei::read_idx_labels(labels_path);
    if (labels.size() != images.size())
      throw fei::Error("count-mismatch", "labels and images differ in count");
  }
  const std::uint64_t n = std::min<std::uint64_t>(count(f, "count"), images.size());
  std::vector<fei::EvalSample> samples;
  for (std::uint64_t i = 0; i < n; ++i) {
    const fei::Index target = by_label ? labels[i] : fei::argmax_class(fei::forward(model, images[i]));
    samples.push_back({images[i], target});
  }

  const auto schedule = schedule_from(f);
  const auto adam = adam_from(f);
  std::vector<fei::MethodConfig> methods;
  for (const auto& name : split_list(str(f, "methods"))) {
    auto m = fei::method_from_name(name, schedule, adam);
    m.config.objective = fei::parse_objective(str(f, "objective"));
    methods.push_back(std::move(m));
  }
  if (methods.empty()) throw UsageError("--methods needs at least one method");
  const std::uint64_t seed_base = count(f, "seed");
  std::vector<std::uint64_t> seeds;
  for (std::uint64_t s = 0; s < count(f, "seeds"); ++s) seeds.push_back(seed_base + s);
  ctx.seeds["seeds"] = seeds;

  const auto report =
      fei::compare_methods(model, samples, methods, seeds, {}, fei::thread_limit_from_env());
  const fs::path out = str(f, "out");
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  ctx.manifest_dir = out.has_parent_path() ? out.parent_path() : fs::path(".");
  write_text(out, report.to_csv());
  const fs::path summary = out.parent_path() / (out.stem().string() + "_summary.csv");
  write_text(summary, report.summary_csv());
  record(ctx, out);
  record(ctx, summary);
  std::cout << report.summary_csv();
}

void run_reconstruct(RunContext& ctx) {
  const Flags& f = ctx.flags;
  const auto model = load_model(ctx);
  const auto x = load_image(ctx, "image", "index");
  const fei::Index target = resolve_target(f, model, x);
  fei::ReconstructionConfig cfg;
  cfg.iterations = static_cast<int>(integer(f, "iters"));
  cfg.learning_rate = num(f, "lr");
  cfg.clip_mode = fei::parse_clip_mode(str(f, "clip"));
  cfg.seed = count(f, "seed");
  ctx.seeds["seed"] = cfg.seed;
  const auto rec = fei::reconstruct(model, x, target, cfg);

  const fs::path dir = output_dir(ctx);
  fei::write_pgm(rec, dir / "reconstruction.pgm");
  const json report{{"target", target},
                    {"clip_mode", fei::to_string(cfg.clip_mode)},
                    {"mse", fei::mean_squared_error(rec, x)},
                    {"score", fei::forward(model, rec).probabilities[target]},
                    {"reconstruction", tensor_json(rec)}};
  write_text(dir / "reconstruction.json", report.dump(2) + "\n");
  record(ctx, dir / "reconstruction.pgm");
  record(ctx, dir / "reconstruction.json");
}

void run_defense(RunContext& ctx) {
  const Flags& f = ctx.flags;
  const auto model = load_model(ctx);
  const auto attribution = attribution_from(ctx, false);
  std::vector<fei::ClipMode> modes;
  for (const auto& m : split_list(str(f, "clip"))) modes.push_back(fei::parse_clip_mode(m));
  if (modes.empty()) throw UsageError("--clip needs at least one mode");
  fei::DefenseRule rule;
  rule.rule = str(f, "success-rule") == "argmax" ? fei::SuccessRule::Argmax
                                                 : fei::SuccessRule::ProbabilityThreshold;
  rule.threshold = num(f, "threshold");
  const std::uint64_t seed_base = count(f, "seed");
  std::vector<std::uint64_t> seeds;
  for (std::uint64_t s = 0; s < count(f, "seeds"); ++s) seeds.push_back(seed_base + s);
  ctx.seeds["seeds"] = seeds;

  const auto report = fei::defense_test(model, modes, attribution, rule, seeds,
                                        fei::thread_limit_from_env());
  const fs::path dir = output_dir(ctx);
  write_text(dir / "defense.json", report.to_json() + "\n");
  record(ctx, dir / "defense.json");
  for (const auto& m : report.modes)
    std::cout << fei::to_string(m.mode) << " success rate " << m.rate << "\n";
}

void run_sanity(RunContext& ctx) {
  const Flags& f = ctx.flags;
  const auto model = load_model(ctx);
  const auto x = load_image(ctx, "image", "index");
  const fei::Index target = resolve_target(f, model, x);
  const auto attribution = attribution_from(ctx);
  const std::uint64_t rand_seed = count(f, "randomization-seed");
  ctx.seeds["randomization-seed"] = rand_seed;
  const std::int64_t stages_flag = integer(f, "stages");
  const std::size_t stages = stages_flag < 0 ? model.weighted_layers_from_output().size()
                                             : static_cast<std::size_t>(stages_flag);
  const auto report = fei::sanity_check(model, x, target, stages, attribution, rand_seed);

  const fs::path dir = output_dir(ctx);
  write_text(dir / "sanity.json", report.to_json() + "\n");
  record(ctx, dir / "sanity.json");
  for (const auto& s : report.stages) {
    const std::string name = "stage_" + std::to_string(s.stage) + ".pgm";
    fei::write_pgm(s.map, dir / name);
    record(ctx, dir / name);
    std::cout << "stage " << s.stage << " spearman " << s.spearman << "\n";
  }
}

// ---------------------------------------------------------------------------
// registry

struct Command {
  std::string name;
  std::string help;
  std::vector<FlagSpec> flags;
  std::function<void(RunContext&)> run;
};

const std::vector<std::string> kClipNames = {"none", "vm", "ivm", "avm", "ibm"};

std::vector<FlagSpec> optimizer_flags(std::string clip_default = "ibm") {
  return {
      {"clip", std::move(clip_default), "gradient clipping mode", kClipNames},
      {"objective", "preservation", "preservation or deletion", {"preservation", "deletion"}},
      {"mode", "ensemble", "ensemble, single or l1", {"ensemble", "single", "l1"}},
      {"fractions", "0.9,0.7,0.5,0.3,0.1", "comma-separated descending fractions"},
      {"iters", "100", "Adam iterations per fraction"},
      {"beta-coef", "0.01", "area weight growth per iteration"},
      {"lr", "0.05", "Adam learning rate for the masks"},
      {"reference", "random-monotone", "optimization reference",
       {"random-monotone", "gray", "black", "blur", "noise"}},
      {"sigma", "2", "blur sigma when --reference blur"},
      {"seed", "0", "seed for reference draws"},
  };
}

std::vector<FlagSpec> concat(std::vector<FlagSpec> a, const std::vector<FlagSpec>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

const std::vector<Command>& commands() {
  static const std::vector<Command> all = {
      {"gen-data",
       "generate the synthetic shapes dataset",
       {{"seed", "1", "dataset seed"},
        {"count", "300", "number of images"},
        {"split", "test", "train or test", {"train", "test"}},
        {"out", "data", "output directory", {}, true}},
       run_gen_data},
      {"train-fixture",
       "train the fixture classifier",
       {{"dataset-seed", "1", "dataset seed"},
        {"epochs", "20", "training epochs"},
        {"batch", "32", "minibatch size"},
        {"lr", "0.001", "Adam learning rate"},
        {"train-count", "2000", "training images"},
        {"test-count", "300", "held-out images"},
        {"init-seed", "1", "weight initialization seed"},
        {"shuffle-seed", "2", "minibatch order seed"},
        {"min-accuracy", "0.9", "fail below this held-out accuracy"},
        {"out", "fixture", "output directory", {}, true}},
       run_train_fixture},
      {"attribute",
       "optimize an attribution map for one image",
       concat({{"model", "", "FEIW0001 weight file", {}, true},
               {"image", "", "PGM file, IDX file or dataset directory", {}, true},
               {"index", "0", "image index inside an IDX file"},
               {"target", "predicted", "class index or 'predicted'"},
               {"out", "attribution", "output directory", {}, true}},
              optimizer_flags()),
       run_attribute},
      {"eval",
       "compare methods by preservation and deletion AUC",
       {{"model", "", "FEIW0001 weight file", {}, true},
        {"dataset", "", "dataset directory or IDX image file", {}, true},
        {"labels", "", "IDX label file when --dataset is a file", {}, true},
        {"target", "predicted", "predicted or label", {"predicted", "label"}},
        {"count", "20", "number of images"},
        {"methods", "ibm,none,ibm_l1", "comma-separated methods"},
        {"objective", "preservation", "optimization objective", {"preservation", "deletion"}},
        {"seeds", "3", "number of seeds"},
        {"seed", "0", "first seed"},
        {"fractions", "0.9,0.7,0.5,0.3,0.1", "comma-separated descending fractions"},
        {"iters", "100", "Adam iterations per fraction"},
        {"beta-coef", "0.01", "area weight growth per iteration"},
        {"lr", "0.05", "Adam learning rate for the masks"},
        {"out", "report.csv", "CSV report path", {}, true}},
       run_eval},
      {"reconstruct",
       "regenerate an image from noise with clipped gradients",
       {{"model", "", "FEIW0001 weight file", {}, true},
        {"image", "", "PGM file, IDX file or dataset directory", {}, true},
        {"index", "0", "image index inside an IDX file"},
        {"target", "predicted", "class index or 'predicted'"},
        {"clip", "vm", "gradient clipping mode", kClipNames},
        {"iters", "300", "ascent iterations"},
        {"lr", "0.05", "Adam learning rate"},
        {"seed", "0", "noise seed"},
        {"out", "reconstruction", "output directory", {}, true}},
       run_reconstruct},
      {"defense",
       "attribution success rate on the black image",
       concat(
           {{"model", "", "FEIW0001 weight file", {}, true},
            {"seeds", "3", "number of seeds"},
            {"success-rule", "argmax", "argmax or threshold", {"argmax", "threshold"}},
            {"threshold", "0.5", "probability threshold for --success-rule threshold"},
            {"out", "defense", "output directory", {}, true}},
           [] {
             auto flags = optimizer_flags("none,vm,ivm,avm,ibm");
             flags[0].choices.clear();  // a list, checked when parsed
             flags[0].help = "comma-separated clipping modes";
             return flags;
           }()),
       run_defense},
      {"sanity",
       "cascading randomization check",
       concat({{"model", "", "FEIW0001 weight file", {}, true},
               {"image", "", "PGM file, IDX file or dataset directory", {}, true},
               {"index", "0", "image index inside an IDX file"},
               {"target", "predicted", "class index or 'predicted'"},
               {"stages", "-1", "number of stages, -1 for every weighted layer"},
               {"randomization-seed", "0", "seed for re-randomized weights"},
               {"out", "sanity", "output directory", {}, true}},
              optimizer_flags()),
       run_sanity},
  };
  return all;
}

const Command& find_command(const std::string& name) {
  for (const auto& c : commands())
    if (c.name == name) return c;
  throw UsageError("unknown subcommand '" + name + "'");
}

void normalize_paths(const Command& cmd, Flags& flags) {
  for (const auto& spec : cmd.flags)
    if (spec.is_path && !flags[spec.name].empty())
      flags[spec.name] = fs::absolute(flags[spec.name]).lexically_normal().string();
}

void check_choices(const Command& cmd, const Flags& flags) {
  for (const auto& spec : cmd.flags) {
    if (spec.choices.empty()) continue;
    const std::string& v = flags.at(spec.name);
    if (std::find(spec.choices.begin(), spec.choices.end(), v) == spec.choices.end())
      throw UsageError("--" + spec.name + ": '" + v + "' is not one of the allowed values");
  }
  if (cmd.name == "defense")
    for (const auto& m : split_list(flags.at("clip")))
      if (std::find(kClipNames.begin(), kClipNames.end(), m) == kClipNames.end())
        throw UsageError("--clip: unknown clip mode '" + m + "'");
}

void execute(const Command& cmd, Flags flags) {
  normalize_paths(cmd, flags);
  check_choices(cmd, flags);
  RunContext ctx;
  ctx.flags = flags;
  cmd.run(ctx);

  json manifest{{"subcommand", cmd.name},
                {"resolved_flags", ctx.flags},
                {"seeds", ctx.seeds},
                {"tool_version", kToolVersion},
                {"input_hashes", ctx.input_hashes},
                {"outputs", ctx.outputs}};
  write_text(ctx.manifest_dir / "manifest.json", manifest.dump(2) + "\n");
}

void replay(const fs::path& manifest_path, const std::string& out_override) {
  const json manifest = json::parse(read_bytes(manifest_path));
  const Command& cmd = find_command(manifest.at("subcommand").get<std::string>());
  Flags flags = manifest.at("resolved_flags").get<Flags>();
  for (const auto& spec : cmd.flags)
    if (!flags.count(spec.name)) throw UsageError("manifest lacks flag --" + spec.name);
  for (const auto& [path, hash] : manifest.at("input_hashes").items()) {
    const std::string now = "fnv1a64:" + hex64(fnv1a(read_bytes(path)));
    if (now != hash.get<std::string>())
      throw fei::Error("input-changed", "input " + path + " no longer matches its manifest hash");
  }
  if (!out_override.empty()) flags["out"] = out_override;
  execute(cmd, std::move(flags));
}

void print_error(const std::string& code, const std::string& message) {
  std::cerr << json{{"error", code}, {"message", message}}.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Faithfulness-guided ensemble attribution toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  std::vector<std::pair<CLI::App*, Flags>> parsed;
  parsed.reserve(commands().size());
  for (const auto& cmd : commands()) {
    CLI::App* sub = app.add_subcommand(cmd.name, cmd.help);
    parsed.emplace_back(sub, Flags{});
    Flags& values = parsed.back().second;
    for (const auto& spec : cmd.flags) {
      values[spec.name] = spec.default_value;
      auto* opt = sub->add_option("--" + spec.name, values[spec.name], spec.help);
      if (!spec.default_value.empty()) opt->default_str(spec.default_value);
      if (!spec.choices.empty()) opt->check(CLI::IsMember(spec.choices));
      if (spec.default_value.empty() && spec.name != "labels") opt->required();
    }
  }
  std::string manifest_path, replay_out;
  CLI::App* replay_cmd = app.add_subcommand("replay", "rerun a subcommand from its manifest.json");
  replay_cmd->add_option("--manifest", manifest_path, "manifest.json to replay")->required();
  replay_cmd->add_option("--out", replay_out, "output location overriding the recorded --out");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage", e.what());
    return 2;
  }

  try {
    if (replay_cmd->parsed()) {
      replay(manifest_path, replay_out);
    } else {
      for (std::size_t i = 0; i < parsed.size(); ++i)
        if (parsed[i].first->parsed()) execute(commands()[i], parsed[i].second);
    }
  } catch (const UsageError& e) {
    print_error("usage", e.what());
    return 2;
  } catch (const fei::Error& e) {
    print_error(e.code(), e.what());
    return 1;
  } catch (const json::exception& e) {
    print_error("bad-manifest", e.what());
    return 1;
  } catch (const std::exception& e) {
    print_error("runtime", e.what());
    return 1;
  }
  return 0;
}
