#include "fei/evaluation.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "fei/parallel.hpp"

namespace fei {

MethodConfig method_from_name(std::string_view name, const FractileSchedule& schedule,
                              const AdamParams& adam) {
  MethodConfig m;
  m.name = std::string(name);
  m.schedule = schedule;
  m.config.adam = adam;
  std::string_view clip = name;
  if (const auto cut = name.find('_'); cut != std::string_view::npos) {
    clip = name.substr(0, cut);
    m.config.mode = parse_ensemble_mode(name.substr(cut + 1));
  }
  m.config.clip_mode = parse_clip_mode(clip);
  return m;
}

std::pair<double, double> mean_stdev(const std::vector<double>& values) {
  if (values.empty()) return {0.0, 0.0};
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  if (values.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / static_cast<double>(values.size() - 1))};
}

namespace {

std::string fixed(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9f", v);
  return buf;
}

}  // namespace

std::string ComparisonReport::to_csv() const {
  std::ostringstream os;
  os << "method,clip_mode,objective,metric,auc,image_count,seed\n";
  for (const auto& r : rows) {
    os << r.method << ',' << to_string(r.clip_mode) << ',' << to_string(r.objective) << ','
       << to_string(r.metric) << ',' << fixed(r.auc) << ',' << r.image_count << ',' << r.seed
       << '\n';
  }
  return os.str();
}

std::string ComparisonReport::summary_csv() const {
  std::ostringstream os;
  os << "method,preservation_mean,preservation_std,deletion_mean,deletion_std\n";
  for (const auto& s : summary) {
    os << s.method << ',' << fixed(s.preservation_mean) << ',' << fixed(s.preservation_std) << ','
       << fixed(s.deletion_mean) << ',' << fixed(s.deletion_std) << '\n';
  }
  return os.str();
}

ComparisonReport compare_methods(const NetworkModel& model, const std::vector<EvalSample>& samples,
                                 const std::vector<MethodConfig>& methods,
                                 const std::vector<std::uint64_t>& seeds,
                                 const EvalProtocol& protocol, unsigned threads) {
  if (samples.empty()) throw Error("no-images", "compare_methods needs at least one image");
  const std::size_t n_img = samples.size(), n_seed = seeds.size();
  const std::size_t cells = methods.size() * n_seed * n_img;
  std::vector<double> pres(cells), del(cells);

  // Scoring references depend only on the image.
  std::vector<Tensor> pres_ref(n_img), del_ref(n_img);
  for (std::size_t i = 0; i < n_img; ++i) {
    pres_ref[i] = make_reference(protocol.preservation_reference, samples[i].image);
    del_ref[i] = make_reference(protocol.deletion_reference, samples[i].image);
  }

  parallel_for(cells, threads, [&](std::size_t cell) {
    const std::size_t m = cell / (n_seed * n_img);
    const std::size_t s = (cell / n_img) % n_seed;
    const std::size_t i = cell % n_img;
    OptimizerConfig cfg = methods[m].config;
    cfg.rng_seed = seeds[s];
    const auto& sample = samples[i];
    const MaskEnsemble ens = optimize_attribution(model, sample.image, sample.target,
                                                  methods[m].schedule, cfg,
                                                  protocol.optimization_reference);
    pres[cell] = faithfulness_curve(model, sample.image, ens.map, CurveKind::Preservation,
                                    pres_ref[i], sample.target, protocol.grid_step)
                     .auc;
    del[cell] = faithfulness_curve(model, sample.image, ens.map, CurveKind::Deletion, del_ref[i],
                                   sample.target, protocol.grid_step)
                    .auc;
  });

  ComparisonReport report;
  for (std::size_t m = 0; m < methods.size(); ++m) {
    std::vector<double> pres_by_seed, del_by_seed;
    for (std::size_t s = 0; s < n_seed; ++s) {
      double p = 0.0, d = 0.0;
      for (std::size_t i = 0; i < n_img; ++i) {
        const std::size_t cell = (m * n_seed + s) * n_img + i;
        p += pres[cell];
        d += del[cell];
      }
      p /= static_cast<double>(n_img);
      d /= static_cast<double>(n_img);
      pres_by_seed.push_back(p);
      del_by_seed.push_back(d);
      const auto& cfg = methods[m].config;
      report.rows.push_back({methods[m].name, cfg.clip_mode, cfg.objective, CurveKind::Preservation,
                             p, n_img, seeds[s]});
      report.rows.push_back(
          {methods[m].name, cfg.clip_mode, cfg.objective, CurveKind::Deletion, d, n_img, seeds[s]});
    }
    const auto [pm, ps] = mean_stdev(pres_by_seed);
    const auto [dm, ds] = mean_stdev(del_by_seed);
    report.summary.push_back({methods[m].name, pm, ps, dm, ds});
  }
  return report;
}

}  // namespace fei
