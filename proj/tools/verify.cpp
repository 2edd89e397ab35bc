#include "verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <random>
#include <set>

#include "evkit/dvs_sim.hpp"
#include "evkit/gradcheck.hpp"
#include "evkit/masking.hpp"
#include "evkit/rng.hpp"
#include "evkit/synthetic.hpp"
#include "evkit/toy_model.hpp"
#include "evkit/trainer.hpp"

namespace evkit::cli {

namespace {

CheckRow le(std::string suite, std::string check, double value, double limit, std::string note = {})
{
  return {std::move(suite), std::move(check), value, limit, value <= limit, std::move(note)};
}

CheckRow lt(std::string suite, std::string check, double value, double limit, std::string note = {})
{
  return {std::move(suite), std::move(check), value, limit, value < limit, std::move(note)};
}

CheckRow flag(std::string suite, std::string check, bool ok, std::string note = {})
{
  return {std::move(suite), std::move(check), ok ? 1.0 : 0.0, 1.0, ok, std::move(note)};
}

std::vector<double> random_unit(Rng& rng, std::size_t dim)
{
  std::vector<double> v(dim);
  for (double& x : v)
    x = normal(rng);
  return l2_normalize(v);
}

// Checks `count` random entries of every tensor in `groups`; the tensor
// scale includes every analytic entry.
template <class LossFn>
GradCheck check_model(Model& model, const Gradients& grad, const std::vector<ParamGroup>& groups,
                      LossFn&& loss, Rng& rng, std::size_t count)
{
  double worst = -1.0;
  GradCheck out;
  for (std::size_t pi = 0; pi < model.params().size(); ++pi) {
    Parameter& p = model.params()[pi];
    if (std::find(groups.begin(), groups.end(), p.group) == groups.end())
      continue;
    std::vector<std::size_t> idx(p.value.size());
    for (std::size_t k = 0; k < idx.size(); ++k)
      idx[k] = k;
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::min(count, idx.size()));
    std::vector<double> a, n;
    for (std::size_t k : idx) {
      a.push_back(grad.g[pi][k]);
      n.push_back(central_difference(loss, p.value[k]));
    }
    GradCheck c = compare_gradients(a, n);
    for (double v : grad.g[pi])
      c.scale = std::max(c.scale, std::abs(v));
    if (c.rel_error() > worst) {
      worst = c.rel_error();
      out = c;
    }
  }
  return out;
}

ModelConfig tiny_config(std::uint64_t seed)
{
  ModelConfig mc;
  mc.width = 32;
  mc.height = 32;
  mc.bins = 2;
  mc.patch_size = 8;
  mc.embed_dim = 8;
  mc.target_dim = 6;
  mc.seed = seed;
  return mc;
}

} // namespace

std::vector<CheckRow> verify_physics(const VerifyOptions& o)
{
  const std::size_t clips = o.instances ? o.instances : 50;
  DvsConfig cfg = default_config();
  cfg.noiseless = true;
  cfg.cutoff_hz = 0.0;
  Rng rng(derive_seed(o.seed, name_tag("verify_physics")));

  double worst_ratio = 0.0;
  std::size_t pixels = 0, violations = 0, bad_time = 0, negative_on_ramp = 0, scaling_breaks = 0;
  for (std::size_t c = 0; c < clips; ++c) {
    const int w = 16 + static_cast<int>(rng() % 17), h = 16 + static_cast<int>(rng() % 17);
    const std::size_t n = 2 + rng() % 5;
    const auto frames = random_frames(w, h, n, derive_seed(o.seed, c));
    const auto ts = frame_timestamps(n, 30.0, cfg.resolution_us());
    cfg.seed = derive_seed(o.seed, name_tag("dvs"), c);
    const EventStream s = simulate_frames(frames, ts, cfg);

    std::vector<long> sum(static_cast<std::size_t>(w) * h, 0);
    for (const Event& e : s.events) {
      sum[static_cast<std::size_t>(e.y) * w + e.x] += e.polarity;
      if (e.t % cfg.resolution_us() != 0)
        ++bad_time;
    }
    for (std::size_t i = 1; i < s.events.size(); ++i)
      if (s.events[i].t < s.events[i - 1].t)
        ++bad_time;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double dl = std::log(frames.back().at(x, y) + kLogEpsilon) - std::log(frames.front().at(x, y) + kLogEpsilon);
        const double err = std::abs(cfg.pos_thres * static_cast<double>(sum[static_cast<std::size_t>(y) * w + x]) - dl);
        worst_ratio = std::max(worst_ratio, err / cfg.pos_thres);
        if (err > cfg.pos_thres)
          ++violations;
        ++pixels;
      }

    // Monotone ramp: brighten every pixel frame over frame.
    std::vector<GrayFrame> ramp(n, GrayFrame(w, h));
    for (std::size_t f = 0; f < n; ++f)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          ramp[f].at(x, y) = 10.0 + 240.0 * static_cast<double>(f) / static_cast<double>(n - 1) *
                                        (0.2 + 0.8 * frames.front().at(x, y) / 255.0);
    for (const Event& e : simulate_frames(ramp, ts, cfg).events)
      if (e.polarity < 0)
        ++negative_on_ramp;

    // Doubling the threshold never adds events at a pixel.
    DvsConfig doubled = cfg;
    doubled.pos_thres *= 2.0;
    doubled.neg_thres *= 2.0;
    std::vector<long> base_count(sum.size(), 0), doubled_count(sum.size(), 0);
    for (const Event& e : s.events)
      ++base_count[static_cast<std::size_t>(e.y) * w + e.x];
    for (const Event& e : simulate_frames(frames, ts, doubled).events)
      ++doubled_count[static_cast<std::size_t>(e.y) * w + e.x];
    for (std::size_t i = 0; i < sum.size(); ++i)
      if (doubled_count[i] > base_count[i])
        ++scaling_breaks;
  }

  const std::string suite = "physics";
  return {
    le(suite, "max |theta*sum(p) - dlogI| / theta", worst_ratio, 1.0,
       std::to_string(clips) + " clips, " + std::to_string(pixels) + " pixels"),
    le(suite, "pixels violating the accumulation bound", static_cast<double>(violations), 0.0),
    le(suite, "unsorted or off-grid timestamps", static_cast<double>(bad_time), 0.0),
    le(suite, "negative events on brightening ramps", static_cast<double>(negative_on_ramp), 0.0),
    le(suite, "pixels gaining events when theta doubles", static_cast<double>(scaling_breaks), 0.0),
  };
}

std::vector<CheckRow> verify_gradients(const VerifyOptions& o)
{
  const std::size_t instances = o.instances ? o.instances : 100;
  double rec = 0.0, nce = 0.0, mm = 0.0, trans = 0.0, cl = 0.0;
  for (std::size_t inst = 0; inst < instances; ++inst) {
    Rng rng(derive_seed(o.seed, name_tag("verify_gradients"), inst));

    // Reconstruction loss.
    const std::size_t patches = 1 + rng() % 4;
    std::vector<std::vector<double>> pred(patches, std::vector<double>(64));
    std::vector<PatchTarget> target;
    for (auto& p : pred)
      for (double& v : p)
        v = normal(rng);
    for (std::size_t p = 0; p < patches; ++p) {
      std::vector<double> raw(64);
      for (double& v : raw)
        v = 20.0 * normal(rng);
      target.push_back(standardize(raw));
    }
    const RecLoss rl = rec_loss(pred, target);
    for (std::size_t p = 0; p < patches; ++p) {
      std::vector<double> num;
      for (double& v : pred[p])
        num.push_back(central_difference([&] { return rec_loss(pred, target).loss; }, v));
      rec = std::max(rec, compare_gradients(rl.grad[p], num).rel_error());
    }

    // InfoNCE, D = 32, K = 1024.
    ContrastBatch b{random_unit(rng, 32), random_unit(rng, 32), {}, kDefaultTemperature};
    for (int k = 0; k < 1024; ++k)
      b.negatives.push_back(random_unit(rng, 32));
    const InfoNceResult r = info_nce(b);
    auto f = [&] { return info_nce(b).loss; };
    // One gradient vector over every input: query, positive, sampled negatives.
    std::vector<double> an(r.grad_query), num;
    an.insert(an.end(), r.grad_positive.begin(), r.grad_positive.end());
    for (double& v : b.query)
      num.push_back(central_difference(f, v));
    for (double& v : b.positive)
      num.push_back(central_difference(f, v));
    for (int j = 0; j < 4; ++j) {
      const std::size_t k = rng() % b.negatives.size();
      an.insert(an.end(), r.grad_negatives[k].begin(), r.grad_negatives[k].end());
      for (double& v : b.negatives[k])
        num.push_back(central_difference(f, v));
    }
    nce = std::max(nce, compare_gradients(an, num).rel_error());

    // End to end through the toy model.
    Model model(tiny_config(derive_seed(o.seed, inst)));
    EventVoxel voxel(32, 32, 2);
    for (double& v : voxel.data)
      v = std::round(1.5 * normal(rng));
    DiffMap diff(32, 32);
    for (double& v : diff.data)
      v = 30.0 * normal(rng);
    const PatchMask mask = make_mask(compute_density(voxel, 8), 0.5, MaskStrategy::RandomBalanced, inst);
    const std::vector<MmExample> mb{make_mm_example(voxel, diff, mask, 8)};
    const LossAndGrad g_mm = mm_loss_and_grad(model, mb);
    mm = std::max(mm, check_model(model, g_mm.grad, trainable_groups(Stage::MM),
                                  [&] { return mm_loss_and_grad(model, mb).loss; }, rng, 12)
                        .rel_error());

    const std::vector<ClExample> cb{{voxel, random_unit(rng, 6)}};
    std::vector<std::vector<double>> negatives;
    for (int k = 0; k < 16; ++k)
      negatives.push_back(random_unit(rng, 8));
    for (Stage st : {Stage::Trans, Stage::CL}) {
      const LossAndGrad g = cl_loss_and_grad(model, cb, negatives, st);
      const double e = check_model(model, g.grad, trainable_groups(st),
                                   [&] { return cl_loss_and_grad(model, cb, negatives, st).loss; }, rng, 12)
                         .rel_error();
      (st == Stage::Trans ? trans : cl) = std::max(st == Stage::Trans ? trans : cl, e);
    }
  }
  const std::string suite = "gradients";
  const std::string n = std::to_string(instances) + " instances";
  return {
    lt(suite, "rec_loss max rel. error", rec, 1e-5, n),
    lt(suite, "info_nce max rel. error (D=32, K=1024)", nce, 1e-5, n),
    lt(suite, "masked modeling end-to-end", mm, 1e-4, n),
    lt(suite, "feature transition end-to-end", trans, 1e-4, n),
    lt(suite, "contrastive end-to-end", cl, 1e-4, n),
  };
}

std::vector<CheckRow> verify_masking(const VerifyOptions& o)
{
  const std::string suite = "masking";
  std::size_t ratio_errors = 0, partition_errors = 0, complement_errors = 0, cases = 0;
  Rng rng(derive_seed(o.seed, name_tag("verify_masking")));
  for (int rows = 1; rows <= 14; ++rows)
    for (int cols = 1; cols <= 14; ++cols) {
      PatchGrid g;
      g.rows = rows;
      g.cols = cols;
      g.density.resize(static_cast<std::size_t>(rows) * cols);
      for (double& d : g.density)
        d = static_cast<double>(rng() % 50);
      for (double ratio : {0.25, 0.5, 0.75})
        for (MaskStrategy s : {MaskStrategy::RandomBalanced, MaskStrategy::Density, MaskStrategy::AntiDensity,
                               MaskStrategy::Uniform}) {
          const PatchMask m = make_mask(g, ratio, s, rng());
          ++cases;
          if (m.masked.size() != masked_count(g.total(), ratio))
            ++ratio_errors;
          std::set<std::size_t> all(m.masked.begin(), m.masked.end());
          all.insert(m.visible.begin(), m.visible.end());
          if (all.size() != g.total() || m.total() != g.total())
            ++partition_errors;
        }
      if (g.total() % 2 == 0) {
        const PatchMask d = make_mask(g, 0.5, MaskStrategy::Density, 0);
        const PatchMask a = make_mask(g, 0.5, MaskStrategy::AntiDensity, 0);
        if (d.masked != a.visible)
          ++complement_errors;
      }
    }

  // Gradient-density grid, 14 x 14.
  PatchGrid grad;
  grad.rows = grad.cols = 14;
  for (int r = 0; r < 14; ++r)
    for (int c = 0; c < 14; ++c)
      grad.density.push_back(static_cast<double>(r * 14 + c));
  const std::size_t seeds = o.instances ? o.instances : 1000;
  double balanced = 0.0, uniform = 0.0;
  for (std::size_t s = 0; s < seeds; ++s) {
    const std::uint64_t seed = derive_seed(o.seed, name_tag("gap"), s);
    balanced += density_gap(grad, make_mask(grad, 0.5, MaskStrategy::RandomBalanced, seed));
    uniform += density_gap(grad, make_mask(grad, 0.5, MaskStrategy::Uniform, seed));
  }
  balanced /= static_cast<double>(seeds);
  uniform /= static_cast<double>(seeds);

  return {
    le(suite, "masked count != round(ratio * total)", static_cast<double>(ratio_errors), 0.0,
       std::to_string(cases) + " grid/ratio/strategy cases"),
    le(suite, "visible/masked not a partition", static_cast<double>(partition_errors), 0.0),
    le(suite, "density/anti_density not complements", static_cast<double>(complement_errors), 0.0),
    lt(suite, "balanced gap / uniform gap", uniform > 0.0 ? balanced / uniform : 1.0, 1.0,
       "means over " + std::to_string(seeds) + " seeds"),
  };
}

std::vector<CheckRow> verify_freeze(const VerifyOptions& o)
{
  const std::string suite = "freeze";
  const auto data = stripe_dataset(12, o.seed);
  const std::size_t steps = o.instances ? o.instances : 10;
  std::vector<StageConfig> schedule;
  for (Stage s : {Stage::MM, Stage::Trans, Stage::CL}) {
    StageConfig c = default_stage_config(s, steps);
    c.batch_size = 4;
    schedule.push_back(c);
  }
  TrainOptions opts;
  opts.model.width = data.front().voxel.width;
  opts.model.height = data.front().voxel.height;
  opts.model.bins = data.front().voxel.bins;
  opts.model.target_dim = static_cast<int>(data.front().target_feature.size());
  opts.checkpoint_dir = o.scratch / "checkpoints";
  const TrainResult r = train_stages(data, schedule, o.seed, opts);

  std::vector<CheckRow> rows;
  for (const StageReport& rep : r.stages) {
    const auto trainable = trainable_groups(rep.stage);
    std::size_t frozen_changed = 0, trainable_changed = 0, frozen = 0;
    for (ParamGroup g : kAllGroups) {
      const bool t = std::find(trainable.begin(), trainable.end(), g) != trainable.end();
      const bool changed = rep.before.at(g) != rep.after.at(g);
      if (t)
        trainable_changed += changed;
      else {
        ++frozen;
        frozen_changed += changed;
      }
    }
    rows.push_back(le(suite, std::string(to_string(rep.stage)) + ": frozen groups changed",
                      static_cast<double>(frozen_changed), 0.0, std::to_string(frozen) + " frozen groups"));
    rows.push_back(flag(suite, std::string(to_string(rep.stage)) + ": every trainable group moved",
                        trainable_changed == trainable.size()));
  }
  const Model reloaded = read_checkpoint(r.stages.back().checkpoint);
  rows.push_back(flag(suite, "final checkpoint reloads bit-exact", reloaded == r.model));
  return rows;
}

void print_table(std::ostream& os, const std::vector<CheckRow>& rows)
{
  std::size_t width = 8;
  for (const CheckRow& r : rows)
    width = std::max(width, r.check.size());
  os << std::left << std::setw(10) << "suite" << "  " << std::setw(static_cast<int>(width)) << "check"
     << "  " << std::setw(12) << "value" << "  " << std::setw(10) << "limit" << "  result\n";
  for (const CheckRow& r : rows) {
    char value[32], limit[32];
    std::snprintf(value, sizeof value, "%.4g", r.value);
    std::snprintf(limit, sizeof limit, "%.4g", r.limit);
    os << std::left << std::setw(10) << r.suite << "  " << std::setw(static_cast<int>(width)) << r.check << "  "
       << std::setw(12) << value << "  " << std::setw(10) << limit << "  " << (r.pass ? "PASS" : "FAIL");
    if (!r.note.empty())
      os << "  (" << r.note << ")";
    os << '\n';
  }
}

} // namespace evkit::cli
