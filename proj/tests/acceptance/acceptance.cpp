// End-to-end acceptance run: one PASS/FAIL line per criterion, exit status
// nonzero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "evkit/dataset_io.hpp"
#include "evkit/dvs_sim.hpp"
#include "evkit/gradcheck.hpp"
#include "evkit/io.hpp"
#include "evkit/losses.hpp"
#include "evkit/masking.hpp"
#include "evkit/motion_synth.hpp"
#include "evkit/rng.hpp"
#include "evkit/synthetic.hpp"
#include "evkit/toy_model.hpp"
#include "evkit/trainer.hpp"
#include "oracles.hpp"

using namespace evkit;
namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kSeed = 20240517;

struct Outcome
{
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args)
{
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0)
{
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<double> random_unit(Rng& rng, std::size_t dim)
{
  std::vector<double> v(dim);
  for (double& x : v)
    x = normal(rng);
  return l2_normalize(v);
}

Outcome physics()
{
  const auto t0 = std::chrono::steady_clock::now();
  DvsConfig cfg = default_config();
  cfg.noiseless = true;
  cfg.cutoff_hz = 0.0;
  Rng rng(derive_seed(kSeed, 1));
  std::size_t pixels = 0, bad = 0;
  double worst = 0;
  for (int c = 0; c < 50; ++c) {
    const int w = 16 + static_cast<int>(rng() % 33), h = 16 + static_cast<int>(rng() % 33);
    const std::size_t n = 2 + rng() % 11;
    const auto frames = random_frames(w, h, n, derive_seed(kSeed, 2, c));
    const auto ts = frame_timestamps(n, 30.0, cfg.resolution_us());
    cfg.seed = derive_seed(kSeed, 3, c);
    const EventStream s = simulate_frames(frames, ts, cfg);
    std::vector<long> sum(static_cast<std::size_t>(w) * h, 0);
    for (const Event& e : s.events)
      sum[static_cast<std::size_t>(e.y) * w + e.x] += e.polarity;
    for (std::size_t i = 0; i < sum.size(); ++i) {
      const double dl = std::log(frames.back().data[i] + kLogEpsilon) - std::log(frames.front().data[i] + kLogEpsilon);
      const double err = std::abs(cfg.pos_thres * static_cast<double>(sum[i]) - dl);
      worst = std::max(worst, err / cfg.pos_thres);
      bad += err > cfg.pos_thres;
      ++pixels;
    }
  }
  const double secs = seconds_since(t0);
  return {bad == 0 && secs < 60.0,
          fmt("%zu/%zu pixels within one threshold, worst %.4f theta, %.2f s", pixels - bad, pixels, worst, secs)};
}

Outcome config_fidelity()
{
  const DvsConfig c = default_config();
  const bool ok = c.pos_thres == 0.2 && c.neg_thres == 0.2 && c.sigma_thres == 0.05 && c.cutoff_hz == 15.0 &&
                  c.shot_noise_rate_hz == 5.0 && c.timestamp_resolution == 0.003 && !c.noiseless;
  return {ok, fmt("pos %.2f neg %.2f sigma %.2f cutoff %.0f Hz shot %.1f Hz resolution %.3f s", c.pos_thres,
                  c.neg_thres, c.sigma_thres, c.cutoff_hz, c.shot_noise_rate_hz, c.timestamp_resolution)};
}

// Largest per-tensor max-norm relative error over every entry of the
// parameters in `groups`.
double model_grad_error(Model& m, const std::vector<ParamGroup>& groups, const std::function<LossAndGrad()>& eval)
{
  const LossAndGrad lg = eval();
  double worst = 0;
  for (std::size_t t = 0; t < m.params().size(); ++t) {
    Parameter& p = m.params()[t];
    if (std::find(groups.begin(), groups.end(), p.group) == groups.end())
      continue;
    std::vector<double> numeric(p.value.size());
    for (std::size_t i = 0; i < p.value.size(); ++i)
      numeric[i] = central_difference([&] { return eval().loss; }, p.value[i]);
    worst = std::max(worst, compare_gradients(lg.grad.g[t], numeric).rel_error());
  }
  return worst;
}

Outcome gradients()
{
  const auto t0 = std::chrono::steady_clock::now();
  double rec = 0, nce = 0, e2e = 0;
  for (std::uint64_t i = 0; i < 100; ++i) {
    Rng rng(derive_seed(kSeed, 10, i));

    std::vector<std::vector<double>> pred(1 + rng() % 6, std::vector<double>(16 + rng() % 49));
    std::vector<PatchTarget> target;
    for (auto& p : pred) {
      std::vector<double> raw(p.size());
      for (std::size_t k = 0; k < p.size(); ++k) {
        p[k] = normal(rng);
        raw[k] = uniform(rng, -255, 255);
      }
      target.push_back(standardize(raw));
    }
    const RecLoss rl = rec_loss(pred, target);
    std::vector<double> a, n;
    for (std::size_t p = 0; p < pred.size(); ++p)
      for (std::size_t k = 0; k < pred[p].size(); ++k) {
        a.push_back(rl.grad[p][k]);
        n.push_back(central_difference([&] { return rec_loss(pred, target).loss; }, pred[p][k]));
      }
    rec = std::max(rec, compare_gradients(a, n).rel_error());

    ContrastBatch b;
    b.query = random_unit(rng, 32);
    b.positive = random_unit(rng, 32);
    for (int k = 0; k < 1024; ++k)
      b.negatives.push_back(random_unit(rng, 32));
    const InfoNceResult r = info_nce(b);
    auto f = [&] { return info_nce(b).loss; };
    a.clear();
    n.clear();
    for (int d = 0; d < 32; ++d) {
      a.push_back(r.grad_query[d]);
      n.push_back(central_difference(f, b.query[d]));
      a.push_back(r.grad_positive[d]);
      n.push_back(central_difference(f, b.positive[d]));
    }
    for (int s = 0; s < 8; ++s) {
      const std::size_t j = rng() % 1024;
      for (int d = 0; d < 32; ++d) {
        a.push_back(r.grad_negatives[j][d]);
        n.push_back(central_difference(f, b.negatives[j][d]));
      }
    }
    nce = std::max(nce, compare_gradients(a, n).rel_error());

    ModelConfig mc;
    mc.width = 32;
    mc.height = 32;
    mc.bins = 2;
    mc.patch_size = 8;
    mc.embed_dim = 8;
    mc.target_dim = 6;
    mc.seed = derive_seed(kSeed, 11, i);
    Model m(mc);
    EventVoxel v(32, 32, 2);
    for (double& x : v.data)
      x = static_cast<double>(static_cast<int>(rng() % 5) - 2);
    DiffMap diff(32, 32);
    for (double& x : diff.data)
      x = uniform(rng, -100, 100);
    const PatchMask mask = make_mask(compute_density(v, 8), 0.5, MaskStrategy::RandomBalanced, i);
    const std::vector<MmExample> mb{make_mm_example(v, diff, mask, 8)};
    e2e = std::max(e2e, model_grad_error(m, trainable_groups(Stage::MM), [&] { return mm_loss_and_grad(m, mb); }));

    std::vector<double> feat(6);
    for (double& x : feat)
      x = normal(rng);
    const std::vector<ClExample> cb{{v, l2_normalize(feat)}};
    std::vector<std::vector<double>> negatives;
    for (int k = 0; k < 16; ++k)
      negatives.push_back(random_unit(rng, 8));
    const Stage st = i % 2 ? Stage::CL : Stage::Trans;
    e2e = std::max(e2e, model_grad_error(m, trainable_groups(st), [&] { return cl_loss_and_grad(m, cb, negatives, st); }));
  }
  return {rec < 1e-5 && nce < 1e-5 && e2e < 1e-4,
          fmt("rec_loss %.2e, info_nce %.2e, end-to-end %.2e over 100 instances, %.1f s", rec, nce, e2e,
              seconds_since(t0))};
}

Outcome infonce_anchor()
{
  double worst = 0;
  for (std::size_t k : {1, 10, 1024}) {
    ContrastBatch b;
    b.query = {0.6, 0.8, 0.0};
    b.positive = {0.0, 0.0, 1.0};
    for (std::size_t j = 0; j < k; ++j)
      b.negatives.push_back(j % 2 ? std::vector<double>{0, 0, -1} : std::vector<double>{0.8, -0.6, 0});
    worst = std::max(worst, std::abs(info_nce(b).loss - std::log(1.0 + static_cast<double>(k))));
  }
  return {worst < 1e-9, fmt("max |loss - ln(1+K)| = %.1e for K in {1, 10, 1024}", worst)};
}

Outcome freeze()
{
  const auto data = stripe_dataset(16, derive_seed(kSeed, 20));
  TrainOptions opt;
  opt.model.embed_dim = 32;
  StageConfig mm = default_stage_config(Stage::MM, 20);
  StageConfig trans = default_stage_config(Stage::Trans, 100);
  mm.batch_size = trans.batch_size = 4;
  const TrainResult r = train_stages(data, {mm, trans}, kSeed, opt);
  const auto& m = r.stages[0];
  const auto& t = r.stages[1];
  const bool mm_heads = m.before.at(ParamGroup::Projection) == m.after.at(ParamGroup::Projection) &&
                        m.before.at(ParamGroup::Prediction) == m.after.at(ParamGroup::Prediction) &&
                        m.before.at(ParamGroup::TargetProj) == m.after.at(ParamGroup::TargetProj);
  const bool trans_backbone = t.before.at(ParamGroup::Encoder) == t.after.at(ParamGroup::Encoder) &&
                              t.before.at(ParamGroup::Decoder) == t.after.at(ParamGroup::Decoder);
  const bool moved = m.before.at(ParamGroup::Encoder) != m.after.at(ParamGroup::Encoder) &&
                     t.before.at(ParamGroup::Projection) != t.after.at(ParamGroup::Projection);
  return {mm_heads && trans_backbone && moved,
          fmt("MM heads unchanged: %s; 100-step Trans encoder/decoder unchanged: %s; trained groups moved: %s",
              mm_heads ? "yes" : "no", trans_backbone ? "yes" : "no", moved ? "yes" : "no")};
}

Outcome masking()
{
  std::size_t checked = 0, errors = 0;
  for (int rows = 1; rows <= 14; ++rows)
    for (int cols = 1; cols <= 14; ++cols) {
      PatchGrid g;
      g.rows = rows;
      g.cols = cols;
      Rng rng(derive_seed(kSeed, 30, rows * 100 + cols));
      for (int i = 0; i < rows * cols; ++i)
        g.density.push_back(std::floor(uniform(rng, 0, 40)));
      for (double ratio : {0.25, 0.5, 0.75})
        for (MaskStrategy s : {MaskStrategy::RandomBalanced, MaskStrategy::Density, MaskStrategy::AntiDensity,
                               MaskStrategy::Uniform}) {
          const PatchMask m = make_mask(g, ratio, s, rng());
          errors += m.masked.size() != masked_count(g.total(), ratio) || m.total() != g.total();
          ++checked;
        }
    }
  PatchGrid grad;
  grad.rows = grad.cols = 14;
  for (int y = 0; y < 14; ++y)
    for (int x = 0; x < 14; ++x)
      grad.density.push_back(x * 5.0 + y * 2.0);
  double balanced = 0, uniform_gap = 0;
  for (std::uint64_t s = 0; s < 1000; ++s) {
    balanced += density_gap(grad, make_mask(grad, 0.5, MaskStrategy::RandomBalanced, derive_seed(kSeed, 31, s)));
    uniform_gap += density_gap(grad, make_mask(grad, 0.5, MaskStrategy::Uniform, derive_seed(kSeed, 31, s)));
  }
  balanced /= 1000;
  uniform_gap /= 1000;
  return {errors == 0 && balanced < uniform_gap,
          fmt("%zu/%zu masks exact; mean gap balanced %.3f vs uniform %.3f", checked - errors, checked, balanced,
              uniform_gap)};
}

Outcome dataset_recipe()
{
  const DatasetConfig cfg;
  const GrayFrame img = stripe_image(320, 300, 17, 0.4, true);
  const ImageBuild b = build_image_records(img, "a", cfg, derive_seed(kSeed, 40), derive_seed(kSeed, 41), "h");
  const fs::path dir = fs::temp_directory_path() / "evkit_acceptance_shard";
  fs::remove_all(dir);
  fs::create_directories(dir);
  write_shard(dir / "a.evsh", b.records);
  const auto back = read_shard(dir / "a.evsh");
  write_shard(dir / "b.evsh", back);
  const bool exact = back == b.records && read_file(dir / "a.evsh") == read_file(dir / "b.evsh");
  fs::remove_all(dir);
  return {b.frames == 12 && b.segments == 11 && b.records.size() == 10 && exact,
          fmt("%zu frames, %zu segments, %zu records, shard round trip %s", b.frames, b.segments, b.records.size(),
              exact ? "bit-exact" : "differs")};
}

Outcome motion()
{
  constexpr long kDraws = 100000;
  std::array<long, 9> tr{};
  std::array<long, 3> sc{}, ro{};
  std::array<long, 2> pe{};
  for (long i = 0; i < kDraws; ++i) {
    const MotionParams p = sample_motion(derive_seed(kSeed, 50, i), MotionSet::StartToEnd);
    ++tr[static_cast<int>(p.translation)];
    ++sc[static_cast<int>(p.scaling)];
    ++ro[static_cast<int>(p.rotation)];
    ++pe[p.perspective];
  }
  const auto& prop = mode_proportions(MotionSet::StartToEnd);
  double worst = 0;
  auto acc = [&](const auto& expected, const auto& counts) {
    for (std::size_t i = 0; i < expected.size(); ++i)
      worst = std::max(worst, std::abs(100.0 * counts[i] / kDraws - expected[i]));
  };
  acc(prop.translation, tr);
  acc(prop.scaling, sc);
  acc(prop.rotation, ro);
  acc(prop.perspective, pe);
  return {worst <= 0.5, fmt("worst deviation %.3f percentage points over 1e5 draws", worst)};
}

Outcome learning_signal()
{
  const auto t0 = std::chrono::steady_clock::now();
  const auto data = stripe_dataset(64, derive_seed(kSeed, 60));
  const TrainResult r =
    train_stages(data, {default_stage_config(Stage::MM, 200), default_stage_config(Stage::CL, 200)}, kSeed);
  const double head = head_mean(r.trace, Stage::MM, 20), tail = tail_mean(r.trace, Stage::MM, 20);
  double baseline = 0;
  int n = 0;
  for (std::size_t i = r.trace.size() - 20; i < r.trace.size(); ++i, ++n)
    baseline += std::log(1.0 + static_cast<double>(r.trace[i].negatives));
  baseline /= n;
  const double cl = tail_mean(r.trace, Stage::CL, 20);
  const double secs = seconds_since(t0);
  return {tail < 0.5 * head && cl < baseline && secs < 300.0,
          fmt("MM %.4f -> %.4f (ratio %.3f); CL tail %.3f vs ln(1+K) %.3f; %.1f s", head, tail, tail / head, cl,
              baseline, secs)};
}

Outcome variants()
{
  std::size_t checks = 0, bad = 0;
  for (std::size_t n : {0u, 1u, 4u, 5u, 999u, 1000u, 12347u}) {
    const EventStream s = oracle::random_stream(64, 48, 0, 300000, n, derive_seed(kSeed, 70, n));
    bad += make_variant(s, VariantKind::Sparse, 0.0, kSeed).size() != (4 * n + 4) / 5;
    ++checks;
    for (double frac : {0.0, 0.001, 0.0055, 0.01}) {
      const auto r = make_variant_logged(s, VariantKind::Noise, frac, derive_seed(kSeed, 71, n));
      const auto expected = static_cast<std::size_t>(std::llround(frac * static_cast<double>(n)));
      bad += r.log.size() != expected || oracle::replay(s, r.log) != oracle::as_multiset(r.stream);
      ++checks;
    }
  }
  return {bad == 0, fmt("%zu/%zu sparse and noise checks hold under the replay oracle", checks - bad, checks)};
}

} // namespace

int main()
{
  const std::vector<std::pair<const char*, Outcome (*)()>> criteria = {
    {"physics invariant", physics},
    {"simulator defaults", config_fidelity},
    {"gradient suite", gradients},
    {"InfoNCE uniform anchor", infonce_anchor},
    {"freeze semantics", freeze},
    {"masking", masking},
    {"dataset recipe", dataset_recipe},
    {"motion proportions", motion},
    {"toy learning signal", learning_signal},
    {"robustness variants", variants},
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
    std::printf("%s %2zu %-24s %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
