#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <unistd.h>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "evkit/dataset_io.hpp"
#include "evkit/dvs_sim.hpp"
#include "evkit/event_core.hpp"
#include "evkit/io.hpp"
#include "evkit/masking.hpp"
#include "evkit/motion_synth.hpp"
#include "evkit/synthetic.hpp"
#include "evkit/trainer.hpp"
#include "verify.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error
{
  using std::runtime_error::runtime_error;
};

struct Globals
{
  std::optional<std::uint64_t> seed;
  std::string config_path;
};

std::uint64_t require_seed(const Globals& g)
{
  if (g.seed)
    return *g.seed;
  if (const char* env = std::getenv("EVKIT_SEED")) {
    try {
      std::size_t used = 0;
      const unsigned long long v = std::stoull(env, &used, 10);
      if (used == std::string(env).size())
        return v;
    } catch (const std::exception&) {
    }
    throw UsageError(std::string("EVKIT_SEED is not an unsigned integer: ") + env);
  }
  throw UsageError("this subcommand is stochastic: pass --seed N or set EVKIT_SEED");
}

json load_config_file(const Globals& g)
{
  if (g.config_path.empty())
    return json::object();
  std::ifstream in(g.config_path);
  if (!in)
    throw UsageError("cannot open config file " + g.config_path);
  try {
    json j = json::parse(in);
    if (!j.is_object())
      throw UsageError("config file must hold a JSON object");
    return j;
  } catch (const json::exception& e) {
    throw UsageError("config file " + g.config_path + ": " + e.what());
  }
}

// Simulator and clip flags shared by several subcommands. Unset flags leave
// the config-file or built-in values in place.
struct PipelineFlags
{
  std::map<std::string, std::optional<double>> dvs;
  bool noiseless = false;
  std::optional<int> canvas, crop, frames, bins;
  std::optional<double> fps;

  void add_dvs(CLI::App* app)
  {
    for (const char* key : {"pos_thres", "neg_thres", "sigma_thres", "cutoff_hz", "leak_rate_hz",
                            "shot_noise_rate_hz", "timestamp_resolution", "exposure_duration",
                            "leak_jitter_fraction", "noise_rate_cov_decades"}) {
      std::string flag = std::string("--") + key;
      for (char& c : flag)
        if (c == '_')
          c = '-';
      app->add_option(flag, dvs[key], std::string("simulator ") + key)->group("Simulator");
    }
    app->add_flag("--noiseless", noiseless, "disable threshold mismatch, leak and shot noise")->group("Simulator");
  }
  void add_clip(CLI::App* app)
  {
    app->add_option("--canvas", canvas, "canvas size in pixels")->group("Clip");
    app->add_option("--crop", crop, "crop size in pixels")->group("Clip");
    app->add_option("--frames", frames, "frames per clip")->group("Clip");
    app->add_option("--fps", fps, "frame rate")->group("Clip");
  }

  json overlay() const
  {
    json j = json::object();
    for (const auto& [k, v] : dvs)
      if (v)
        j["dvs"][k] = *v;
    if (noiseless)
      j["dvs"]["noiseless"] = true;
    if (canvas) j["clip"]["canvas"] = *canvas;
    if (crop) j["clip"]["crop"] = *crop;
    if (frames) j["clip"]["n_frames"] = *frames;
    if (fps) j["clip"]["fps"] = *fps;
    if (bins) j["bins"] = *bins;
    return j;
  }
};

// defaults < config file < flags
evkit::DatasetConfig effective_config(const Globals& g, const PipelineFlags& flags, json& echo)
{
  json merged = evkit::to_json(evkit::DatasetConfig{});
  json file = load_config_file(g);
  json relevant = json::object();
  for (const char* key : {"clip", "dvs", "bins", "target_dim"})
    if (file.contains(key))
      relevant[key] = file[key];
  merged.merge_patch(relevant);
  merged.merge_patch(flags.overlay());
  evkit::DatasetConfig c = evkit::dataset_config_from_json(merged);
  c.dvs.validate();
  echo = evkit::to_json(c);
  return c;
}

void echo_config(const std::string& command, const json& config)
{
  std::cerr << json{{"command", command}, {"effective_config", config}}.dump() << '\n';
}

void emit(const json& result)
{
  std::cout << result.dump(2) << '\n';
}

class TempDir
{
public:
  TempDir()
  {
    std::string tmpl = (fs::temp_directory_path() / "evkit-verify-XXXXXX").string();
    if (!mkdtemp(tmpl.data()))
      throw std::runtime_error("cannot create a temporary directory");
    path_ = tmpl;
  }
  ~TempDir()
  {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  const fs::path& path() const { return path_; }

private:
  fs::path path_;
};

json stream_summary(const evkit::EventStream& s)
{
  std::size_t pos = 0;
  for (const evkit::Event& e : s.events)
    pos += e.polarity > 0;
  return {{"width", s.width},        {"height", s.height},  {"events", s.size()},
          {"positive", pos},         {"negative", s.size() - pos},
          {"t_start_us", s.t_start}, {"t_end_us", s.t_end}};
}

} // namespace

int main(int argc, char** argv)
{
  CLI::App app{"evkit: synthetic event streams, voxels, masking, losses and a toy three-stage trainer"};
  app.require_subcommand(1);
  app.fallthrough(); // global --seed / --config may follow the subcommand
  app.set_help_all_flag("--help-all", "show help for every subcommand");
  Globals g;
  app.add_option("--seed", g.seed, "seed for stochastic subcommands (fallback: EVKIT_SEED)");
  app.add_option("--config", g.config_path, "JSON config file; flags take precedence");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "build a pre-training dataset from a directory of PGM/PPM images");
  std::string gen_in, gen_out;
  unsigned workers = 1;
  PipelineFlags gen_flags;
  gen->add_option("imgdir", gen_in, "input image directory")->required();
  gen->add_option("out", gen_out, "output dataset directory")->required();
  gen->add_option("--workers", workers, "parallel workers (output is independent of the count)")
    ->check(CLI::PositiveNumber);
  gen->add_option("--bins", gen_flags.bins, "voxel time bins")->check(CLI::PositiveNumber);
  gen_flags.add_dvs(gen);
  gen_flags.add_clip(gen);

  // synth
  auto* synth = app.add_subcommand("synth", "synthesize a video clip from one image");
  std::string synth_in, synth_out;
  PipelineFlags synth_flags;
  synth->add_option("image", synth_in, "input PGM/PPM image")->required();
  synth->add_option("clipdir", synth_out, "output clip directory")->required();
  synth_flags.add_clip(synth);

  // simulate
  auto* sim = app.add_subcommand("simulate", "convert a clip directory into an EVT0 event file");
  std::string sim_in, sim_out;
  PipelineFlags sim_flags;
  sim->add_option("clipdir", sim_in, "clip directory (frame_%03d.pgm, clip.json)")->required();
  sim->add_option("out", sim_out, "output .evt file")->required();
  sim_flags.add_dvs(sim);

  // voxelize
  auto* vox = app.add_subcommand("voxelize", "accumulate an event file into a voxel grid");
  std::string vox_in, vox_out;
  int vox_bins = 5;
  vox->add_option("in", vox_in, "input .evt file")->required();
  vox->add_option("--bins", vox_bins, "time bins")->check(CLI::PositiveNumber);
  vox->add_option("--out", vox_out, "write the voxel as JSON");

  // variant
  auto* var = app.add_subcommand("variant", "write a sparse and/or noisy robustness variant");
  std::string var_in, var_out, var_kind;
  double noise_frac = 0.01;
  var->add_option("in", var_in, "input .evt file")->required();
  var->add_option("--kind", var_kind, "sparse | noise | sparse_noise")
    ->required()
    ->check(CLI::IsMember({"sparse", "noise", "sparse_noise"}));
  var->add_option("--noise-frac", noise_frac, "modified fraction of events, in [0, 0.01]");
  var->add_option("--out", var_out, "output .evt file")->required();

  // verify
  auto* ver = app.add_subcommand("verify", "run an invariant suite and print a pass/fail table");
  std::string suite;
  std::size_t instances = 0;
  ver->add_option("suite", suite, "physics | gradients | masking | freeze | all")
    ->required()
    ->check(CLI::IsMember({"physics", "gradients", "masking", "freeze", "all"}));
  ver->add_option("--instances", instances, "instances, seeds or steps (suite-specific; 0 = default)");

  // train
  auto* train = app.add_subcommand("train", "run the MM -> Trans -> CL schedule on a dataset");
  std::string schedule_path, dataset_dir, train_out;
  std::size_t synthetic = 0;
  train->add_option("dataset", dataset_dir, "dataset directory written by gen-data");
  train->add_option("--schedule", schedule_path, "schedule file (TOML subset or JSON)")->required();
  train->add_option("--synthetic", synthetic, "train on N synthetic stripe samples instead of a dataset");
  train->add_option("--out", train_out, "output directory for checkpoints and the loss trace")->required();

  // stats
  auto* stats = app.add_subcommand("stats", "summarize an event file");
  std::string stats_in;
  stats->add_option("in", stats_in, "input .evt file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return kExitUsage;
  }

  try {
    if (*gen) {
      json echo;
      const evkit::DatasetConfig cfg = effective_config(g, gen_flags, echo);
      const std::uint64_t seed = require_seed(g);
      echo_config("gen-data", {{"dataset", echo}, {"seed", seed}, {"workers", workers}});
      evkit::BuildOptions opts;
      opts.workers = workers;
      opts.log = [](const std::string& m) { std::cerr << m << '\n'; };
      const json manifest = evkit::build_dataset(gen_in, gen_out, cfg, seed, opts);
      std::set<std::string> shards;
      for (const auto& r : manifest["records"])
        shards.insert(r["shard"].get<std::string>());
      emit({{"records", manifest["records"].size()},
            {"shards", shards.size()},
            {"skipped", manifest["skipped"].size()},
            {"config_hash", manifest["config_hash"]},
            {"manifest", (fs::path(gen_out) / "manifest.json").string()}});
    } else if (*synth) {
      json echo;
      const evkit::DatasetConfig cfg = effective_config(g, synth_flags, echo);
      const std::uint64_t seed = require_seed(g);
      echo_config("synth", {{"clip", echo["clip"]}, {"seed", seed}});
      const evkit::VideoClip clip = evkit::synthesize_clip(evkit::read_pnm(synth_in), seed, cfg.clip);
      evkit::write_clip(synth_out, clip, cfg.clip);
      emit({{"frames", clip.frames.size()},
            {"fps", clip.fps},
            {"clamp_scale", clip.clamp_scale},
            {"org_to_start", evkit::to_json(clip.org_to_start)},
            {"start_to_end", evkit::to_json(clip.start_to_end)}});
    } else if (*sim) {
      json echo;
      evkit::DatasetConfig cfg = effective_config(g, sim_flags, echo);
      cfg.dvs.seed = require_seed(g);
      const json dvs = evkit::to_json(cfg.dvs);
      echo_config("simulate", {{"dvs", dvs}});
      const evkit::VideoClip clip = evkit::read_clip(sim_in);
      const evkit::EventStream s = evkit::simulate(clip, cfg.dvs);
      evkit::write_evt(sim_out, s, {{"generator", "dvs_sim"}, {"dvs", dvs}, {"config_hash", evkit::config_hash(dvs)}});
      emit(stream_summary(s));
    } else if (*vox) {
      echo_config("voxelize", {{"bins", vox_bins}});
      const evkit::EventStream s = evkit::read_evt(vox_in);
      const evkit::EventVoxel v = evkit::voxelize(s, vox_bins);
      double sum = 0.0, abs_sum = 0.0;
      std::size_t nonzero = 0;
      for (double x : v.data) {
        sum += x;
        abs_sum += std::abs(x);
        nonzero += x != 0.0;
      }
      if (!vox_out.empty())
        evkit::write_text_atomic(
          vox_out, json{{"width", v.width}, {"height", v.height}, {"bins", v.bins}, {"layout", "y,x,bin"}, {"data", v.data}}
                     .dump() + "\n");
      emit({{"width", v.width}, {"height", v.height}, {"bins", v.bins}, {"sum", sum}, {"abs_sum", abs_sum},
            {"nonzero_cells", nonzero}, {"events", s.size()}});
    } else if (*var) {
      const std::uint64_t seed = require_seed(g);
      echo_config("variant", {{"kind", var_kind}, {"noise_frac", noise_frac}, {"seed", seed}});
      const evkit::EventStream s = evkit::read_evt(var_in);
      const auto r = evkit::make_variant_logged(s, evkit::parse_variant_kind(var_kind.c_str()), noise_frac, seed);
      const json prov = {{"generator", "variant"}, {"kind", var_kind}, {"noise_frac", noise_frac}, {"seed", seed}};
      evkit::write_evt(var_out, r.stream, {{"variant", prov}, {"config_hash", evkit::config_hash(prov)}});
      std::size_t erased = 0;
      for (const auto& m : r.log)
        erased += m.op == evkit::Modification::Op::Erase;
      emit({{"input_events", s.size()},
            {"output_events", r.stream.size()},
            {"sparse_dropped", r.sparse_dropped},
            {"modifications", r.log.size()},
            {"erased", erased},
            {"inserted", r.log.size() - erased}});
    } else if (*ver) {
      const std::uint64_t seed = require_seed(g);
      echo_config("verify", {{"suite", suite}, {"seed", seed}, {"instances", instances}});
      TempDir tmp;
      evkit::cli::VerifyOptions o{seed, instances, tmp.path()};
      std::vector<evkit::cli::CheckRow> rows;
      auto run = [&](const std::string& name, auto fn) {
        if (suite == name || suite == "all") {
          std::cerr << "running " << name << " suite\n";
          auto r = fn(o);
          rows.insert(rows.end(), r.begin(), r.end());
        }
      };
      run("physics", evkit::cli::verify_physics);
      run("gradients", evkit::cli::verify_gradients);
      run("masking", evkit::cli::verify_masking);
      run("freeze", evkit::cli::verify_freeze);
      evkit::cli::print_table(std::cout, rows);
      const bool ok = std::all_of(rows.begin(), rows.end(), [](const auto& r) { return r.pass; });
      return ok ? kExitOk : kExitRuntime;
    } else if (*train) {
      const std::uint64_t seed = require_seed(g);
      if (dataset_dir.empty() == (synthetic == 0))
        throw UsageError("train needs exactly one of <dataset> or --synthetic N");
      const evkit::TrainPlan plan = evkit::load_plan(schedule_path);
      const std::vector<evkit::SampleRecord> data =
        synthetic ? evkit::stripe_dataset(synthetic, seed) : evkit::load_dataset(dataset_dir);
      if (data.empty())
        throw std::runtime_error("dataset holds no records");
      json model = plan.model;
      model["width"] = data.front().voxel.width;
      model["height"] = data.front().voxel.height;
      model["bins"] = data.front().voxel.bins;
      model["target_dim"] = data.front().target_feature.size();
      evkit::TrainOptions opts;
      opts.model = evkit::model_config_from_json(model);
      opts.model.seed = seed;
      opts.model.validate();
      opts.checkpoint_dir = train_out;
      opts.on_step = [](const evkit::LossRecord& r) {
        if (r.step % 20 == 0)
          std::cerr << evkit::to_string(r.stage) << " step " << r.step << " loss " << r.loss << '\n';
      };
      json stages = json::array();
      for (const auto& s : plan.stages)
        stages.push_back(evkit::to_json(s));
      echo_config("train", {{"model", evkit::to_json(opts.model)}, {"stages", stages}, {"samples", data.size()}});

      const evkit::TrainResult r = evkit::train_stages(data, plan.stages, seed, opts);
      evkit::write_loss_csv(fs::path(train_out) / "loss.csv", r.trace);
      json out = json::array();
      for (const auto& rep : r.stages) {
        json frozen_ok = true;
        const auto trainable = evkit::trainable_groups(rep.stage);
        for (evkit::ParamGroup pg : evkit::kAllGroups)
          if (std::find(trainable.begin(), trainable.end(), pg) == trainable.end() &&
              rep.before.at(pg) != rep.after.at(pg))
            frozen_ok = false;
        json e = {{"stage", evkit::to_string(rep.stage)},
                  {"steps", rep.steps},
                  {"checkpoint", rep.checkpoint.string()},
                  {"frozen_groups_unchanged", frozen_ok}};
        if (rep.steps > 0) {
          const std::size_t w = std::min<std::size_t>(20, rep.steps);
          e["initial_loss"] = evkit::head_mean(r.trace, rep.stage, w);
          e["final_loss"] = evkit::tail_mean(r.trace, rep.stage, w);
        }
        out.push_back(e);
      }
      emit({{"stages", out}, {"loss_trace", (fs::path(train_out) / "loss.csv").string()}});
    } else if (*stats) {
      echo_config("stats", json::object());
      const evkit::EventStream s = evkit::read_evt(stats_in);
      std::vector<std::size_t> per_pixel(static_cast<std::size_t>(s.width) * s.height, 0);
      for (const evkit::Event& e : s.events)
        ++per_pixel[static_cast<std::size_t>(e.y) * s.width + e.x];
      // Buckets: 0, 1, 2-3, 4-7, ...
      std::vector<std::size_t> hist;
      for (std::size_t c : per_pixel) {
        std::size_t b = 0;
        while ((std::size_t{1} << b) <= c)
          ++b;
        if (hist.size() <= b)
          hist.resize(b + 1, 0);
        ++hist[b];
      }
      json buckets = json::array();
      for (std::size_t b = 0; b < hist.size(); ++b) {
        const std::size_t lo = b == 0 ? 0 : std::size_t{1} << (b - 1);
        const std::size_t hi = b == 0 ? 0 : (std::size_t{1} << b) - 1;
        buckets.push_back({{"events_min", lo}, {"events_max", hi}, {"pixels", hist[b]}});
      }
      json j = stream_summary(s);
      j["duration_us"] = s.t_end - s.t_start;
      j["density_histogram"] = buckets;
      emit(j);
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}
