#include "evkit/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include "evkit/io.hpp"
#include "evkit/rng.hpp"
#include "toml_lite.hpp"

namespace evkit {

namespace fs = std::filesystem;

StageConfig default_stage_config(Stage stage, std::size_t steps)
{
  StageConfig s;
  s.stage = stage;
  s.trainable = trainable_groups(stage);
  s.steps = steps;
  switch (stage) {
  case Stage::MM:
    s.lr = 1e-2;
    s.warmup_steps = steps * 20 / 500;
    break;
  case Stage::Trans:
    s.lr = 1e-3;
    s.warmup_steps = steps * 2 / 10;
    break;
  case Stage::CL:
    s.lr = 1e-2;
    s.warmup_steps = steps * 20 / 200;
    break;
  }
  return s;
}

nlohmann::json to_json(const StageConfig& s)
{
  nlohmann::json groups = nlohmann::json::array();
  for (ParamGroup g : s.trainable)
    groups.push_back(to_string(g));
  nlohmann::json j = {
    {"stage", to_string(s.stage)},   {"trainable", groups},         {"steps", s.steps},
    {"batch_size", s.batch_size},    {"lr", s.lr},                  {"beta1", s.beta1},
    {"beta2", s.beta2},              {"eps", s.eps},                {"weight_decay", s.weight_decay},
    {"grad_clip", s.grad_clip},      {"warmup_steps", s.warmup_steps}, {"cosine", s.cosine},
  };
  if (s.stage == Stage::MM) {
    j["mask_ratio"] = s.mask_ratio;
    j["mask_strategy"] = to_string(s.mask_strategy);
  }
  return j;
}

StageConfig stage_config_from_json(const nlohmann::json& j)
{
  if (!j.is_object())
    throw std::invalid_argument("stage entry must be a table");
  static const std::set<std::string> known = {"stage", "trainable", "steps", "batch_size", "lr", "beta1",
                                              "beta2", "betas", "eps", "weight_decay", "grad_clip",
                                              "warmup_steps", "cosine", "mask_ratio", "mask_strategy"};
  for (const auto& [k, v] : j.items())
    if (!known.count(k))
      throw std::invalid_argument("unknown stage key '" + k + "'");
  if (!j.contains("stage"))
    throw std::invalid_argument("stage entry needs a 'stage' name");

  const Stage stage = parse_stage(j.at("stage").get<std::string>());
  StageConfig s = default_stage_config(stage, j.value("steps", std::size_t{200}));
  try {
    s.batch_size = j.value("batch_size", s.batch_size);
    s.lr = j.value("lr", s.lr);
    s.beta1 = j.value("beta1", s.beta1);
    s.beta2 = j.value("beta2", s.beta2);
    if (j.contains("betas")) {
      const auto b = j.at("betas").get<std::vector<double>>();
      if (b.size() != 2)
        throw std::invalid_argument("betas needs two values");
      s.beta1 = b[0];
      s.beta2 = b[1];
    }
    s.eps = j.value("eps", s.eps);
    s.weight_decay = j.value("weight_decay", s.weight_decay);
    s.grad_clip = j.value("grad_clip", s.grad_clip);
    s.warmup_steps = j.value("warmup_steps", s.warmup_steps);
    s.cosine = j.value("cosine", s.cosine);
    s.mask_ratio = j.value("mask_ratio", s.mask_ratio);
    if (j.contains("mask_strategy"))
      s.mask_strategy = parse_mask_strategy(j.at("mask_strategy").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("stage entry: ") + e.what());
  }
  if (j.contains("trainable")) {
    std::set<ParamGroup> declared;
    for (const auto& g : j.at("trainable"))
      declared.insert(parse_param_group(g.get<std::string>()));
    const auto expected = trainable_groups(stage);
    if (declared != std::set<ParamGroup>(expected.begin(), expected.end()))
      throw std::invalid_argument(std::string("trainable groups declared for ") + to_string(stage) +
                                  " do not match the stage");
  }
  if (s.batch_size == 0)
    throw std::invalid_argument("batch_size must be positive");
  if (!(s.lr >= 0.0) || !(s.beta1 >= 0.0 && s.beta1 < 1.0) || !(s.beta2 >= 0.0 && s.beta2 < 1.0) ||
      !(s.eps > 0.0) || !(s.weight_decay >= 0.0) || !(s.grad_clip >= 0.0))
    throw std::invalid_argument("optimizer hyperparameters out of range");
  return s;
}

void validate_schedule(const std::vector<StageConfig>& schedule)
{
  for (std::size_t i = 1; i < schedule.size(); ++i)
    if (static_cast<int>(schedule[i].stage) <= static_cast<int>(schedule[i - 1].stage))
      throw std::invalid_argument(std::string("stage ") + to_string(schedule[i].stage) + " cannot follow " +
                                  to_string(schedule[i - 1].stage) + "; stages run in order MM, Trans, CL");
  for (const StageConfig& s : schedule) {
    const auto expected = trainable_groups(s.stage);
    if (std::set<ParamGroup>(s.trainable.begin(), s.trainable.end()) !=
        std::set<ParamGroup>(expected.begin(), expected.end()))
      throw std::invalid_argument(std::string("trainable groups do not match stage ") + to_string(s.stage));
  }
}

TrainPlan parse_plan(const std::string& text)
{
  const auto first = text.find_first_not_of(" \t\r\n");
  nlohmann::json j;
  if (first != std::string::npos && text[first] == '{') {
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument(std::string("schedule JSON: ") + e.what());
    }
  } else {
    j = parse_toml_subset(text);
  }

  TrainPlan plan;
  if (j.contains("model")) {
    if (!j.at("model").is_object())
      throw std::invalid_argument("'model' must be a table");
    plan.model = j.at("model");
  }
  const char* key = j.contains("stages") ? "stages" : "stage";
  if (j.contains(key)) {
    if (!j.at(key).is_array())
      throw std::invalid_argument(std::string("'") + key + "' must be an array of tables");
    for (const auto& s : j.at(key))
      plan.stages.push_back(stage_config_from_json(s));
  }
  validate_schedule(plan.stages);
  return plan;
}

TrainPlan load_plan(const fs::path& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw std::runtime_error("cannot open schedule " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_plan(ss.str());
}

AdamW::AdamW(const Model& model, const StageConfig& stage) : cfg_(stage)
{
  const auto& params = model.params();
  active_.assign(params.size(), 0);
  m_.resize(params.size());
  v_.resize(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (std::find(stage.trainable.begin(), stage.trainable.end(), params[i].group) == stage.trainable.end())
      continue;
    active_[i] = 1;
    m_[i].assign(params[i].value.size(), 0.0);
    v_[i].assign(params[i].value.size(), 0.0);
  }
}

double AdamW::step(Model& model, const Gradients& grad, double lr)
{
  auto& params = model.params();
  double sq = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i)
    if (active_[i])
      for (double g : grad.g[i])
        sq += g * g;
  const double norm = std::sqrt(sq);
  const double clip = (cfg_.grad_clip > 0.0 && norm > cfg_.grad_clip) ? cfg_.grad_clip / norm : 1.0;

  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!active_[i])
      continue;
    // Decay applies to weight matrices only, not biases or embeddings vectors.
    const bool decay = params[i].shape.size() >= 2;
    auto& w = params[i].value;
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double g = grad.g[i][k] * clip;
      m_[i][k] = cfg_.beta1 * m_[i][k] + (1.0 - cfg_.beta1) * g;
      v_[i][k] = cfg_.beta2 * v_[i][k] + (1.0 - cfg_.beta2) * g * g;
      const double mh = m_[i][k] / bc1;
      const double vh = v_[i][k] / bc2;
      w[k] -= lr * (mh / (std::sqrt(vh) + cfg_.eps) + (decay ? cfg_.weight_decay * w[k] : 0.0));
    }
  }
  return norm;
}

double scheduled_lr(const StageConfig& s, std::size_t step)
{
  if (step < s.warmup_steps)
    return s.lr * static_cast<double>(step + 1) / static_cast<double>(s.warmup_steps);
  if (!s.cosine || s.steps <= s.warmup_steps)
    return s.lr;
  const double progress =
    static_cast<double>(step - s.warmup_steps) / static_cast<double>(s.steps - s.warmup_steps);
  return s.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

namespace {

std::map<ParamGroup, std::string> group_hashes(const Model& model)
{
  std::map<ParamGroup, std::string> out;
  for (ParamGroup g : kAllGroups)
    out[g] = sha256_hex(model.group_bytes(g));
  return out;
}

} // namespace

TrainResult train_stages(const std::vector<SampleRecord>& data, const std::vector<StageConfig>& schedule,
                         std::uint64_t seed, const TrainOptions& options)
{
  validate_schedule(schedule);
  ModelConfig mc = options.model;
  mc.seed = seed;
  TrainResult result{Model(mc), {}, {}};
  Model& model = result.model;

  for (const SampleRecord& r : data)
    if (r.voxel.width != mc.width || r.voxel.height != mc.height || r.voxel.bins != mc.bins)
      throw std::invalid_argument("sample geometry does not match the model configuration");

  std::vector<PatchGrid> grids; // per sample, computed on first use
  std::size_t global_step = 0;
  for (std::size_t si = 0; si < schedule.size(); ++si) {
    const StageConfig& stage = schedule[si];
    if (stage.steps > 0 && data.empty())
      throw std::invalid_argument("cannot train on an empty dataset");
    StageReport report;
    report.stage = stage.stage;
    report.steps = stage.steps;
    report.before = group_hashes(model);

    AdamW opt(model, stage);
    NegativeQueue queue(mc.queue_capacity);
    const std::uint64_t stage_seed = derive_seed(seed, name_tag(to_string(stage.stage)), si);
    if (stage.stage == Stage::MM && grids.empty())
      for (const SampleRecord& r : data)
        grids.push_back(compute_density(r.voxel, mc.patch_size));

    for (std::size_t step = 0; step < stage.steps; ++step, ++global_step) {
      Rng rng(derive_seed(stage_seed, name_tag("batch"), step));
      std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
      std::vector<std::size_t> idx(stage.batch_size);
      for (std::size_t& i : idx)
        i = pick(rng);

      LossAndGrad lg;
      LossRecord rec{global_step, stage.stage, 0.0, 0};
      if (stage.stage == Stage::MM) {
        std::vector<MmExample> batch;
        batch.reserve(idx.size());
        for (std::size_t b = 0; b < idx.size(); ++b) {
          const SampleRecord& r = data[idx[b]];
          const PatchMask mask = make_mask(grids[idx[b]], stage.mask_ratio, stage.mask_strategy,
                                           derive_seed(stage_seed, name_tag("mask"), step * idx.size() + b));
          batch.push_back(make_mm_example(r.voxel, r.diff, mask, mc.patch_size));
        }
        lg = mm_loss_and_grad(model, batch);
      } else {
        std::vector<ClExample> batch;
        batch.reserve(idx.size());
        for (std::size_t i : idx)
          batch.push_back({data[i].voxel, data[i].target_feature});
        const auto negatives = queue.snapshot();
        rec.negatives = negatives.size();
        lg = cl_loss_and_grad(model, batch, negatives, stage.stage);
      }
      opt.step(model, lg.grad, scheduled_lr(stage, step));
      if (stage.stage != Stage::MM)
        queue.push(lg.keys);
      rec.loss = lg.loss;
      result.trace.push_back(rec);
      if (options.on_step)
        options.on_step(rec);
    }

    if (!options.checkpoint_dir.empty()) {
      fs::create_directories(options.checkpoint_dir);
      report.checkpoint = options.checkpoint_dir /
                          ("stage" + std::to_string(si) + "_" + to_string(stage.stage) + ".ckpt");
      write_checkpoint(report.checkpoint, model, stage.stage, global_step);
    }
    report.after = group_hashes(model);
    result.stages.push_back(std::move(report));
  }
  return result;
}

namespace {

std::vector<double> stage_losses(const std::vector<LossRecord>& trace, Stage stage)
{
  std::vector<double> v;
  for (const LossRecord& r : trace)
    if (r.stage == stage)
      v.push_back(r.loss);
  return v;
}

double mean_of(std::vector<double>::const_iterator a, std::vector<double>::const_iterator b)
{
  if (a == b)
    throw std::invalid_argument("no losses recorded for the stage");
  double s = 0.0;
  for (auto it = a; it != b; ++it)
    s += *it;
  return s / static_cast<double>(b - a);
}

} // namespace

double head_mean(const std::vector<LossRecord>& trace, Stage stage, std::size_t window)
{
  const auto v = stage_losses(trace, stage);
  return mean_of(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(std::min(window, v.size())));
}

double tail_mean(const std::vector<LossRecord>& trace, Stage stage, std::size_t window)
{
  const auto v = stage_losses(trace, stage);
  return mean_of(v.end() - static_cast<std::ptrdiff_t>(std::min(window, v.size())), v.end());
}

void write_loss_csv(const fs::path& path, const std::vector<LossRecord>& trace)
{
  std::ostringstream out;
  out.precision(17);
  out << "step,stage,loss,negatives\n";
  for (const LossRecord& r : trace)
    out << r.step << ',' << to_string(r.stage) << ',' << r.loss << ',' << r.negatives << '\n';
  write_text_atomic(path, out.str());
}

} // namespace evkit
