#include "evkit/toy_model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "byte_io.hpp"
#include "evkit/io.hpp"
#include "evkit/rng.hpp"

namespace evkit {

namespace fs = std::filesystem;

const char* to_string(ParamGroup g)
{
  switch (g) {
  case ParamGroup::Encoder: return "encoder";
  case ParamGroup::Decoder: return "decoder";
  case ParamGroup::Projection: return "projection";
  case ParamGroup::Prediction: return "prediction";
  case ParamGroup::TargetProj: return "target_proj";
  }
  return "?";
}

ParamGroup parse_param_group(const std::string& name)
{
  for (ParamGroup g : kAllGroups)
    if (name == to_string(g))
      return g;
  throw std::invalid_argument("unknown parameter group: " + name);
}

const char* to_string(Stage s)
{
  switch (s) {
  case Stage::MM: return "MM";
  case Stage::Trans: return "Trans";
  case Stage::CL: return "CL";
  }
  return "?";
}

Stage parse_stage(const std::string& name)
{
  std::string up;
  for (char c : name)
    up.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  if (up == "MM") return Stage::MM;
  if (up == "TRANS") return Stage::Trans;
  if (up == "CL") return Stage::CL;
  throw std::invalid_argument("unknown stage: " + name);
}

std::vector<ParamGroup> trainable_groups(Stage s)
{
  switch (s) {
  case Stage::MM: return {ParamGroup::Encoder, ParamGroup::Decoder};
  case Stage::Trans: return {ParamGroup::Projection, ParamGroup::Prediction, ParamGroup::TargetProj};
  case Stage::CL:
    return {ParamGroup::Encoder, ParamGroup::Projection, ParamGroup::Prediction, ParamGroup::TargetProj};
  }
  return {};
}

void ModelConfig::validate() const
{
  if (width <= 0 || height <= 0 || bins <= 0 || patch_size <= 0 || embed_dim <= 0 || target_dim <= 0)
    throw std::invalid_argument("model dimensions must be positive");
  if (width % patch_size != 0 || height % patch_size != 0)
    throw std::invalid_argument("model geometry must tile by patch_size");
  if (!(temperature > 0.0))
    throw std::invalid_argument("temperature must be positive");
  if (queue_capacity == 0)
    throw std::invalid_argument("queue capacity must be positive");
}

nlohmann::json to_json(const ModelConfig& c)
{
  return {{"width", c.width},         {"height", c.height},           {"bins", c.bins},
          {"patch_size", c.patch_size}, {"embed_dim", c.embed_dim},   {"target_dim", c.target_dim},
          {"temperature", c.temperature}, {"queue_capacity", c.queue_capacity}, {"seed", c.seed}};
}

ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig c)
{
  c.width = j.value("width", c.width);
  c.height = j.value("height", c.height);
  c.bins = j.value("bins", c.bins);
  c.patch_size = j.value("patch_size", c.patch_size);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.target_dim = j.value("target_dim", c.target_dim);
  c.temperature = j.value("temperature", c.temperature);
  c.queue_capacity = j.value("queue_capacity", c.queue_capacity);
  c.seed = j.value("seed", c.seed);
  return c;
}

namespace {

// Parameter slots, in storage order.
enum Slot : std::size_t {
  kEncWLow, kEncBLow, kEncWHigh, kEncBHigh,
  kDecMask, kDecPos, kDecWSelf, kDecWNbr, kDecWCtx, kDecB, kDecWOut, kDecBOut,
  kProjW1, kProjB1, kProjW2, kProjB2, kProjW3, kProjB3,
  kPredW1, kPredB1, kPredW2, kPredB2,
  kTgtW, kTgtB,
  kSlotCount
};

using Vec = std::vector<double>;

// y = W x + b, W row-major rows x cols.
Vec affine(const Vec& w, const Vec& b, const Vec& x)
{
  const std::size_t rows = b.size(), cols = x.size();
  Vec y(b);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = &w[r * cols];
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c)
      s += row[c] * x[c];
    y[r] += s;
  }
  return y;
}

// y += W x (no bias).
void matvec_add(const Vec& w, const Vec& x, Vec& y)
{
  const std::size_t rows = y.size(), cols = x.size();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = &w[r * cols];
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c)
      s += row[c] * x[c];
    y[r] += s;
  }
}

// dx += W^T dy
void matvec_t_add(const Vec& w, const Vec& dy, Vec& dx)
{
  const std::size_t rows = dy.size(), cols = dx.size();
  for (std::size_t r = 0; r < rows; ++r) {
    const double g = dy[r];
    if (g == 0.0)
      continue;
    const double* row = &w[r * cols];
    for (std::size_t c = 0; c < cols; ++c)
      dx[c] += row[c] * g;
  }
}

// dW += scale * dy x^T
void outer_add(Vec& dw, const Vec& dy, const Vec& x, double scale = 1.0)
{
  const std::size_t rows = dy.size(), cols = x.size();
  for (std::size_t r = 0; r < rows; ++r) {
    const double g = dy[r] * scale;
    if (g == 0.0)
      continue;
    double* row = &dw[r * cols];
    for (std::size_t c = 0; c < cols; ++c)
      row[c] += g * x[c];
  }
}

void axpy(Vec& y, const Vec& x, double a = 1.0)
{
  for (std::size_t i = 0; i < y.size(); ++i)
    y[i] += a * x[i];
}

Vec tanh_vec(Vec v)
{
  for (double& x : v)
    x = std::tanh(x);
  return v;
}

// d pre-activation from d output through tanh, given the tanh output.
Vec tanh_back(const Vec& out, const Vec& dout)
{
  Vec d(out.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    d[i] = dout[i] * (1.0 - out[i] * out[i]);
  return d;
}

std::vector<std::vector<std::size_t>> neighbours(int rows, int cols)
{
  std::vector<std::vector<std::size_t>> nb(static_cast<std::size_t>(rows) * cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      auto& list = nb[static_cast<std::size_t>(r) * cols + c];
      if (r > 0) list.push_back(static_cast<std::size_t>(r - 1) * cols + c);
      if (r + 1 < rows) list.push_back(static_cast<std::size_t>(r + 1) * cols + c);
      if (c > 0) list.push_back(static_cast<std::size_t>(r) * cols + c - 1);
      if (c + 1 < cols) list.push_back(static_cast<std::size_t>(r) * cols + c + 1);
    }
  return nb;
}

void check_geometry(const Model& model, const EventVoxel& voxel)
{
  const ModelConfig& c = model.config();
  if (voxel.width != c.width || voxel.height != c.height || voxel.bins != c.bins)
    throw std::invalid_argument("voxel geometry does not match the model");
}

struct EncoderCache
{
  std::vector<Vec> x, low, high;
};

EncoderCache encode(const std::vector<Parameter>& p, const std::vector<Vec>& patches)
{
  EncoderCache c;
  c.x = patches;
  c.low.reserve(patches.size());
  c.high.reserve(patches.size());
  for (const Vec& x : patches) {
    Vec e = affine(p[kEncWLow].value, p[kEncBLow].value, x);
    c.high.push_back(tanh_vec(affine(p[kEncWHigh].value, p[kEncBHigh].value, e)));
    c.low.push_back(std::move(e));
  }
  return c;
}

// Backpropagates token gradients. d_low receives the fused skip path when
// `fused`; d_high is always the gradient w.r.t. the high-path output.
void encode_backward(const std::vector<Parameter>& p, const EncoderCache& c,
                     const std::vector<Vec>& d_token, bool fused, Gradients& g, double scale)
{
  for (std::size_t i = 0; i < c.x.size(); ++i) {
    const Vec& dt = d_token[i];
    const Vec dpre = tanh_back(c.high[i], dt);
    Vec de(c.low[i].size(), 0.0);
    if (fused)
      de = dt;
    matvec_t_add(p[kEncWHigh].value, dpre, de);
    outer_add(g.g[kEncWHigh], dpre, c.low[i], scale);
    axpy(g.g[kEncBHigh], dpre, scale);
    outer_add(g.g[kEncWLow], de, c.x[i], scale);
    axpy(g.g[kEncBLow], de, scale);
  }
}

struct DecoderCache
{
  std::vector<Vec> z, nbr, act;
  Vec ctx;
  std::vector<Vec> out;
};

// Decodes every patch position; `tokens[p]` is used for visible p.
DecoderCache decode(const Model& model, const std::vector<Vec>& tokens, const std::vector<char>& visible)
{
  const auto& p = model.params();
  const ModelConfig& cfg = model.config();
  const std::size_t n = static_cast<std::size_t>(cfg.num_patches());
  const std::size_t d = static_cast<std::size_t>(cfg.embed_dim);
  const auto nb = neighbours(cfg.grid_rows(), cfg.grid_cols());

  DecoderCache c;
  c.z.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    c.z[i] = visible[i] ? tokens[i] : p[kDecMask].value;
    for (std::size_t k = 0; k < d; ++k)
      c.z[i][k] += p[kDecPos].value[i * d + k];
  }
  c.ctx.assign(d, 0.0);
  for (const Vec& z : c.z)
    axpy(c.ctx, z, 1.0 / static_cast<double>(n));
  c.nbr.resize(n);
  c.act.resize(n);
  c.out.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    c.nbr[i].assign(d, 0.0);
    for (std::size_t j : nb[i])
      axpy(c.nbr[i], c.z[j], 1.0 / static_cast<double>(nb[i].size()));
    Vec pre = p[kDecB].value;
    matvec_add(p[kDecWSelf].value, c.z[i], pre);
    matvec_add(p[kDecWNbr].value, c.nbr[i], pre);
    matvec_add(p[kDecWCtx].value, c.ctx, pre);
    c.act[i] = tanh_vec(std::move(pre));
    c.out[i] = affine(p[kDecWOut].value, p[kDecBOut].value, c.act[i]);
  }
  return c;
}

// Returns d loss / d z for every position given output gradients.
std::vector<Vec> decode_backward(const Model& model, const DecoderCache& c, const std::vector<Vec>& d_out,
                                 Gradients& g, double scale)
{
  const auto& p = model.params();
  const ModelConfig& cfg = model.config();
  const std::size_t n = c.z.size();
  const std::size_t d = static_cast<std::size_t>(cfg.embed_dim);
  const auto nb = neighbours(cfg.grid_rows(), cfg.grid_cols());

  std::vector<Vec> dz(n, Vec(d, 0.0));
  Vec dctx(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (d_out[i].empty())
      continue;
    outer_add(g.g[kDecWOut], d_out[i], c.act[i], scale);
    axpy(g.g[kDecBOut], d_out[i], scale);
    Vec da(d, 0.0);
    matvec_t_add(p[kDecWOut].value, d_out[i], da);
    const Vec dpre = tanh_back(c.act[i], da);
    outer_add(g.g[kDecWSelf], dpre, c.z[i], scale);
    outer_add(g.g[kDecWNbr], dpre, c.nbr[i], scale);
    outer_add(g.g[kDecWCtx], dpre, c.ctx, scale);
    axpy(g.g[kDecB], dpre, scale);
    matvec_t_add(p[kDecWSelf].value, dpre, dz[i]);
    Vec dn(d, 0.0);
    matvec_t_add(p[kDecWNbr].value, dpre, dn);
    for (std::size_t j : nb[i])
      axpy(dz[j], dn, 1.0 / static_cast<double>(nb[i].size()));
    matvec_t_add(p[kDecWCtx].value, dpre, dctx);
  }
  for (std::size_t i = 0; i < n; ++i)
    axpy(dz[i], dctx, 1.0 / static_cast<double>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < d; ++k)
      g.g[kDecPos][i * d + k] += scale * dz[i][k];
  return dz;
}

struct HeadCache
{
  Vec feature, g1, g2, g3, r1, r2, query;
  double r2_norm = 0.0;
  Vec s, key;
  double s_norm = 0.0;
};

HeadCache heads_forward(const std::vector<Parameter>& p, const Vec& feature, const Vec& target)
{
  HeadCache h;
  h.feature = feature;
  h.g1 = tanh_vec(affine(p[kProjW1].value, p[kProjB1].value, feature));
  h.g2 = tanh_vec(affine(p[kProjW2].value, p[kProjB2].value, h.g1));
  h.g3 = affine(p[kProjW3].value, p[kProjB3].value, h.g2);
  h.r1 = tanh_vec(affine(p[kPredW1].value, p[kPredB1].value, h.g3));
  h.r2 = affine(p[kPredW2].value, p[kPredB2].value, h.r1);
  h.query = l2_normalize(h.r2);
  double s = 0.0;
  for (double v : h.r2)
    s += v * v;
  h.r2_norm = std::sqrt(s);

  h.s = affine(p[kTgtW].value, p[kTgtB].value, target);
  h.key = l2_normalize(h.s);
  s = 0.0;
  for (double v : h.s)
    s += v * v;
  h.s_norm = std::sqrt(s);
  return h;
}

// d/dx of x/|x| applied to dy, given y = x/|x|.
Vec normalize_back(const Vec& y, double norm, const Vec& dy)
{
  double dot = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i)
    dot += y[i] * dy[i];
  Vec dx(y.size());
  for (std::size_t i = 0; i < y.size(); ++i)
    dx[i] = (dy[i] - y[i] * dot) / norm;
  return dx;
}

// Returns d loss / d feature.
Vec heads_backward(const std::vector<Parameter>& p, const HeadCache& h, const Vec& target,
                   const Vec& d_query, const Vec& d_key, Gradients& g, double scale)
{
  const Vec ds = normalize_back(h.key, h.s_norm, d_key);
  outer_add(g.g[kTgtW], ds, target, scale);
  axpy(g.g[kTgtB], ds, scale);

  const Vec dr2 = normalize_back(h.query, h.r2_norm, d_query);
  outer_add(g.g[kPredW2], dr2, h.r1, scale);
  axpy(g.g[kPredB2], dr2, scale);
  Vec dr1(h.r1.size(), 0.0);
  matvec_t_add(p[kPredW2].value, dr2, dr1);
  const Vec dpre_r1 = tanh_back(h.r1, dr1);
  outer_add(g.g[kPredW1], dpre_r1, h.g3, scale);
  axpy(g.g[kPredB1], dpre_r1, scale);
  Vec dg3(h.g3.size(), 0.0);
  matvec_t_add(p[kPredW1].value, dpre_r1, dg3);

  outer_add(g.g[kProjW3], dg3, h.g2, scale);
  axpy(g.g[kProjB3], dg3, scale);
  Vec dg2(h.g2.size(), 0.0);
  matvec_t_add(p[kProjW3].value, dg3, dg2);
  const Vec dpre2 = tanh_back(h.g2, dg2);
  outer_add(g.g[kProjW2], dpre2, h.g1, scale);
  axpy(g.g[kProjB2], dpre2, scale);
  Vec dg1(h.g1.size(), 0.0);
  matvec_t_add(p[kProjW2].value, dpre2, dg1);
  const Vec dpre1 = tanh_back(h.g1, dg1);
  outer_add(g.g[kProjW1], dpre1, h.feature, scale);
  axpy(g.g[kProjB1], dpre1, scale);
  Vec df(h.feature.size(), 0.0);
  matvec_t_add(p[kProjW1].value, dpre1, df);
  return df;
}

Vec mean_pool(const std::vector<Vec>& tokens)
{
  Vec f(tokens.front().size(), 0.0);
  for (const Vec& t : tokens)
    axpy(f, t, 1.0 / static_cast<double>(tokens.size()));
  return f;
}

} // namespace

Model::Model(const ModelConfig& config) : config_(config)
{
  config_.validate();
  const std::size_t d = static_cast<std::size_t>(config_.embed_dim);
  const std::size_t in = static_cast<std::size_t>(config_.patch_input());
  const std::size_t n = static_cast<std::size_t>(config_.num_patches());
  const std::size_t px = static_cast<std::size_t>(config_.patch_pixels());
  const std::size_t dt = static_cast<std::size_t>(config_.target_dim);

  struct Spec
  {
    const char* name;
    ParamGroup group;
    std::vector<std::size_t> shape;
    std::size_t fan_in;
  };
  using G = ParamGroup;
  const std::vector<Spec> specs = {
    {"enc.w_low", G::Encoder, {d, in}, in},     {"enc.b_low", G::Encoder, {d}, in},
    {"enc.w_high", G::Encoder, {d, d}, d},      {"enc.b_high", G::Encoder, {d}, d},
    {"dec.mask_token", G::Decoder, {d}, d},     {"dec.pos", G::Decoder, {n, d}, d},
    {"dec.w_self", G::Decoder, {d, d}, d},      {"dec.w_nbr", G::Decoder, {d, d}, d},
    {"dec.w_ctx", G::Decoder, {d, d}, d},       {"dec.b", G::Decoder, {d}, d},
    {"dec.w_out", G::Decoder, {px, d}, d},      {"dec.b_out", G::Decoder, {px}, d},
    {"proj.w1", G::Projection, {d, d}, d},      {"proj.b1", G::Projection, {d}, d},
    {"proj.w2", G::Projection, {d, d}, d},      {"proj.b2", G::Projection, {d}, d},
    {"proj.w3", G::Projection, {d, d}, d},      {"proj.b3", G::Projection, {d}, d},
    {"pred.w1", G::Prediction, {d, d}, d},      {"pred.b1", G::Prediction, {d}, d},
    {"pred.w2", G::Prediction, {d, d}, d},      {"pred.b2", G::Prediction, {d}, d},
    {"tgt.w", G::TargetProj, {d, dt}, dt},      {"tgt.b", G::TargetProj, {d}, dt},
  };
  static_assert(kSlotCount == 24);

  params_.reserve(specs.size());
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const Spec& s = specs[i];
    std::size_t count = 1;
    for (std::size_t e : s.shape)
      count *= e;
    Parameter prm{s.name, s.group, s.shape, std::vector<double>(count)};
    Rng rng(derive_seed(config_.seed, name_tag(s.name)));
    const double bound = 1.0 / std::sqrt(static_cast<double>(s.fan_in));
    for (double& v : prm.value)
      v = uniform(rng, -bound, bound);
    params_.push_back(std::move(prm));
  }
}

Parameter& Model::param(const std::string& name)
{
  for (Parameter& p : params_)
    if (p.name == name)
      return p;
  throw std::invalid_argument("no parameter named " + name);
}

const Parameter& Model::param(const std::string& name) const
{
  return const_cast<Model*>(this)->param(name);
}

Gradients Model::zero_gradients() const
{
  Gradients g;
  g.g.reserve(params_.size());
  for (const Parameter& p : params_)
    g.g.emplace_back(p.value.size(), 0.0);
  return g;
}

std::vector<std::uint8_t> Model::group_bytes(ParamGroup group) const
{
  std::vector<std::uint8_t> out;
  for (const Parameter& p : params_) {
    if (p.group != group)
      continue;
    const auto* b = reinterpret_cast<const std::uint8_t*>(p.value.data());
    out.insert(out.end(), b, b + p.value.size() * sizeof(double));
  }
  return out;
}

bool operator==(const Model& a, const Model& b)
{
  if (a.params_.size() != b.params_.size())
    return false;
  for (std::size_t i = 0; i < a.params_.size(); ++i) {
    const auto& x = a.params_[i].value;
    const auto& y = b.params_[i].value;
    if (a.params_[i].name != b.params_[i].name || x.size() != y.size() ||
        std::memcmp(x.data(), y.data(), x.size() * sizeof(double)) != 0)
      return false;
  }
  return true;
}

std::vector<std::vector<double>> extract_patches(const EventVoxel& voxel, int patch_size)
{
  if (voxel.width % patch_size != 0 || voxel.height % patch_size != 0)
    throw std::invalid_argument("voxel does not tile by patch_size");
  const int rows = voxel.height / patch_size, cols = voxel.width / patch_size;
  std::vector<Vec> out;
  out.reserve(static_cast<std::size_t>(rows) * cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      Vec v;
      v.reserve(static_cast<std::size_t>(patch_size) * patch_size * voxel.bins);
      for (int dy = 0; dy < patch_size; ++dy)
        for (int dx = 0; dx < patch_size; ++dx)
          for (int k = 0; k < voxel.bins; ++k)
            v.push_back(voxel.at(c * patch_size + dx, r * patch_size + dy, k));
      out.push_back(std::move(v));
    }
  return out;
}

std::vector<std::vector<double>> extract_plane_patches(const Plane& plane, int patch_size)
{
  if (plane.width % patch_size != 0 || plane.height % patch_size != 0)
    throw std::invalid_argument("plane does not tile by patch_size");
  const int rows = plane.height / patch_size, cols = plane.width / patch_size;
  std::vector<Vec> out;
  out.reserve(static_cast<std::size_t>(rows) * cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      Vec v;
      v.reserve(static_cast<std::size_t>(patch_size) * patch_size);
      for (int dy = 0; dy < patch_size; ++dy)
        for (int dx = 0; dx < patch_size; ++dx)
          v.push_back(plane.at(c * patch_size + dx, r * patch_size + dy));
      out.push_back(std::move(v));
    }
  return out;
}

std::vector<std::vector<double>> encode_tokens(const Model& model, const std::vector<Vec>& patches, bool fused)
{
  EncoderCache c = encode(model.params(), patches);
  std::vector<Vec> tokens(patches.size());
  for (std::size_t i = 0; i < patches.size(); ++i) {
    tokens[i] = c.high[i];
    if (fused)
      axpy(tokens[i], c.low[i]);
  }
  return tokens;
}

namespace {

struct MmForward
{
  std::vector<std::size_t> visible_idx;
  EncoderCache enc;
  DecoderCache dec;
};

MmForward mm_forward(const Model& model, const EventVoxel& voxel, const PatchMask& mask)
{
  check_geometry(model, voxel);
  const std::size_t n = static_cast<std::size_t>(model.config().num_patches());
  if (mask.total() != n)
    throw std::invalid_argument("mask does not match the model's patch grid");
  const auto all = extract_patches(voxel, model.config().patch_size);
  std::vector<char> visible(n, 0);
  MmForward f;
  std::vector<Vec> vis_patches;
  for (std::size_t i : mask.visible) {
    visible.at(i) = 1;
    f.visible_idx.push_back(i);
    vis_patches.push_back(all[i]);
  }
  f.enc = encode(model.params(), vis_patches);
  std::vector<Vec> tokens(n);
  for (std::size_t j = 0; j < f.visible_idx.size(); ++j) {
    tokens[f.visible_idx[j]] = f.enc.low[j];
    axpy(tokens[f.visible_idx[j]], f.enc.high[j]);
  }
  f.dec = decode(model, tokens, visible);
  return f;
}

} // namespace

std::vector<std::vector<double>> forward_mm(const Model& model, const EventVoxel& voxel, const PatchMask& mask)
{
  MmForward f = mm_forward(model, voxel, mask);
  std::vector<Vec> out;
  out.reserve(mask.masked.size());
  for (std::size_t i : mask.masked)
    out.push_back(f.dec.out.at(i));
  return out;
}

MmExample make_mm_example(const EventVoxel& voxel, const DiffMap& diff, const PatchMask& mask, int patch_size)
{
  if (diff.width != voxel.width || diff.height != voxel.height)
    throw std::invalid_argument("diff map and voxel dimensions differ");
  const auto patches = extract_plane_patches(diff, patch_size);
  MmExample ex{voxel, mask, {}};
  ex.targets.reserve(mask.masked.size());
  for (std::size_t i : mask.masked)
    ex.targets.push_back(standardize(patches.at(i)));
  return ex;
}

LossAndGrad mm_loss_and_grad(const Model& model, const std::vector<MmExample>& batch)
{
  if (batch.empty())
    throw std::invalid_argument("empty batch");
  LossAndGrad r;
  r.grad = model.zero_gradients();
  const double scale = 1.0 / static_cast<double>(batch.size());
  const std::size_t n = static_cast<std::size_t>(model.config().num_patches());
  const std::size_t d = static_cast<std::size_t>(model.config().embed_dim);

  for (const MmExample& ex : batch) {
    MmForward f = mm_forward(model, ex.voxel, ex.mask);
    std::vector<Vec> pred;
    for (std::size_t i : ex.mask.masked)
      pred.push_back(f.dec.out[i]);
    RecLoss rl = rec_loss(pred, ex.targets);
    r.loss += scale * rl.loss;

    std::vector<Vec> d_out(n);
    for (std::size_t j = 0; j < ex.mask.masked.size(); ++j)
      d_out[ex.mask.masked[j]] = std::move(rl.grad[j]);
    const auto dz = decode_backward(model, f.dec, d_out, r.grad, scale);

    std::vector<char> visible(n, 0);
    for (std::size_t i : ex.mask.visible)
      visible[i] = 1;
    for (std::size_t i = 0; i < n; ++i)
      if (!visible[i])
        for (std::size_t k = 0; k < d; ++k)
          r.grad.g[kDecMask][k] += scale * dz[i][k];
    std::vector<Vec> d_tok;
    d_tok.reserve(f.visible_idx.size());
    for (std::size_t i : f.visible_idx)
      d_tok.push_back(dz[i]);
    encode_backward(model.params(), f.enc, d_tok, /*fused=*/true, r.grad, scale);
  }
  return r;
}

ContrastBatch forward_cl(const Model& model, const EventVoxel& voxel, const std::vector<double>& target_feature,
                         Stage stage, const std::vector<std::vector<double>>& negatives)
{
  if (stage == Stage::MM)
    throw std::invalid_argument("forward_cl is defined for the contrastive stages only");
  check_geometry(model, voxel);
  if (target_feature.size() != static_cast<std::size_t>(model.config().target_dim))
    throw std::invalid_argument("target feature dimension mismatch");
  const auto tokens = encode_tokens(model, extract_patches(voxel, model.config().patch_size), false);
  const HeadCache h = heads_forward(model.params(), mean_pool(tokens), target_feature);
  return ContrastBatch{h.query, h.key, negatives, model.config().temperature};
}

LossAndGrad cl_loss_and_grad(const Model& model, const std::vector<ClExample>& batch,
                             const std::vector<std::vector<double>>& negatives, Stage stage)
{
  if (stage == Stage::MM)
    throw std::invalid_argument("contrastive loss is defined for the contrastive stages only");
  if (batch.empty())
    throw std::invalid_argument("empty batch");
  LossAndGrad r;
  r.grad = model.zero_gradients();
  const double scale = 1.0 / static_cast<double>(batch.size());
  const bool encoder_trainable = stage == Stage::CL;

  for (const ClExample& ex : batch) {
    check_geometry(model, ex.voxel);
    if (ex.target_feature.size() != static_cast<std::size_t>(model.config().target_dim))
      throw std::invalid_argument("target feature dimension mismatch");
    const EncoderCache enc = encode(model.params(), extract_patches(ex.voxel, model.config().patch_size));
    const HeadCache h = heads_forward(model.params(), mean_pool(enc.high), ex.target_feature);
    const InfoNceResult nce = info_nce({h.query, h.key, negatives, model.config().temperature});
    r.loss += scale * nce.loss;
    r.keys.push_back(h.key);
    const Vec df = heads_backward(model.params(), h, ex.target_feature, nce.grad_query, nce.grad_positive,
                                  r.grad, scale);
    if (encoder_trainable) {
      const std::vector<Vec> d_tok(enc.x.size(), [&] {
        Vec v = df;
        for (double& x : v)
          x /= static_cast<double>(enc.x.size());
        return v;
      }());
      encode_backward(model.params(), enc, d_tok, /*fused=*/false, r.grad, scale);
    }
  }
  return r;
}

std::vector<double> make_target_feature(const GrayFrame& image, std::uint64_t seed, int dim)
{
  if (image.width <= 0 || image.height <= 0)
    throw std::invalid_argument("make_target_feature: empty image");
  if (dim <= 0)
    throw std::invalid_argument("make_target_feature: dim must be positive");
  constexpr int kGrid = 16;
  Vec cells(kGrid * kGrid, 0.0);
  for (int gy = 0; gy < kGrid; ++gy)
    for (int gx = 0; gx < kGrid; ++gx) {
      const int x0 = gx * image.width / kGrid, x1 = std::max(x0 + 1, (gx + 1) * image.width / kGrid);
      const int y0 = gy * image.height / kGrid, y1 = std::max(y0 + 1, (gy + 1) * image.height / kGrid);
      double s = 0.0;
      int cnt = 0;
      for (int y = y0; y < std::min(y1, image.height); ++y)
        for (int x = x0; x < std::min(x1, image.width); ++x) {
          s += image.at(x, y);
          ++cnt;
        }
      cells[gy * kGrid + gx] = cnt ? s / cnt / 255.0 : 0.0;
    }

  double mean = 0.0;
  for (double v : cells)
    mean += v;
  mean /= static_cast<double>(cells.size());
  Vec centered = cells;
  double energy = 0.0;
  for (double& v : centered) {
    v -= mean;
    energy += v * v;
  }
  if (energy < 1e-18) // flat image: fall back to the raw cells, then to ones
    centered = mean > 0.0 ? cells : Vec(cells.size(), 1.0);

  Rng rng(derive_seed(seed, name_tag("target_feature"), static_cast<std::uint64_t>(dim)));
  Vec out(static_cast<std::size_t>(dim), 0.0);
  for (int r = 0; r < dim; ++r)
    for (double c : centered)
      out[r] += normal(rng) * c;
  return l2_normalize(out);
}

namespace {

fs::path manifest_path(const fs::path& ckpt)
{
  fs::path p = ckpt;
  p.replace_extension(".manifest.json");
  return p;
}

} // namespace

void write_checkpoint(const fs::path& ckpt, const Model& model, Stage stage, std::size_t step)
{
  ByteWriter w;
  nlohmann::json entries = nlohmann::json::array();
  for (const Parameter& p : model.params()) {
    entries.push_back({{"name", p.name},
                       {"group", to_string(p.group)},
                       {"shape", p.shape},
                       {"offset", w.size()},
                       {"count", p.value.size()}});
    w.f64s(p.value);
  }
  const auto bytes = w.take();
  write_file_atomic(ckpt, bytes);
  const nlohmann::json manifest = {
    {"format", "evkit-ckpt-f64le"},
    {"stage", to_string(stage)},
    {"step", step},
    {"config", to_json(model.config())},
    {"params", entries},
    {"sha256", sha256_hex(bytes)},
  };
  write_text_atomic(manifest_path(ckpt), manifest.dump(2) + "\n");
}

Model read_checkpoint(const fs::path& ckpt)
{
  std::ifstream in(manifest_path(ckpt));
  if (!in)
    throw FormatError("missing checkpoint manifest for " + ckpt.string());
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint manifest: ") + e.what());
  }
  Model model(model_config_from_json(manifest.at("config")));
  const auto bytes = read_file(ckpt);
  if (manifest.value("sha256", "") != sha256_hex(bytes))
    throw FormatError("checkpoint content hash mismatch");
  ByteReader r(bytes);
  const auto& entries = manifest.at("params");
  if (entries.size() != model.params().size())
    throw FormatError("checkpoint parameter count mismatch");
  for (std::size_t i = 0; i < entries.size(); ++i) {
    Parameter& p = model.params()[i];
    if (entries[i].at("name").get<std::string>() != p.name ||
        entries[i].at("count").get<std::size_t>() != p.value.size())
      throw FormatError("checkpoint parameter layout mismatch at " + p.name);
    r.seek(entries[i].at("offset").get<std::size_t>());
    r.bytes(p.value.data(), p.value.size() * sizeof(double));
  }
  return model;
}

} // namespace evkit
