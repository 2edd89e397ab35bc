#include "evkit/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace evkit {

PatchTarget standardize(std::span<const double> patch, double eps)
{
  if (patch.empty())
    throw std::invalid_argument("standardize: empty patch");
  const double n = static_cast<double>(patch.size());
  double mean = 0.0;
  for (double v : patch)
    mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : patch)
    var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / n);
  const double denom = sd > eps ? sd : eps;

  PatchTarget t;
  t.standardized = true;
  t.pixels.resize(patch.size());
  for (std::size_t i = 0; i < patch.size(); ++i)
    t.pixels[i] = (patch[i] - mean) / denom;
  return t;
}

RecLoss rec_loss(const std::vector<std::vector<double>>& pred, const std::vector<PatchTarget>& target)
{
  if (pred.empty())
    throw std::invalid_argument("rec_loss needs at least one masked patch");
  if (pred.size() != target.size())
    throw std::invalid_argument("rec_loss: patch count mismatch");
  const double patches = static_cast<double>(pred.size());
  RecLoss out;
  out.grad.resize(pred.size());
  for (std::size_t p = 0; p < pred.size(); ++p) {
    const auto& a = pred[p];
    const auto& b = target[p].pixels;
    if (a.size() != b.size() || a.empty())
      throw std::invalid_argument("rec_loss: patch shape mismatch");
    const double n = static_cast<double>(a.size());
    double s = 0.0;
    out.grad[p].resize(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double d = a[i] - b[i];
      s += d * d;
      out.grad[p][i] = 2.0 * d / (n * patches);
    }
    out.loss += s / n;
  }
  out.loss /= patches;
  return out;
}

std::vector<double> l2_normalize(std::span<const double> v)
{
  double s = 0.0;
  for (double x : v)
    s += x * x;
  const double norm = std::sqrt(s);
  if (!(norm > 0.0) || !std::isfinite(norm))
    throw std::invalid_argument("cannot normalize a zero or non-finite vector");
  std::vector<double> out(v.begin(), v.end());
  for (double& x : out)
    x /= norm;
  return out;
}

namespace {

double dot(const std::vector<double>& a, const std::vector<double>& b)
{
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    s += a[i] * b[i];
  return s;
}

void require_usable(const std::vector<double>& v, std::size_t dim, const char* what)
{
  if (v.size() != dim)
    throw std::invalid_argument(std::string("info_nce: dimension mismatch in ") + what);
  double s = 0.0;
  for (double x : v)
    s += x * x;
  if (!(s > 0.0) || !std::isfinite(s))
    throw std::invalid_argument(std::string("info_nce: zero-norm ") + what);
}

} // namespace

InfoNceResult info_nce(const ContrastBatch& batch)
{
  if (!(batch.temperature > 0.0))
    throw std::invalid_argument("info_nce: temperature must be positive");
  const std::size_t dim = batch.query.size();
  if (dim == 0)
    throw std::invalid_argument("info_nce: empty query");
  require_usable(batch.query, dim, "query");
  require_usable(batch.positive, dim, "positive");
  for (const auto& k : batch.negatives)
    require_usable(k, dim, "negative");

  const double inv_t = 1.0 / batch.temperature;
  const std::size_t K = batch.negatives.size();
  std::vector<double> logits(K + 1);
  logits[0] = dot(batch.query, batch.positive) * inv_t;
  for (std::size_t j = 0; j < K; ++j)
    logits[j + 1] = dot(batch.query, batch.negatives[j]) * inv_t;

  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits)
    z += std::exp(l - mx);
  const double lse = mx + std::log(z);

  InfoNceResult r;
  r.loss = lse - logits[0];

  // d loss / d logit_j = softmax_j - [j == 0]
  std::vector<double> coef(K + 1);
  for (std::size_t j = 0; j <= K; ++j)
    coef[j] = std::exp(logits[j] - lse);
  coef[0] -= 1.0;

  r.grad_query.assign(dim, 0.0);
  r.grad_positive.resize(dim);
  for (std::size_t i = 0; i < dim; ++i) {
    r.grad_query[i] += coef[0] * batch.positive[i] * inv_t;
    r.grad_positive[i] = coef[0] * batch.query[i] * inv_t;
  }
  r.grad_negatives.resize(K);
  for (std::size_t j = 0; j < K; ++j) {
    const double c = coef[j + 1] * inv_t;
    const auto& k = batch.negatives[j];
    auto& g = r.grad_negatives[j];
    g.resize(dim);
    for (std::size_t i = 0; i < dim; ++i) {
      r.grad_query[i] += c * k[i];
      g[i] = c * batch.query[i];
    }
  }
  return r;
}

NegativeQueue::NegativeQueue(std::size_t capacity) : capacity_(capacity)
{
  if (capacity == 0)
    throw std::invalid_argument("negative queue capacity must be positive");
}

void NegativeQueue::push(std::vector<double> key)
{
  keys_.push_back(std::move(key));
  while (keys_.size() > capacity_)
    keys_.pop_front();
}

void NegativeQueue::push(const std::vector<std::vector<double>>& keys)
{
  for (const auto& k : keys)
    push(k);
}

} // namespace evkit
