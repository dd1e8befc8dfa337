#include "focalseg/losses.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace focalseg {
namespace {

struct Sink {
  ProbGradient* grad = nullptr;
  double scale = 1.0;

  explicit operator bool() const { return grad != nullptr && scale != 0.0; }
  void add(std::size_t c, std::size_t i, double v) const { (*grad)[c][i] += scale * v; }
};

double clip(double p) { return std::clamp(p, kProbabilityClip, 1.0 - kProbabilityClip); }
bool clipped(double p) { return p < kProbabilityClip || p > 1.0 - kProbabilityClip; }

void check_inputs(const Prediction& pred, std::span<const BinaryMask> truth,
                  std::span<const WeightMap> weights, const ProbGradient* grad) {
  pred.validate();
  if (truth.size() != pred.classes())
    throw Error(ErrorCode::ShapeMismatch, "expected one truth mask per class");
  for (const auto& m : truth)
    if (m.rows() != pred.probs.front().rows() || m.cols() != pred.probs.front().cols())
      throw Error(ErrorCode::ShapeMismatch, "truth mask dimensions differ from prediction");
  if (!weights.empty()) {
    if (weights.size() != pred.classes())
      throw Error(ErrorCode::ShapeMismatch, "expected one weight map per class");
    for (const auto& w : weights) {
      if (!w.grid.same_shape(pred.probs.front()))
        throw Error(ErrorCode::ShapeMismatch, "weight map dimensions differ from prediction");
      for (double v : w.grid.values())
        if (!std::isfinite(v) || v < 0.0)
          throw Error(ErrorCode::NonFiniteInput, "weight maps must be finite and non-negative");
    }
  }
  if (grad != nullptr) {
    if (grad->size() != pred.classes())
      throw Error(ErrorCode::ShapeMismatch, "gradient must hold one grid per class");
    for (const auto& g : *grad)
      if (!g.same_shape(pred.probs.front()))
        throw Error(ErrorCode::ShapeMismatch, "gradient grid dimensions differ from prediction");
  }
}

double weight_at(std::span<const WeightMap> weights, std::size_t c, std::size_t i) {
  return weights.empty() ? 1.0 : weights[c].grid[i];
}

// Index of the ground-truth class at every pixel.
std::vector<std::size_t> truth_labels(std::span<const BinaryMask> truth) {
  const std::size_t n = truth.front().size();
  std::vector<std::size_t> labels(n, truth.size());
  for (std::size_t c = 0; c < truth.size(); ++c)
    for (std::size_t i = 0; i < n; ++i)
      if (truth[c][i]) {
        if (labels[i] != truth.size())
          throw Error(ErrorCode::InvalidArgument, "truth masks overlap");
        labels[i] = c;
      }
  for (auto l : labels)
    if (l == truth.size()) throw Error(ErrorCode::InvalidArgument, "pixel without a truth class");
  return labels;
}

void check_delta(double delta) {
  if (!(delta >= 0.0 && delta <= 1.0))
    throw Error(ErrorCode::InvalidArgument, "delta must lie in [0, 1]");
}

void check_aft_gamma(double gamma) {
  if (!(gamma >= 0.0 && gamma < 1.0))
    throw Error(ErrorCode::InvalidGamma, "AFT requires 0 <= gamma < 1");
}

double tversky_impl(const Prediction& pred, std::span<const BinaryMask> truth, double delta,
                    std::size_t c, std::span<const WeightMap> weights, const Sink& d_ti) {
  const auto& p = pred.probs[c];
  const auto& g = truth[c];
  const std::size_t n = p.size();
  double tp = 0.0, fp = 0.0, fn = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = weight_at(weights, c, i);
    const double gi = g[i];
    tp += w * p[i] * gi;
    fp += w * p[i] * (1.0 - gi);
    fn += w * (1.0 - p[i]) * gi;
  }
  const double denom = tp + delta * fp + (1.0 - delta) * fn;
  if (denom == 0.0) return 1.0;
  const double ti = tp / denom;
  if (d_ti) {
    for (std::size_t i = 0; i < n; ++i) {
      const double w = weight_at(weights, c, i);
      const double gi = g[i];
      const double d_tp = w * gi;
      const double d_denom = d_tp + delta * w * (1.0 - gi) - (1.0 - delta) * w * gi;
      d_ti.add(c, i, (d_tp * denom - tp * d_denom) / (denom * denom));
    }
  }
  return ti;
}

double aft_impl(const Prediction& pred, std::span<const BinaryMask> truth, double delta,
                double gamma, std::optional<std::size_t> rare, std::span<const WeightMap> weights,
                const Sink& sink) {
  check_aft_gamma(gamma);
  check_delta(delta);
  const std::size_t classes = pred.classes();
  const double inv_c = 1.0 / static_cast<double>(classes);
  double total = 0.0;
  for (std::size_t c = 0; c < classes; ++c) {
    const bool is_rare = rare && *rare == c;
    // Value first, then the outer derivative scales the TI gradient.
    const double ti = tversky_impl(pred, truth, delta, c, weights, Sink{});
    const double miss = 1.0 - ti;
    double outer = -1.0;
    if (is_rare) {
      total += std::pow(miss, 1.0 - gamma);
      outer = miss > 0.0 ? -(1.0 - gamma) * std::pow(miss, -gamma) : 0.0;
    } else {
      total += miss;
    }
    if (sink) tversky_impl(pred, truth, delta, c, weights, Sink{sink.grad, sink.scale * outer * inv_c});
  }
  return total * inv_c;
}

// Per-pixel -(coef) (1 - p)^gamma log p on the pixel's own class.
double af_impl(const Prediction& pred, std::span<const BinaryMask> truth, double delta,
               double gamma, std::optional<std::size_t> rare, std::span<const WeightMap> weights,
               const Sink& sink) {
  check_delta(delta);
  if (!(gamma >= 0.0) || !std::isfinite(gamma))
    throw Error(ErrorCode::InvalidGamma, "gamma must be finite and >= 0");
  const auto labels = truth_labels(truth);
  const std::size_t n = labels.size();
  const double inv_n = 1.0 / static_cast<double>(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t t = labels[i];
    const double raw = pred.probs[t][i];
    const double p = clip(raw);
    const double w = weight_at(weights, t, i);
    const double logp = std::log(p);
    double term = 0.0, d_term = 0.0;
    if (rare && *rare == t) {
      term = -delta * logp;
      d_term = -delta / p;
    } else {
      const double q = 1.0 - p;
      const double mod = gamma == 0.0 ? 1.0 : std::pow(q, gamma);
      term = -(1.0 - delta) * mod * logp;
      const double d_mod = gamma == 0.0 ? 0.0 : -gamma * std::pow(q, gamma - 1.0);
      d_term = -(1.0 - delta) * (d_mod * logp + mod / p);
    }
    total += w * term;
    if (sink && !clipped(raw)) sink.add(t, i, w * d_term * inv_n);
  }
  return total * inv_n;
}

double focal_impl(const Prediction& pred, std::span<const BinaryMask> truth, double gamma,
                  std::span<const WeightMap> weights, const Sink& sink) {
  return af_impl(pred, truth, 0.0, gamma, std::nullopt, weights, sink);
}

double dice_impl(const Prediction& pred, std::span<const BinaryMask> truth,
                 std::span<const WeightMap> weights, const Sink& sink) {
  const std::size_t classes = pred.classes();
  const double inv_c = 1.0 / static_cast<double>(classes);
  double mean_dice = 0.0;
  for (std::size_t c = 0; c < classes; ++c) {
    const auto& p = pred.probs[c];
    const auto& g = truth[c];
    double inter = 0.0, sum_p = 0.0, sum_g = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double w = weight_at(weights, c, i);
      inter += w * p[i] * g[i];
      sum_p += w * p[i];
      sum_g += w * g[i];
    }
    const double denom = sum_p + sum_g;
    if (denom == 0.0) {
      mean_dice += inv_c;
      continue;
    }
    mean_dice += inv_c * 2.0 * inter / denom;
    if (sink) {
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double w = weight_at(weights, c, i);
        const double d = 2.0 * (w * g[i] * denom - inter * w) / (denom * denom);
        sink.add(c, i, -inv_c * d);
      }
    }
  }
  return 1.0 - mean_dice;
}

LossValue single(std::string name, double value) {
  return LossValue{value, {LossTerm{std::move(name), 1.0, value}}};
}

}  // namespace

void Prediction::validate(double sum_tolerance) const {
  if (probs.size() < 2) throw Error(ErrorCode::InvalidArgument, "prediction needs >= 2 classes");
  const auto& first = probs.front();
  for (const auto& p : probs)
    if (!p.same_shape(first) || p.empty())
      throw Error(ErrorCode::ShapeMismatch, "class probability grids differ in shape");
  for (std::size_t i = 0; i < first.size(); ++i) {
    double sum = 0.0;
    for (const auto& p : probs) {
      const double v = p[i];
      if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteInput, "non-finite probability");
      if (v < 0.0 || v > 1.0) throw Error(ErrorCode::InvalidArgument, "probability outside [0, 1]");
      sum += v;
    }
    if (std::abs(sum - 1.0) > sum_tolerance)
      throw Error(ErrorCode::InvalidArgument, "class probabilities do not sum to 1");
  }
}

Prediction softmax(const ClassGrids& logits) {
  if (logits.empty()) throw Error(ErrorCode::InvalidArgument, "no logits");
  Prediction out{logits};
  const std::size_t n = logits.front().size();
  for (std::size_t i = 0; i < n; ++i) {
    double m = logits[0][i];
    for (const auto& l : logits) m = std::max(m, l[i]);
    double sum = 0.0;
    for (auto& p : out.probs) {
      p[i] = std::exp(p[i] - m);
      sum += p[i];
    }
    for (auto& p : out.probs) p[i] /= sum;
  }
  return out;
}

ClassGrids softmax_backward(const Prediction& pred, const ProbGradient& d_probs) {
  ClassGrids out = zero_gradient(pred);
  const std::size_t n = pred.pixels();
  for (std::size_t i = 0; i < n; ++i) {
    double dot = 0.0;
    for (std::size_t c = 0; c < pred.classes(); ++c) dot += pred.probs[c][i] * d_probs[c][i];
    for (std::size_t c = 0; c < pred.classes(); ++c)
      out[c][i] = pred.probs[c][i] * (d_probs[c][i] - dot);
  }
  return out;
}

ProbGradient zero_gradient(const Prediction& pred) {
  ProbGradient g;
  for (const auto& p : pred.probs) g.emplace_back(p.rows(), p.cols(), 0.0);
  return g;
}

std::vector<BinaryMask> one_hot(const BinaryMask& foreground) {
  return {foreground.inverted(), foreground};
}

std::string_view to_string(LossComponent c) {
  switch (c) {
    case LossComponent::AF: return "AF";
    case LossComponent::AFT: return "AFT";
    case LossComponent::CE: return "CE";
    case LossComponent::DICE: return "DICE";
  }
  return "?";
}

LossComponent loss_component_from_string(std::string_view name) {
  for (auto c : {LossComponent::AF, LossComponent::AFT, LossComponent::CE, LossComponent::DICE})
    if (to_string(c) == name) return c;
  throw Error(ErrorCode::InvalidArgument, "unknown loss component '" + std::string(name) + "'");
}

bool LossSpec::has(LossComponent c) const {
  return std::find(components.begin(), components.end(), c) != components.end();
}

double LossSpec::component_weight(LossComponent c) const {
  switch (c) {
    case LossComponent::AF: return lambda;
    case LossComponent::AFT: return 1.0 - lambda;
    case LossComponent::CE:
    case LossComponent::DICE: return 1.0;
  }
  return 0.0;
}

void LossSpec::validate() const {
  if (!(lambda >= 0.0 && lambda <= 1.0))
    throw Error(ErrorCode::InvalidArgument, "lambda must lie in [0, 1]");
  check_delta(delta);
  if (!std::isfinite(gamma) || gamma < 0.0)
    throw Error(ErrorCode::InvalidGamma, "gamma must be finite and >= 0");
  if (epsilon && (!std::isfinite(*epsilon) || *epsilon < 0.0))
    throw Error(ErrorCode::InvalidEpsilon, "epsilon must be finite and >= 0");
  if (components.empty()) throw Error(ErrorCode::InvalidArgument, "no loss components");
  for (std::size_t i = 0; i < components.size(); ++i)
    for (std::size_t j = i + 1; j < components.size(); ++j)
      if (components[i] == components[j])
        throw Error(ErrorCode::InvalidArgument, "duplicate loss component");
  if (has(LossComponent::AFT) && component_weight(LossComponent::AFT) != 0.0)
    check_aft_gamma(aft_gamma.value_or(gamma));
}

double LossValue::term(std::string_view name) const {
  for (const auto& t : breakdown)
    if (t.name == name) return t.value;
  throw Error(ErrorCode::InvalidArgument, "no loss term '" + std::string(name) + "'");
}

double tversky_index(const Prediction& pred, std::span<const BinaryMask> truth, double delta,
                     std::size_t c, std::span<const WeightMap> weights) {
  check_inputs(pred, truth, weights, nullptr);
  check_delta(delta);
  if (c >= pred.classes()) throw Error(ErrorCode::InvalidArgument, "class index out of range");
  return tversky_impl(pred, truth, delta, c, weights, Sink{});
}

LossValue tversky_loss(const Prediction& pred, std::span<const BinaryMask> truth, double delta,
                       std::span<const WeightMap> weights, ProbGradient* grad) {
  check_inputs(pred, truth, weights, grad);
  return single("TVERSKY", aft_impl(pred, truth, delta, 0.0, std::nullopt, weights, Sink{grad, 1.0}));
}

LossValue asymmetric_focal_tversky_loss(const Prediction& pred, std::span<const BinaryMask> truth,
                                        double delta, double gamma,
                                        std::optional<std::size_t> rare_class,
                                        std::span<const WeightMap> weights, ProbGradient* grad) {
  check_inputs(pred, truth, weights, grad);
  return single("AFT", aft_impl(pred, truth, delta, gamma, rare_class, weights, Sink{grad, 1.0}));
}

LossValue asymmetric_focal_loss(const Prediction& pred, std::span<const BinaryMask> truth,
                                double delta, double gamma, std::optional<std::size_t> rare_class,
                                std::span<const WeightMap> weights, ProbGradient* grad) {
  check_inputs(pred, truth, weights, grad);
  return single("AF", af_impl(pred, truth, delta, gamma, rare_class, weights, Sink{grad, 1.0}));
}

LossValue focal_loss(const Prediction& pred, std::span<const BinaryMask> truth, double gamma,
                     std::span<const WeightMap> weights, ProbGradient* grad) {
  check_inputs(pred, truth, weights, grad);
  return single("FOCAL", focal_impl(pred, truth, gamma, weights, Sink{grad, 1.0}));
}

LossValue unified_focal_loss(const Prediction& pred, std::span<const BinaryMask> truth,
                             const LossSpec& spec, std::span<const WeightMap> weights,
                             ProbGradient* grad) {
  LossSpec ufl = spec;
  ufl.components = {LossComponent::AF, LossComponent::AFT};
  ufl.epsilon.reset();
  ufl.validate();
  check_inputs(pred, truth, weights, grad);
  LossValue out;
  if (ufl.lambda != 0.0) {
    const double af = af_impl(pred, truth, ufl.delta, ufl.gamma, ufl.rare_class, weights,
                              Sink{grad, ufl.lambda});
    out.breakdown.push_back({"AF", ufl.lambda, af});
    out.scalar += ufl.lambda * af;
  }
  if (ufl.lambda != 1.0) {
    const double w = 1.0 - ufl.lambda;
    const double aft = aft_impl(pred, truth, ufl.delta, ufl.aft_gamma.value_or(ufl.gamma),
                                ufl.rare_class, weights, Sink{grad, w});
    out.breakdown.push_back({"AFT", w, aft});
    out.scalar += w * aft;
  }
  return out;
}

LossValue dice_loss(const Prediction& pred, std::span<const BinaryMask> truth,
                    std::span<const WeightMap> weights, ProbGradient* grad) {
  check_inputs(pred, truth, weights, grad);
  return single("DICE", dice_impl(pred, truth, weights, Sink{grad, 1.0}));
}

LossValue cross_entropy_loss(const Prediction& pred, std::span<const BinaryMask> truth,
                             std::span<const WeightMap> weights, ProbGradient* grad) {
  check_inputs(pred, truth, weights, grad);
  return single("CE", focal_impl(pred, truth, 0.0, weights, Sink{grad, 1.0}));
}

LossValue dice_plus_ce(const Prediction& pred, std::span<const BinaryMask> truth,
                       std::span<const WeightMap> weights, ProbGradient* grad) {
  check_inputs(pred, truth, weights, grad);
  const double dice = dice_impl(pred, truth, weights, Sink{grad, 1.0});
  const double ce = focal_impl(pred, truth, 0.0, weights, Sink{grad, 1.0});
  return LossValue{dice + ce, {{"DICE", 1.0, dice}, {"CE", 1.0, ce}}};
}

LossValue evaluate_loss(const Prediction& pred, std::span<const BinaryMask> truth,
                        const LossSpec& spec, ProbGradient* grad) {
  spec.validate();
  std::vector<WeightMap> weights;
  if (spec.epsilon) weights = class_weight_maps(truth, *spec.epsilon);
  check_inputs(pred, truth, weights, grad);

  LossValue out;
  for (const auto component : spec.components) {
    const double w = spec.component_weight(component);
    if (w == 0.0) continue;
    const Sink sink{grad, w};
    double value = 0.0;
    switch (component) {
      case LossComponent::AF:
        value = af_impl(pred, truth, spec.delta, spec.gamma, spec.rare_class, weights, sink);
        break;
      case LossComponent::AFT:
        value = aft_impl(pred, truth, spec.delta, spec.aft_gamma.value_or(spec.gamma),
                         spec.rare_class, weights, sink);
        break;
      case LossComponent::CE: value = focal_impl(pred, truth, 0.0, weights, sink); break;
      case LossComponent::DICE: value = dice_impl(pred, truth, weights, sink); break;
    }
    out.breakdown.push_back({std::string(to_string(component)), w, value});
    out.scalar += w * value;
  }
  return out;
}

namespace {

const std::map<std::string, LossSpec, std::less<>>& lattice() {
  using C = LossComponent;
  static const std::map<std::string, LossSpec, std::less<>> table = [] {
    std::map<std::string, LossSpec, std::less<>> t;
    const LossSpec ufl{0.5, 0.6, 0.2, 0.0, std::nullopt, 1, {C::AF, C::AFT}};
    t["ufl"] = ufl;
    auto with_eps = [](LossSpec s, double e) {
      s.epsilon = e;
      return s;
    };
    t["ufl+dpt"] = with_eps(ufl, 1.0);
    t["ufl+fdpt"] = with_eps(ufl, 0.1);
    t["ce"] = LossSpec{1.0, 0.0, 0.0, std::nullopt, std::nullopt, std::nullopt, {C::AF, C::AFT}};
    t["focal"] = LossSpec{1.0, 0.0, 2.0, std::nullopt, std::nullopt, std::nullopt, {C::AF, C::AFT}};
    t["asymmetric_focal"] = LossSpec{1.0, 0.6, 0.2, std::nullopt, std::nullopt, 1, {C::AF, C::AFT}};
    t["dice"] = LossSpec{0.0, 0.5, 0.0, std::nullopt, std::nullopt, 1, {C::AF, C::AFT}};
    t["tversky"] = LossSpec{0.0, 0.6, 0.0, std::nullopt, std::nullopt, 1, {C::AF, C::AFT}};
    t["focal_tversky"] = LossSpec{0.0, 0.6, 0.2, std::nullopt, std::nullopt, 1, {C::AF, C::AFT}};
    const LossSpec dice_ce{0.5, 0.6, 0.2, std::nullopt, std::nullopt, 1, {C::DICE, C::CE}};
    const LossSpec dice_only{0.5, 0.6, 0.2, std::nullopt, std::nullopt, 1, {C::DICE}};
    t["dice+ce"] = dice_ce;
    t["dice+ce+dpt"] = with_eps(dice_ce, 1.0);
    t["dice+ce+fdpt"] = with_eps(dice_ce, 0.1);
    t["dice+dpt"] = with_eps(dice_only, 1.0);
    t["dice+fdpt"] = with_eps(dice_only, 0.1);
    return t;
  }();
  return table;
}

}  // namespace

LossSpec derive_loss(std::string_view name) {
  const auto& table = lattice();
  if (auto it = table.find(name); it != table.end()) return it->second;
  throw Error(ErrorCode::UnknownLoss, "'" + std::string(name) + "' is not in the loss lattice");
}

std::vector<std::string> derivable_losses() {
  std::vector<std::string> names;
  for (const auto& [name, spec] : lattice()) names.push_back(name);
  return names;
}

}  // namespace focalseg
