#include "focalseg/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

namespace focalseg {

void TrainConfig::validate() const {
  auto bad = [](const std::string& what) { throw Error(ErrorCode::InvalidArgument, what); };
  if (!(lr0 > 0.0) || !std::isfinite(lr0)) bad("learning rate must be positive");
  if (!(plateau_factor > 0.0 && plateau_factor < 1.0)) bad("plateau factor must lie in (0, 1)");
  if (plateau_patience < 1 || early_stop_patience < 1) bad("patience must be at least 1");
  if (!(min_delta >= 0.0)) bad("min_delta must be non-negative");
  if (batch_size < 1) bad("batch size must be at least 1");
  if (max_epochs < 1) bad("max_epochs must be at least 1");
}

Adam::Adam(double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(const std::vector<Parameter<float>*>& params) {
  if (m_.empty()) {
    for (const auto* p : params) {
      m_.emplace_back(p->size(), 0.0);
      v_.emplace_back(p->size(), 0.0);
    }
  }
  if (m_.size() != params.size())
    throw Error(ErrorCode::ShapeMismatch, "optimiser parameter list changed");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const double step = lr_ * std::sqrt(c2) / c1;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = *params[k];
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double g = p.grad[i];
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
      p.value[i] -= static_cast<float>(step * m[i] / (std::sqrt(v[i]) + eps_));
    }
  }
}

ReduceLROnPlateau::ReduceLROnPlateau(double lr, double factor, int patience, double min_delta)
    : lr_(lr), factor_(factor), patience_(patience), min_delta_(min_delta) {}

bool ReduceLROnPlateau::step(double value) {
  if (value < best_ - min_delta_) {
    best_ = value;
    wait_ = 0;
    return false;
  }
  if (++wait_ >= patience_) {
    lr_ *= factor_;
    wait_ = 0;
    return true;
  }
  return false;
}

EarlyStopping::EarlyStopping(int patience, double min_delta)
    : patience_(patience), min_delta_(min_delta) {}

bool EarlyStopping::step(double value) {
  if (value < best_ - min_delta_) {
    best_ = value;
    wait_ = 0;
    return false;
  }
  return ++wait_ >= patience_;
}

double History::best_val_loss() const {
  for (const auto& e : epochs)
    if (e.epoch == best_epoch) return e.val_loss;
  return std::numeric_limits<double>::quiet_NaN();
}

void History::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  std::vector<std::string> labels;
  if (!epochs.empty())
    for (const auto& [k, v] : epochs.front().focal) labels.push_back(k);
  out << "epoch,train_loss,val_loss,lr";
  for (const auto& l : labels) out << ',' << l;
  out << '\n';
  out.precision(10);
  for (const auto& e : epochs) {
    out << e.epoch << ',' << e.train_loss << ',' << e.val_loss << ',' << e.lr;
    for (const auto& l : labels) {
      auto it = e.focal.find(l);
      out << ',';
      if (it != e.focal.end()) out << it->second;
    }
    out << '\n';
  }
}

namespace {

void require_finite(double v, const std::string& where) {
  if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteLoss, "loss is " + std::to_string(v) + " at " + where);
}

// A diverged network yields NaN probabilities; report that as a loss failure.
void require_finite(const Prediction& pred, const std::string& where) {
  for (const auto& g : pred.probs)
    for (double v : g.values())
      if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteLoss, "non-finite prediction at " + where);
}

std::vector<std::vector<float>> snapshot(UNet<float>& model) {
  std::vector<std::vector<float>> out;
  for (auto* p : model.parameters()) out.push_back(p->value);
  return out;
}

void restore(UNet<float>& model, const std::vector<std::vector<float>>& values) {
  auto params = model.parameters();
  for (std::size_t k = 0; k < params.size(); ++k) params[k]->value = values[k];
}

}  // namespace

double mean_loss(UNet<float>& model, std::span<const Sample> samples, const LossSpec& loss) {
  if (samples.empty()) throw Error(ErrorCode::TooSmall, "no samples to evaluate");
  double sum = 0.0;
  for (const auto& s : samples) {
    const Prediction pred = predict(model, s.image);
    require_finite(pred, "sample " + s.id);
    const auto truth = one_hot(s.mask);
    const double v = evaluate_loss(pred, truth, loss).scalar;
    require_finite(v, "sample " + s.id);
    sum += v;
  }
  return sum / static_cast<double>(samples.size());
}

FitResult fit(UNet<float> model, std::span<const Sample> train, std::span<const Sample> val,
              const LossSpec& loss, const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  loss.validate();
  if (train.empty() || val.empty())
    throw Error(ErrorCode::TooSmall, "training needs non-empty train and validation sets");

  Adam opt(config.lr0);
  ReduceLROnPlateau plateau(config.lr0, config.plateau_factor, config.plateau_patience,
                            config.min_delta);
  EarlyStopping stopper(config.early_stop_patience, config.min_delta);
  const auto params = model.parameters();

  History history;
  double best_val = std::numeric_limits<double>::infinity();
  auto best = snapshot(model);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const std::uint64_t epoch_seed = mix_seed(config.seed, static_cast<std::uint64_t>(epoch));
    std::mt19937_64 rng(epoch_seed);
    std::shuffle(order.begin(), order.end(), rng);

    model.zero_grad();
    double sum = 0.0;
    std::size_t in_batch = 0;
    for (std::size_t k = 0; k < order.size(); ++k) {
      const Sample& s = train[order[k]];
      Tensor<float> image;
      BinaryMask mask;
      if (config.augment)
        std::tie(image, mask) = augment(s.image, s.mask, mix_seed(epoch_seed, order[k]), config.augmentation);
      else
        std::tie(image, mask) = std::pair{s.image, s.mask};

      const Prediction pred = predict(model, image);
      const std::string where = "epoch " + std::to_string(epoch) + ", sample " + s.id;
      require_finite(pred, where);
      const auto truth = one_hot(mask);
      ProbGradient grad = zero_gradient(pred);
      const double v = evaluate_loss(pred, truth, loss, &grad).scalar;
      require_finite(v, where);
      sum += v;
      model.backward(logits_gradient<float>(pred, grad));

      if (++in_batch == config.batch_size || k + 1 == order.size()) {
        if (in_batch > 1) {
          const float inv = 1.0f / static_cast<float>(in_batch);
          for (auto* p : params)
            for (auto& g : p->grad) g *= inv;
        }
        opt.step(params);
        model.zero_grad();
        in_batch = 0;
      }
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = sum / static_cast<double>(train.size());
    rec.val_loss = mean_loss(model, val, loss);
    rec.lr = opt.lr();
    rec.focal = model.focal_weights();
    history.epochs.push_back(rec);
    if (rec.val_loss < best_val) {
      best_val = rec.val_loss;
      best = snapshot(model);
      history.best_epoch = epoch;
    }
    if (on_epoch) on_epoch(rec);

    plateau.step(rec.val_loss);
    opt.set_lr(plateau.lr());
    if (stopper.step(rec.val_loss)) {
      history.stopped_early = true;
      break;
    }
  }

  restore(model, best);
  return {std::move(model), std::move(history)};
}

ImageMetrics image_metrics(const BinaryMask& predicted, const BinaryMask& truth) {
  if (predicted.rows() != truth.rows() || predicted.cols() != truth.cols())
    throw Error(ErrorCode::ShapeMismatch, "prediction and truth differ in size");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool p = predicted[i], t = truth[i];
    tp += p && t;
    fp += p && !t;
    fn += !p && t;
  }
  ImageMetrics m;
  if (tp + fn == 0) {
    const double v = fp == 0 ? 1.0 : 0.0;
    m.dsc = m.precision = m.recall = v;
    return m;
  }
  const double TP = static_cast<double>(tp), FP = static_cast<double>(fp), FN = static_cast<double>(fn);
  m.dsc = 2 * TP / (2 * TP + FP + FN);
  m.precision = tp + fp ? TP / (TP + FP) : 0.0;
  m.recall = TP / (TP + FN);
  return m;
}

BinaryMask binarize(const Prediction& pred, double threshold) {
  if (pred.classes() < 2) throw Error(ErrorCode::InvalidArgument, "need a foreground channel");
  const auto& fg = pred.probs[1];
  return BinaryMask::threshold(fg, threshold);
}

MetricsReport evaluate(UNet<float>& model, std::span<const Sample> samples, double threshold) {
  MetricsReport r;
  for (const auto& s : samples) {
    ImageMetrics m = image_metrics(binarize(predict(model, s.image), threshold), s.mask);
    m.id = s.id;
    r.per_image.push_back(m);
    r.mean_dsc += m.dsc;
    r.mean_precision += m.precision;
    r.mean_recall += m.recall;
  }
  if (!samples.empty()) {
    const double n = static_cast<double>(samples.size());
    r.mean_dsc /= n;
    r.mean_precision /= n;
    r.mean_recall /= n;
  }
  return r;
}

void write_metrics_csv(const MetricsReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out.precision(10);
  out << "id,dsc,precision,recall\n";
  for (const auto& m : report.per_image)
    out << m.id << ',' << m.dsc << ',' << m.precision << ',' << m.recall << '\n';
  out << "mean," << report.mean_dsc << ',' << report.mean_precision << ',' << report.mean_recall
      << '\n';
}

}  // namespace focalseg
