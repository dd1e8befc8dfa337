#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "focalseg/json_io.hpp"
#include "focalseg/training.hpp"

using namespace focalseg;

namespace {

BinaryMask mask_of(std::size_t rows, std::size_t cols, const std::vector<std::uint8_t>& v) {
  return BinaryMask(Grid2D<std::uint8_t>(rows, cols, v));
}

DataSplits tiny_data(std::uint64_t seed) {
  Dataset ds = synth_blobs(12, 16, 0.2, seed);
  normalize_dataset(ds);
  DataSplits d;
  for (std::size_t i = 0; i < ds.samples.size(); ++i)
    (i < 8 ? d.train : i < 10 ? d.val : d.test).push_back(ds.samples[i]);
  return d;
}

NetworkConfig tiny_net(std::vector<AttentionPlacement> p = {}) {
  NetworkConfig c;
  c.base_channels = 2;
  c.se_reduction = 2;
  c.placements = std::move(p);
  c.seed = 3;
  return c;
}

}  // namespace

TEST_CASE("plateau schedule on a constant loss") {
  ReduceLROnPlateau plateau(1e-3, 0.1, 25, 1e-4);
  EarlyStopping stop(50, 1e-4);
  int drop_epoch = 0, stop_epoch = 0;
  std::vector<int> drops;
  for (int epoch = 1; epoch <= 200 && !stop_epoch; ++epoch) {
    if (plateau.step(0.5)) drops.push_back(epoch);
    if (stop.step(0.5)) stop_epoch = epoch;
  }
  REQUIRE(!drops.empty());
  drop_epoch = drops.front();
  CHECK(drop_epoch == 26);
  CHECK(stop_epoch == 51);
  // the wait counter restarts after a reduction
  REQUIRE(drops.size() == 2);
  CHECK(drops[1] == 51);
  CHECK(plateau.lr() == doctest::Approx(1e-5));
}

TEST_CASE("stall after improvement") {
  for (int stall_start : {1, 7, 40}) {
    ReduceLROnPlateau plateau(1.0, 0.5, 25, 1e-4);
    EarlyStopping stop(50, 1e-4);
    int drop = 0, end = 0;
    for (int e = 1; e <= 500 && !end; ++e) {
      const double v = e <= stall_start ? 1.0 / e : 1.0 / stall_start;
      if (plateau.step(v) && !drop) drop = e;
      if (stop.step(v)) end = e;
    }
    CHECK(drop == stall_start + 25);
    CHECK(end == stall_start + 50);
  }
}

TEST_CASE("improvements smaller than min_delta do not count") {
  EarlyStopping stop(3, 1e-4);
  CHECK_FALSE(stop.step(1.0));
  CHECK_FALSE(stop.step(1.0 - 5e-5));
  CHECK_FALSE(stop.step(1.0 - 9e-5));
  CHECK(stop.step(1.0 - 9.9e-5));
  EarlyStopping fresh(3, 1e-4);
  fresh.step(1.0);
  fresh.step(0.99);
  fresh.step(0.98);
  CHECK_FALSE(fresh.step(0.97));
}

TEST_CASE("Adam matches a hand-computed first step") {
  Parameter<float> p("w", {2});
  p.value = {1.0f, -2.0f};
  p.grad = {0.5f, -0.25f};
  Adam adam(0.1);
  adam.step({&p});
  // first bias-corrected step is lr * sign(g) up to eps
  CHECK(p.value[0] == doctest::Approx(0.9).epsilon(1e-5));
  CHECK(p.value[1] == doctest::Approx(-1.9).epsilon(1e-5));
}

TEST_CASE("metrics from confusion counts") {
  // TP 8, FP 2, FN 2 on a 4x4 grid
  std::vector<std::uint8_t> truth(16, 0), pred(16, 0);
  for (int i = 0; i < 10; ++i) truth[i] = 1;
  for (int i = 0; i < 8; ++i) pred[i] = 1;
  pred[12] = pred[13] = 1;
  const auto m = image_metrics(mask_of(4, 4, pred), mask_of(4, 4, truth));
  CHECK(m.dsc == doctest::Approx(0.8));
  CHECK(m.precision == doctest::Approx(0.8));
  CHECK(m.recall == doctest::Approx(0.8));

  const auto t = mask_of(2, 2, {1, 0, 0, 1});
  const auto same = image_metrics(t, t);
  CHECK(same.dsc == 1.0);
  CHECK(same.precision == 1.0);
  CHECK(same.recall == 1.0);
  const auto comp = image_metrics(t.inverted(), t);
  CHECK(comp.dsc == 0.0);
  CHECK(comp.precision == 0.0);
  CHECK(comp.recall == 0.0);

  const BinaryMask empty(2, 2);
  const auto both_empty = image_metrics(empty, empty);
  CHECK(both_empty.dsc == 1.0);
  CHECK(both_empty.precision == 1.0);
  CHECK(both_empty.recall == 1.0);
  const auto spurious = image_metrics(t, empty);
  CHECK(spurious.dsc == 0.0);
  CHECK(spurious.precision == 0.0);
  const auto missed = image_metrics(empty, t);
  CHECK(missed.dsc == 0.0);
  CHECK(missed.precision == 0.0);
  CHECK(missed.recall == 0.0);
}

TEST_CASE("DSC is the harmonic mean of precision and recall") {
  std::mt19937_64 rng(2);
  std::bernoulli_distribution coin(0.4);
  for (int t = 0; t < 100; ++t) {
    BinaryMask a(6, 6), b(6, 6);
    for (std::size_t r = 0; r < 6; ++r)
      for (std::size_t c = 0; c < 6; ++c) {
        a.set(r, c, coin(rng));
        b.set(r, c, coin(rng));
      }
    const auto m = image_metrics(a, b);
    CHECK(m.dsc >= 0.0);
    CHECK(m.dsc <= 1.0);
    if (m.precision + m.recall > 0)
      CHECK(m.dsc == doctest::Approx(2 * m.precision * m.recall / (m.precision + m.recall)));
  }
}

TEST_CASE("fit: history, checkpoint optimality, determinism, trace integrity") {
  const auto data = tiny_data(5);
  TrainConfig cfg;
  cfg.max_epochs = 4;
  cfg.seed = 9;
  const auto net = tiny_net({{AttentionKind::SE, 1, FocalMode::Init0}, {AttentionKind::AG, 2, FocalMode::Init1}});
  const LossSpec loss = derive_loss("ufl+fdpt");

  std::vector<std::map<std::string, double>> seen;
  auto a = fit(build_unet<float>(net), data.train, data.val, loss, cfg,
               [&](const EpochRecord& r) { seen.push_back(r.focal); });
  REQUIRE(a.history.epochs.size() == 4);
  CHECK(seen.size() == 4);
  for (std::size_t e = 0; e < 4; ++e) {
    CHECK(a.history.epochs[e].epoch == int(e) + 1);
    CHECK(a.history.epochs[e].lr == 1e-3);
    CHECK(a.history.epochs[e].focal.size() == 2);
  }

  double best = 1e300;
  int best_epoch = 0;
  for (const auto& e : a.history.epochs)
    if (e.val_loss < best) {
      best = e.val_loss;
      best_epoch = e.epoch;
    }
  CHECK(a.history.best_epoch == best_epoch);
  CHECK(mean_loss(a.model, data.val, loss) == doctest::Approx(best).epsilon(1e-9));
  CHECK(a.model.focal_weights() == a.history.epochs[best_epoch - 1].focal);

  auto b = fit(build_unet<float>(net), data.train, data.val, loss, cfg);
  REQUIRE(b.history.epochs.size() == a.history.epochs.size());
  for (std::size_t e = 0; e < a.history.epochs.size(); ++e) {
    CHECK(a.history.epochs[e].train_loss == b.history.epochs[e].train_loss);
    CHECK(a.history.epochs[e].val_loss == b.history.epochs[e].val_loss);
    CHECK(a.history.epochs[e].focal == b.history.epochs[e].focal);
  }

  const auto dir = std::filesystem::temp_directory_path() / "focalseg_history_test";
  std::filesystem::create_directories(dir);
  a.history.write_csv(dir / "h.csv");
  std::ifstream in(dir / "h.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "epoch,train_loss,val_loss,lr,AG2,SE1");
  std::filesystem::remove_all(dir);
}

TEST_CASE("fit respects batch size and the epoch cap") {
  const auto data = tiny_data(6);
  TrainConfig cfg;
  cfg.max_epochs = 2;
  cfg.batch_size = 3;
  cfg.augment = false;
  auto r = fit(build_unet<float>(tiny_net()), data.train, data.val, derive_loss("dice+ce"), cfg);
  CHECK(r.history.epochs.size() <= 2);
  CHECK(std::isfinite(r.history.best_val_loss()));
}

TEST_CASE("fit preconditions and non-finite loss") {
  auto data = tiny_data(7);
  TrainConfig cfg;
  cfg.max_epochs = 1;
  CHECK_THROWS_AS(fit(build_unet<float>(tiny_net()), {}, data.val, LossSpec{}, cfg), Error);
  CHECK_THROWS_AS(fit(build_unet<float>(tiny_net()), data.train, {}, LossSpec{}, cfg), Error);
  TrainConfig bad = cfg;
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = cfg;
  bad.plateau_patience = 0;
  CHECK_THROWS_AS(bad.validate(), Error);

  // a huge learning rate overflows the weights within a few updates
  cfg.augment = false;
  cfg.lr0 = 1e38;
  cfg.max_epochs = 5;
  try {
    fit(build_unet<float>(tiny_net()), data.train, data.val, LossSpec{}, cfg);
    FAIL("expected NonFiniteLoss");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NonFiniteLoss);
    CHECK(std::string(e.what()).find("blob_") != std::string::npos);
  }
}

TEST_CASE("evaluate averages per-image metrics") {
  const auto data = tiny_data(8);
  auto model = build_unet<float>(tiny_net());
  const auto r = evaluate(model, data.test);
  REQUIRE(r.per_image.size() == data.test.size());
  double s = 0;
  for (const auto& m : r.per_image) s += m.dsc;
  CHECK(r.mean_dsc == doctest::Approx(s / r.per_image.size()));
  CHECK(r.mean_dsc >= 0.0);
  CHECK(r.mean_dsc <= 1.0);

  const json j = r;
  const auto back = j.get<MetricsReport>();
  CHECK(back.mean_dsc == r.mean_dsc);
  CHECK(back.per_image.size() == r.per_image.size());
}

TEST_CASE("train config JSON round trip") {
  TrainConfig c;
  c.max_epochs = 17;
  c.seed = 99;
  c.augment = false;
  const json j = c;
  CHECK(j.get<TrainConfig>() == c);
  CHECK_THROWS(json::parse(R"({"lr": 0.1})").get<TrainConfig>());
}
