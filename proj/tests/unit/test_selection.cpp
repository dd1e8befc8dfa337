#include <filesystem>
#include <random>

#include "doctest.h"
#include "focalseg/json_io.hpp"
#include "focalseg/selection.hpp"

using namespace focalseg;

namespace {

FocalTrace trace(AttentionKind k, int pos, std::vector<double> values) {
  FocalTrace t;
  t.placement = {k, pos, FocalMode::Init0};
  for (std::size_t i = 0; i < values.size(); ++i) t.values.emplace_back(int(i) + 1, values[i]);
  t.final_weight = values.back();
  return t;
}

DataSplits tiny_data() {
  Dataset ds = synth_blobs(10, 16, 0.2, 3);
  normalize_dataset(ds);
  return materialize(ds, split(ds, {}));
}

NetworkConfig tiny_net(std::vector<AttentionPlacement> p) {
  NetworkConfig c;
  c.base_channels = 2;
  c.se_reduction = 2;
  c.placements = std::move(p);
  c.seed = 5;
  return c;
}

}  // namespace

TEST_CASE("partition invariants over random finals") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-0.5, 1.5);
  for (int t = 0; t < 200; ++t) {
    std::vector<FocalTrace> traces;
    for (int p = 1; p <= 9; ++p) traces.push_back(trace(AttentionKind::SE, p, {0.0, u(rng), u(rng)}));
    const double threshold = t % 5 == 0 ? 0.0 : u(rng);
    const auto r = partition_traces(traces, threshold);
    CHECK_NOTHROW(r.validate());
    CHECK(r.kept.size() + r.removed.size() == 9);
    for (const auto& tr : r.traces) {
      const bool kept = std::find(r.kept.begin(), r.kept.end(), tr.placement) != r.kept.end();
      CHECK(kept == (tr.final_weight >= threshold));
    }
  }
}

TEST_CASE("threshold zero keeps every non-negative final weight") {
  std::vector<FocalTrace> traces{trace(AttentionKind::AG, 1, {0.0, 0.3}),
                                 trace(AttentionKind::AG, 2, {0.0, 0.0}),
                                 trace(AttentionKind::AG, 3, {0.0, 1e-9})};
  CHECK(partition_traces(traces, 0.0).kept.size() == 3);
  traces.push_back(trace(AttentionKind::AG, 4, {0.0, -0.01}));
  const auto r = partition_traces(traces, 0.0);
  CHECK(r.removed.size() == 1);
  CHECK(r.removed[0].position == 4);
}

TEST_CASE("report validation catches inconsistencies") {
  auto r = partition_traces({trace(AttentionKind::SE, 1, {0.0, 0.5}), trace(AttentionKind::SE, 2, {0.0, 0.1})}, 0.2);
  CHECK_NOTHROW(r.validate());
  auto swapped = r;
  std::swap(swapped.kept, swapped.removed);
  CHECK_THROWS_AS(swapped.validate(), Error);
  auto bad_final = r;
  bad_final.traces[0].final_weight = 0.7;
  CHECK_THROWS_AS(bad_final.validate(), Error);
  auto bad_epochs = r;
  bad_epochs.traces[0].values[1].first = 1;
  CHECK_THROWS_AS(bad_epochs.validate(), Error);
}

TEST_CASE("traces are cut at the selected epoch") {
  History h;
  for (int e = 1; e <= 5; ++e) {
    EpochRecord r;
    r.epoch = e;
    r.focal["SE4"] = 0.1 * e;
    h.epochs.push_back(r);
  }
  const auto t = traces_from_history(h, {{AttentionKind::SE, 4, FocalMode::Init0}}, 3);
  REQUIRE(t.size() == 1);
  CHECK(t[0].values.size() == 3);
  CHECK(t[0].final_weight == doctest::Approx(0.3));
  CHECK_NOTHROW(t[0].validate());
}

TEST_CASE("selection requires zero-initialised focal weights") {
  const auto data = tiny_data();
  TrainConfig cfg;
  cfg.max_epochs = 1;
  for (auto mode : {FocalMode::Off, FocalMode::Init1}) {
    try {
      run_selection(tiny_net({{AttentionKind::SE, 1, mode}}), data, LossSpec{}, cfg);
      FAIL("expected InvalidPlacement");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::InvalidPlacement);
    }
  }
}

TEST_CASE("selection run, finalize, and serialisation") {
  const auto data = tiny_data();
  TrainConfig cfg;
  cfg.max_epochs = 3;
  const std::vector<AttentionPlacement> sites = {{AttentionKind::SE, 1, FocalMode::Init0},
                                                 {AttentionKind::SE, 9, FocalMode::Init0},
                                                 {AttentionKind::AG, 1, FocalMode::Init0}};
  const auto net = tiny_net(sites);
  const auto run = run_selection(net, data, LossSpec{}, cfg, 0.2);
  CHECK_NOTHROW(run.report.validate());
  REQUIRE(run.report.traces.size() == 3);
  const int best = run.fit.history.best_epoch;
  for (const auto& t : run.report.traces) {
    CHECK(t.values.back().first == best);
    CHECK(t.final_weight == run.fit.history.epochs[best - 1].focal.at(t.placement.label()));
    CHECK(t.final_weight == run.fit.model.focal_weights().at(t.placement.label()));
  }
  const auto again = run_selection(net, data, LossSpec{}, cfg, 0.2);
  for (std::size_t i = 0; i < 3; ++i) CHECK(again.report.traces[i].values == run.report.traces[i].values);

  const json j = run.report;
  const auto back = json::parse(j.dump()).get<SelectionReport>();
  CHECK(back.threshold == run.report.threshold);
  CHECK(back.kept == run.report.kept);
  for (std::size_t i = 0; i < 3; ++i) CHECK(back.traces[i].values == run.report.traces[i].values);

  // none kept: plain U-Net; all kept: every site at focal 1
  const auto none = partition_traces(run.report.traces, 1e9);
  const auto fin_none = finalize(none, net, data, LossSpec{}, cfg);
  CHECK(fin_none.fit.model.config().placements.empty());
  CHECK(fin_none.metrics.per_image.size() == data.test.size());
  const auto all = partition_traces(run.report.traces, -1e9);
  const auto fin_all = finalize(all, net, data, LossSpec{}, cfg);
  REQUIRE(fin_all.fit.model.config().placements.size() == 3);
  for (const auto& p : fin_all.fit.model.config().placements) CHECK(p.focal == FocalMode::Init1);
}

TEST_CASE("trace plot") {
  const auto dir = std::filesystem::temp_directory_path() / "focalseg_plot_test";
  std::filesystem::remove_all(dir);
  plot_trace(trace(AttentionKind::SE, 3, {0.0, 0.1, 0.25, 0.31}), 0.2, dir / "SE3.png");
  CHECK(std::filesystem::file_size(dir / "SE3.png") > 0);
  plot_trace(trace(AttentionKind::SE, 4, {0.0}), 0.2, dir / "SE4.png");
  CHECK(std::filesystem::exists(dir / "SE4.png"));
  std::filesystem::remove_all(dir);
}
