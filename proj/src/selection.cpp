#include "focalseg/selection.hpp"

#include <algorithm>

namespace focalseg {

void FocalTrace::validate() const {
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i].first <= values[i - 1].first)
      throw Error(ErrorCode::InvalidArgument, placement.label() + ": trace epochs not increasing");
  if (!values.empty() && values.back().second != final_weight)
    throw Error(ErrorCode::InvalidArgument, placement.label() + ": final differs from last value");
}

void SelectionReport::validate() const {
  auto contains = [](const std::vector<AttentionPlacement>& v, const AttentionPlacement& p) {
    return std::any_of(v.begin(), v.end(), [&](const auto& q) { return q.same_site(p); });
  };
  if (kept.size() + removed.size() != traces.size())
    throw Error(ErrorCode::InvalidArgument, "kept and removed do not cover every trace");
  for (const auto& t : traces) {
    t.validate();
    const bool k = contains(kept, t.placement), r = contains(removed, t.placement);
    if (k == r) throw Error(ErrorCode::InvalidArgument, t.placement.label() + " is not in exactly one set");
    if (k != (t.final_weight >= threshold))
      throw Error(ErrorCode::InvalidArgument, t.placement.label() + " is on the wrong side of the threshold");
  }
}

SelectionReport partition_traces(std::vector<FocalTrace> traces, double threshold) {
  SelectionReport r;
  r.threshold = threshold;
  for (const auto& t : traces) (t.final_weight >= threshold ? r.kept : r.removed).push_back(t.placement);
  r.traces = std::move(traces);
  return r;
}

std::vector<FocalTrace> traces_from_history(const History& history,
                                            const std::vector<AttentionPlacement>& placements,
                                            int last_epoch) {
  std::vector<FocalTrace> out;
  for (const auto& p : placements) {
    FocalTrace t;
    t.placement = p;
    const std::string label = p.label();
    for (const auto& e : history.epochs) {
      if (e.epoch > last_epoch) break;
      auto it = e.focal.find(label);
      if (it != e.focal.end()) t.values.emplace_back(e.epoch, it->second);
    }
    t.final_weight = t.values.empty() ? 0.0 : t.values.back().second;
    out.push_back(std::move(t));
  }
  return out;
}

SelectionRun run_selection(const NetworkConfig& config, const DataSplits& data,
                           const LossSpec& loss, const TrainConfig& train, double threshold,
                           const EpochCallback& on_epoch) {
  config.validate();
  for (const auto& p : config.placements)
    if (p.focal != FocalMode::Init0)
      throw Error(ErrorCode::InvalidPlacement, p.label() + " must use a zero-initialised focal weight");
  FitResult fit_result = fit(build_unet<float>(config), data.train, data.val, loss, train, on_epoch);
  auto traces = traces_from_history(fit_result.history, config.placements, fit_result.history.best_epoch);
  SelectionReport report = partition_traces(std::move(traces), threshold);
  return {std::move(report), std::move(fit_result)};
}

FinalizeResult finalize(const SelectionReport& report, const NetworkConfig& config,
                        const DataSplits& data, const LossSpec& loss, const TrainConfig& train,
                        const EpochCallback& on_epoch) {
  report.validate();
  if (data.test.empty()) throw Error(ErrorCode::TooSmall, "finalize needs a test split");
  NetworkConfig final_config = config;
  final_config.placements.clear();
  for (auto p : report.kept) {
    p.focal = FocalMode::Init1;
    final_config.placements.push_back(p);
  }
  FitResult f = fit(build_unet<float>(final_config), data.train, data.val, loss, train, on_epoch);
  MetricsReport m = evaluate(f.model, data.test);
  return {std::move(f), std::move(m)};
}

}  // namespace focalseg
