#include "focalseg/json_io.hpp"

#include <fstream>
#include <sstream>

namespace focalseg {

void require_known_keys(const json& j, std::initializer_list<std::string_view> allowed,
                        std::string_view section) {
  if (!j.is_object()) throw Error(ErrorCode::ConfigError, std::string(section) + " must be an object");
  for (const auto& [k, v] : j.items())
    if (std::find(allowed.begin(), allowed.end(), k) == allowed.end())
      throw Error(ErrorCode::ConfigError, "unknown key '" + k + "' in " + std::string(section));
}

namespace {

template <typename T>
void read_opt(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

void to_json(json& j, const LossSpec& s) {
  j = json{{"lambda", s.lambda}, {"delta", s.delta}, {"gamma", s.gamma}};
  j["epsilon"] = s.epsilon ? json(*s.epsilon) : json(nullptr);
  if (s.aft_gamma) j["aft_gamma"] = *s.aft_gamma;
  j["rare_class"] = s.rare_class ? json(*s.rare_class) : json(nullptr);
  json comps = json::array();
  for (auto c : s.components) comps.push_back(std::string(to_string(c)));
  j["components"] = comps;
}

void from_json(const json& j, LossSpec& s) {
  require_known_keys(j, {"lambda", "delta", "gamma", "epsilon", "aft_gamma", "rare_class", "components"},
                     "loss");
  s = LossSpec{};
  read_opt(j, "lambda", s.lambda);
  read_opt(j, "delta", s.delta);
  read_opt(j, "gamma", s.gamma);
  if (j.contains("epsilon") && !j["epsilon"].is_null()) s.epsilon = j["epsilon"].get<double>();
  if (j.contains("aft_gamma") && !j["aft_gamma"].is_null()) s.aft_gamma = j["aft_gamma"].get<double>();
  if (j.contains("rare_class"))
    s.rare_class = j["rare_class"].is_null() ? std::nullopt
                                             : std::optional(j["rare_class"].get<std::size_t>());
  if (j.contains("components")) {
    s.components.clear();
    for (const auto& c : j["components"]) s.components.push_back(loss_component_from_string(c.get<std::string>()));
  }
}

void to_json(json& j, const AttentionPlacement& p) {
  j = json{{"kind", std::string(to_string(p.kind))},
           {"position", p.position},
           {"focal", std::string(to_string(p.focal))}};
}

void from_json(const json& j, AttentionPlacement& p) {
  require_known_keys(j, {"kind", "position", "focal"}, "placement");
  p = AttentionPlacement{};
  p.kind = attention_kind_from_string(j.at("kind").get<std::string>());
  p.position = j.at("position").get<int>();
  if (j.contains("focal")) p.focal = focal_mode_from_string(j["focal"].get<std::string>());
}

void to_json(json& j, const NetworkConfig& c) {
  j = json{{"in_channels", c.in_channels},     {"classes", c.classes},
           {"base_channels", c.base_channels}, {"se_reduction", c.se_reduction},
           {"placements", c.placements},       {"seed", c.seed}};
}

void from_json(const json& j, NetworkConfig& c) {
  require_known_keys(j, {"in_channels", "classes", "base_channels", "se_reduction", "placements", "seed"},
                     "network");
  c = NetworkConfig{};
  read_opt(j, "in_channels", c.in_channels);
  read_opt(j, "classes", c.classes);
  read_opt(j, "base_channels", c.base_channels);
  read_opt(j, "se_reduction", c.se_reduction);
  read_opt(j, "placements", c.placements);
  read_opt(j, "seed", c.seed);
}

void to_json(json& j, const AugmentConfig& c) {
  j = json{{"probability", c.probability},
           {"max_rotation_deg", c.max_rotation_deg},
           {"scale_min", c.scale_min},
           {"scale_max", c.scale_max},
           {"brightness", c.brightness},
           {"elastic_max_displacement", c.elastic_max_displacement},
           {"elastic_sigma", c.elastic_sigma}};
}

void from_json(const json& j, AugmentConfig& c) {
  require_known_keys(j, {"probability", "max_rotation_deg", "scale_min", "scale_max", "brightness",
                         "elastic_max_displacement", "elastic_sigma"},
                     "augmentation");
  c = AugmentConfig{};
  read_opt(j, "probability", c.probability);
  read_opt(j, "max_rotation_deg", c.max_rotation_deg);
  read_opt(j, "scale_min", c.scale_min);
  read_opt(j, "scale_max", c.scale_max);
  read_opt(j, "brightness", c.brightness);
  read_opt(j, "elastic_max_displacement", c.elastic_max_displacement);
  read_opt(j, "elastic_sigma", c.elastic_sigma);
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"lr0", c.lr0},
           {"plateau_factor", c.plateau_factor},
           {"plateau_patience", c.plateau_patience},
           {"early_stop_patience", c.early_stop_patience},
           {"min_delta", c.min_delta},
           {"batch_size", c.batch_size},
           {"max_epochs", c.max_epochs},
           {"seed", c.seed},
           {"augment", c.augment},
           {"augmentation", c.augmentation}};
}

void from_json(const json& j, TrainConfig& c) {
  require_known_keys(j, {"lr0", "plateau_factor", "plateau_patience", "early_stop_patience", "min_delta",
                         "batch_size", "max_epochs", "seed", "augment", "augmentation"},
                     "train");
  c = TrainConfig{};
  read_opt(j, "lr0", c.lr0);
  read_opt(j, "plateau_factor", c.plateau_factor);
  read_opt(j, "plateau_patience", c.plateau_patience);
  read_opt(j, "early_stop_patience", c.early_stop_patience);
  read_opt(j, "min_delta", c.min_delta);
  read_opt(j, "batch_size", c.batch_size);
  read_opt(j, "max_epochs", c.max_epochs);
  read_opt(j, "seed", c.seed);
  read_opt(j, "augment", c.augment);
  read_opt(j, "augmentation", c.augmentation);
}

void to_json(json& j, const SplitSpec& s) {
  j = json{{"dev_fraction", s.dev_fraction}, {"train_fraction", s.train_fraction}, {"seed", s.seed}};
}

void from_json(const json& j, SplitSpec& s) {
  require_known_keys(j, {"dev_fraction", "train_fraction", "seed"}, "split");
  s = SplitSpec{};
  read_opt(j, "dev_fraction", s.dev_fraction);
  read_opt(j, "train_fraction", s.train_fraction);
  read_opt(j, "seed", s.seed);
}

void to_json(json& j, const MetricsReport& r) {
  json per = json::array();
  for (const auto& m : r.per_image)
    per.push_back({{"id", m.id}, {"dsc", m.dsc}, {"precision", m.precision}, {"recall", m.recall}});
  j = json{{"per_image", per},
           {"mean_dsc", r.mean_dsc},
           {"mean_precision", r.mean_precision},
           {"mean_recall", r.mean_recall}};
}

void from_json(const json& j, MetricsReport& r) {
  r = MetricsReport{};
  for (const auto& m : j.at("per_image"))
    r.per_image.push_back({m.value("id", ""), m.at("dsc").get<double>(), m.at("precision").get<double>(),
                           m.at("recall").get<double>()});
  r.mean_dsc = j.at("mean_dsc").get<double>();
  r.mean_precision = j.at("mean_precision").get<double>();
  r.mean_recall = j.at("mean_recall").get<double>();
}

void to_json(json& j, const FocalTrace& t) {
  json values = json::array();
  for (const auto& [e, w] : t.values) values.push_back({e, w});
  j = json{{"placement", t.placement}, {"values", values}, {"final", t.final_weight}};
}

void from_json(const json& j, FocalTrace& t) {
  t = FocalTrace{};
  t.placement = j.at("placement").get<AttentionPlacement>();
  for (const auto& v : j.at("values")) t.values.emplace_back(v.at(0).get<int>(), v.at(1).get<double>());
  t.final_weight = j.at("final").get<double>();
}

void to_json(json& j, const SelectionReport& r) {
  j = json{{"threshold", r.threshold}, {"traces", r.traces}, {"kept", r.kept}, {"removed", r.removed}};
}

void from_json(const json& j, SelectionReport& r) {
  r = SelectionReport{};
  r.threshold = j.at("threshold").get<double>();
  r.traces = j.at("traces").get<std::vector<FocalTrace>>();
  r.kept = j.at("kept").get<std::vector<AttentionPlacement>>();
  r.removed = j.at("removed").get<std::vector<AttentionPlacement>>();
}

std::pair<std::size_t, std::size_t> line_column(std::string_view text, std::size_t byte_offset) {
  std::size_t line = 1, col = 1;
  const std::size_t end = std::min(byte_offset, text.size());
  for (std::size_t i = 0; i < end; ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::ConfigError, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    // byte is one past the offending character
    const auto [line, col] = line_column(text, e.byte > 0 ? e.byte - 1 : 0);
    throw Error(ErrorCode::ConfigError, path.string() + ":" + std::to_string(line) + ":" +
                                            std::to_string(col) + ": " + e.what());
  }
}

void write_json_file(const json& j, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace focalseg
