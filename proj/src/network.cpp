#include "focalseg/network.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <set>

#include "focalseg/json_io.hpp"

namespace focalseg {

std::string_view to_string(AttentionKind k) { return k == AttentionKind::SE ? "SE" : "AG"; }

std::string_view to_string(FocalMode m) {
  switch (m) {
    case FocalMode::Off: return "off";
    case FocalMode::Init0: return "init0";
    case FocalMode::Init1: return "init1";
  }
  return "?";
}

AttentionKind attention_kind_from_string(std::string_view s) {
  if (s == "SE" || s == "se") return AttentionKind::SE;
  if (s == "AG" || s == "ag") return AttentionKind::AG;
  throw Error(ErrorCode::InvalidPlacement, "unknown attention kind '" + std::string(s) + "'");
}

FocalMode focal_mode_from_string(std::string_view s) {
  for (auto m : {FocalMode::Off, FocalMode::Init0, FocalMode::Init1})
    if (to_string(m) == s) return m;
  throw Error(ErrorCode::InvalidPlacement, "unknown focal mode '" + std::string(s) + "'");
}

std::string AttentionPlacement::label() const {
  return std::string(to_string(kind)) + std::to_string(position);
}

int max_position(AttentionKind kind) { return kind == AttentionKind::SE ? 9 : 4; }

void NetworkConfig::validate() const {
  if (in_channels == 0 || classes < 2 || base_channels == 0)
    throw Error(ErrorCode::InvalidArgument, "network needs >= 1 input channel, >= 2 classes, "
                                            "and positive base_channels");
  if (se_reduction == 0) throw Error(ErrorCode::InvalidArgument, "SE reduction must be positive");
  std::set<std::pair<AttentionKind, int>> seen;
  for (const auto& p : placements) {
    if (p.position < 1 || p.position > max_position(p.kind))
      throw Error(ErrorCode::InvalidPlacement,
                  p.label() + " is out of range (SE 1-9, AG 1-4)");
    if (!seen.insert({p.kind, p.position}).second)
      throw Error(ErrorCode::InvalidPlacement, "duplicate placement " + p.label());
  }
}

std::vector<AttentionPlacement> all_sites(AttentionKind kind, FocalMode focal) {
  std::vector<AttentionPlacement> out;
  for (int p = 1; p <= max_position(kind); ++p) out.push_back({kind, p, focal});
  return out;
}

namespace {

template <typename T>
std::optional<T> focal_init(FocalMode m) {
  switch (m) {
    case FocalMode::Off: return std::nullopt;
    case FocalMode::Init0: return T{0};
    case FocalMode::Init1: return T{1};
  }
  return std::nullopt;
}

}  // namespace

template <typename T>
UNet<T>::UNet(NetworkConfig config) : config_(std::move(config)) {
  config_.validate();
  const auto seed = config_.seed;
  std::size_t in = config_.in_channels;
  for (std::size_t l = 0; l < kUNetDepth; ++l) {
    const std::size_t ch = config_.channels_at(l);
    encoders_[l] = ConvBlock<T>("enc" + std::to_string(l + 1), in, ch, seed);
    skip_channels_[l] = ch;
    in = ch;
  }
  const std::size_t bottom = config_.channels_at(kUNetDepth);
  bottleneck_ = ConvBlock<T>("bottleneck", in, bottom, seed);
  for (std::size_t l = 0; l < kUNetDepth; ++l) {
    const std::size_t ch = config_.channels_at(l);
    const std::size_t coarser = config_.channels_at(l + 1);
    ups_[l] = ConvTranspose2x2<T>("up" + std::to_string(l + 1), coarser, ch, seed);
    decoders_[l] = ConvBlock<T>("dec" + std::to_string(l + 1), 2 * ch, ch, seed);
  }
  head_ = Conv2d<T>("head", config_.channels_at(0), config_.classes, {1, 1, 0}, true, seed);

  for (const auto& p : config_.placements) {
    const auto f = focal_init<T>(p.focal);
    const std::string name = p.label();
    const auto r = config_.se_reduction;
    if (p.kind == AttentionKind::SE) {
      if (p.position <= 4) {
        const auto l = static_cast<std::size_t>(p.position - 1);
        se_encoder_[l].emplace(name, config_.channels_at(l), r, f, seed);
      } else if (p.position == 5) {
        se_bottleneck_.emplace(name, bottom, r, f, seed);
      } else {
        const auto l = static_cast<std::size_t>(9 - p.position);
        se_decoder_[l].emplace(name, config_.channels_at(l), r, f, seed);
      }
    } else {
      const auto l = static_cast<std::size_t>(p.position - 1);
      gates_[l].emplace(name, config_.channels_at(l), config_.channels_at(l + 1), 2, f, seed);
    }
  }
}

template <typename T>
Tensor<T> UNet<T>::forward(const Tensor<T>& image) {
  constexpr std::size_t factor = std::size_t{1} << kUNetDepth;
  if (image.channels() != config_.in_channels || image.height() % factor != 0 ||
      image.width() % factor != 0 || image.empty())
    throw Error(ErrorCode::ShapeMismatch, "U-Net input " + image.shape_string() + " needs " +
                                              std::to_string(config_.in_channels) +
                                              " channels and spatial dims divisible by 16");
  std::array<Tensor<T>, kUNetDepth> skips;
  Tensor<T> x = image;
  for (std::size_t l = 0; l < kUNetDepth; ++l) {
    Tensor<T> e = encoders_[l].forward(x);
    if (se_encoder_[l]) e = se_encoder_[l]->forward(e);
    x = pools_[l].forward(e);
    skips[l] = std::move(e);
  }
  Tensor<T> d = bottleneck_.forward(x);
  if (se_bottleneck_) d = se_bottleneck_->forward(d);
  for (std::size_t i = kUNetDepth; i-- > 0;) {
    Tensor<T> up = ups_[i].forward(d);
    Tensor<T> skip = gates_[i] ? gates_[i]->forward(skips[i], d) : std::move(skips[i]);
    d = decoders_[i].forward(concat_channels(skip, up));
    if (se_decoder_[i]) d = se_decoder_[i]->forward(d);
  }
  return head_.forward(d);
}

template <typename T>
void UNet<T>::backward(const Tensor<T>& d_logits) {
  Tensor<T> dd = head_.backward(d_logits);
  std::array<Tensor<T>, kUNetDepth> d_skips;
  for (std::size_t i = 0; i < kUNetDepth; ++i) {
    if (se_decoder_[i]) dd = se_decoder_[i]->backward(dd);
    auto [d_skip, d_up] = split_channels(decoders_[i].backward(dd), skip_channels_[i]);
    Tensor<T> d_coarse = ups_[i].backward(d_up);
    if (gates_[i]) {
      auto [dx, dg] = gates_[i]->backward(d_skip);
      d_skips[i] = std::move(dx);
      for (std::size_t k = 0; k < d_coarse.size(); ++k) d_coarse[k] += dg[k];
    } else {
      d_skips[i] = std::move(d_skip);
    }
    dd = std::move(d_coarse);
  }
  if (se_bottleneck_) dd = se_bottleneck_->backward(dd);
  Tensor<T> dx = bottleneck_.backward(dd);
  for (std::size_t l = kUNetDepth; l-- > 0;) {
    Tensor<T> de = pools_[l].backward(dx);
    for (std::size_t k = 0; k < de.size(); ++k) de[k] += d_skips[l][k];
    if (se_encoder_[l]) de = se_encoder_[l]->backward(de);
    dx = encoders_[l].backward(de, l > 0);
  }
}

template <typename T>
std::vector<Parameter<T>*> UNet<T>::parameters() {
  std::vector<Parameter<T>*> out;
  for (std::size_t l = 0; l < kUNetDepth; ++l) {
    encoders_[l].collect(out);
    if (se_encoder_[l]) se_encoder_[l]->collect(out);
  }
  bottleneck_.collect(out);
  if (se_bottleneck_) se_bottleneck_->collect(out);
  for (std::size_t i = kUNetDepth; i-- > 0;) {
    ups_[i].collect(out);
    if (gates_[i]) gates_[i]->collect(out);
    decoders_[i].collect(out);
    if (se_decoder_[i]) se_decoder_[i]->collect(out);
  }
  head_.collect(out);
  return out;
}

template <typename T>
std::vector<const Parameter<T>*> UNet<T>::parameters() const {
  auto mutable_params = const_cast<UNet<T>*>(this)->parameters();
  return {mutable_params.begin(), mutable_params.end()};
}

template <typename T>
Parameter<T>* UNet<T>::find_parameter(const std::string& name) {
  for (auto* p : parameters())
    if (p->name == name) return p;
  return nullptr;
}

template <typename T>
std::size_t UNet<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : parameters()) n += p->size();
  return n;
}

template <typename T>
void UNet<T>::zero_grad() {
  for (auto* p : parameters()) std::fill(p->grad.begin(), p->grad.end(), T{});
}

template <typename T>
std::map<std::string, double> UNet<T>::focal_weights() const {
  std::map<std::string, double> out;
  for (const auto* p : parameters()) {
    const auto dot = p->name.find(".focal");
    if (dot != std::string::npos && dot + 6 == p->name.size())
      out[p->name.substr(0, dot)] = static_cast<double>(p->value[0]);
  }
  return out;
}

template <typename T>
Prediction predict(UNet<T>& model, const Tensor<T>& image) {
  const Tensor<T> logits = model.forward(image);
  ClassGrids grids;
  for (std::size_t c = 0; c < logits.channels(); ++c) {
    const auto ch = logits.channel(c);
    grids.emplace_back(logits.height(), logits.width(), std::vector<double>(ch.begin(), ch.end()));
  }
  return softmax(grids);
}

template <typename T>
Tensor<T> logits_gradient(const Prediction& pred, const ProbGradient& d_probs) {
  const ClassGrids d = softmax_backward(pred, d_probs);
  const auto& first = d.front();
  Tensor<T> out(d.size(), first.rows(), first.cols());
  for (std::size_t c = 0; c < d.size(); ++c)
    for (std::size_t i = 0; i < first.size(); ++i) out[c * first.size() + i] = static_cast<T>(d[c][i]);
  return out;
}

template <typename T>
UNet<T> build_unet(const NetworkConfig& config) {
  return UNet<T>(config);
}

template <typename T>
void copy_parameters(const UNet<T>& from, UNet<T>& to) {
  std::map<std::string, const Parameter<T>*> source;
  for (const auto* p : from.parameters()) source[p->name] = p;
  for (auto* p : to.parameters()) {
    auto it = source.find(p->name);
    if (it == source.end()) continue;
    if (it->second->shape != p->shape)
      throw Error(ErrorCode::ShapeMismatch, "parameter " + p->name + " changed shape");
    p->value = it->second->value;
  }
}

template <typename T>
UNet<T> prune_placements(const UNet<T>& model, const std::vector<AttentionPlacement>& keep) {
  NetworkConfig cfg = model.config();
  std::vector<AttentionPlacement> kept;
  for (const auto& k : keep) {
    auto it = std::find_if(cfg.placements.begin(), cfg.placements.end(),
                           [&](const AttentionPlacement& p) { return p.same_site(k); });
    if (it == cfg.placements.end())
      throw Error(ErrorCode::InvalidPlacement, k.label() + " is not part of the model");
    kept.push_back(*it);
  }
  std::sort(kept.begin(), kept.end());
  cfg.placements = std::move(kept);
  UNet<T> pruned(cfg);
  copy_parameters(model, pruned);
  return pruned;
}

// ------------------------------------------------------------ checkpoint

namespace {

constexpr char kMagic[8] = {'F', 'S', 'G', 'C', 'K', 'P', 'T', '1'};

template <typename V>
void write_pod(std::ostream& os, const V& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V read_pod(std::istream& is) {
  V v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!is) throw Error(ErrorCode::IoError, "truncated checkpoint");
  return v;
}

}  // namespace

void save_checkpoint(const UNet<float>& model, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::IoError, "cannot write checkpoint " + path.string());
  const std::string cfg = nlohmann::json(model.config()).dump();
  os.write(kMagic, sizeof(kMagic));
  write_pod<std::uint64_t>(os, cfg.size());
  os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  const auto params = model.parameters();
  write_pod<std::uint64_t>(os, params.size());
  for (const auto* p : params) {
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(p->name.size()));
    os.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(p->shape.size()));
    for (auto d : p->shape) write_pod<std::uint64_t>(os, d);
    os.write(reinterpret_cast<const char*>(p->value.data()),
             static_cast<std::streamsize>(p->value.size() * sizeof(float)));
  }
  if (!os) throw Error(ErrorCode::IoError, "failed writing checkpoint " + path.string());
}

UNet<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::IoError, "cannot open checkpoint " + path.string());
  char magic[sizeof(kMagic)];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw Error(ErrorCode::IoError, path.string() + " is not a focalseg checkpoint");
  const auto cfg_len = read_pod<std::uint64_t>(is);
  std::string cfg(cfg_len, '\0');
  is.read(cfg.data(), static_cast<std::streamsize>(cfg_len));
  UNet<float> model(nlohmann::json::parse(cfg).get<NetworkConfig>());
  const auto count = read_pod<std::uint64_t>(is);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name(read_pod<std::uint32_t>(is), '\0');
    is.read(name.data(), static_cast<std::streamsize>(name.size()));
    std::vector<std::size_t> shape(read_pod<std::uint32_t>(is));
    for (auto& d : shape) d = read_pod<std::uint64_t>(is);
    Parameter<float>* p = model.find_parameter(name);
    if (p == nullptr || p->shape != shape)
      throw Error(ErrorCode::IoError, "checkpoint parameter " + name + " does not fit the model");
    is.read(reinterpret_cast<char*>(p->value.data()),
            static_cast<std::streamsize>(p->value.size() * sizeof(float)));
    if (!is) throw Error(ErrorCode::IoError, "truncated checkpoint");
  }
  return model;
}

#define FOCALSEG_INSTANTIATE(T)                                                         \
  template class UNet<T>;                                                               \
  template Prediction predict<T>(UNet<T>&, const Tensor<T>&);                           \
  template Tensor<T> logits_gradient<T>(const Prediction&, const ProbGradient&);        \
  template UNet<T> build_unet<T>(const NetworkConfig&);                                 \
  template void copy_parameters<T>(const UNet<T>&, UNet<T>&);                           \
  template UNet<T> prune_placements<T>(const UNet<T>&, const std::vector<AttentionPlacement>&);

FOCALSEG_INSTANTIATE(float)
FOCALSEG_INSTANTIATE(double)
#undef FOCALSEG_INSTANTIATE

}  // namespace focalseg
