#include "ps2/network.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

namespace ps2::nn {
namespace {

std::string join_widths(const std::vector<std::size_t>& w) {
  std::string s;
  for (std::size_t i = 0; i < w.size(); ++i) s += (i ? "," : "") + std::to_string(w[i]);
  return s;
}

std::size_t parse_count(std::string_view key, std::string_view value) {
  std::size_t out = 0;
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size() || value.empty()) {
    throw DataError("config key '" + std::string(key) + "': expected a non-negative integer, got '" +
                    std::string(value) + "'");
  }
  return out;
}

double parse_real(std::string_view key, std::string_view value) {
  const std::string s(value);
  std::size_t used = 0;
  double out = 0;
  try {
    out = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size()) {
    throw DataError("config key '" + std::string(key) + "': expected a number, got '" + s + "'");
  }
  return out;
}

std::vector<std::size_t> parse_widths(std::string_view key, std::string_view value) {
  std::vector<std::size_t> out;
  std::size_t start = 0;
  while (start <= value.size()) {
    const auto comma = value.find(',', start);
    const auto end = comma == std::string_view::npos ? value.size() : comma;
    out.push_back(parse_count(key, value.substr(start, end - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

template <typename T>
void add_mlp(std::vector<NamedTensor<T>>& out, const std::string& prefix, SharedMlp<T>& mlp) {
  out.push_back({prefix + ".weight", &mlp.weight, TensorKind::param});
  out.push_back({prefix + ".bias", &mlp.bias, TensorKind::param});
  if (!mlp.bn) return;
  out.push_back({prefix + ".bn.gamma", &mlp.bn->gamma, TensorKind::param});
  out.push_back({prefix + ".bn.beta", &mlp.bn->beta, TensorKind::param});
  out.push_back({prefix + ".bn.running_mean", &mlp.bn->running_mean, TensorKind::buffer});
  out.push_back({prefix + ".bn.running_var", &mlp.bn->running_var, TensorKind::buffer});
}

}  // namespace

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::no_local: return "no_local";
    case Variant::no_edgeconv: return "no_edgeconv";
    case Variant::no_netvlad: return "no_netvlad";
  }
  return "unknown";
}

Variant parse_variant(std::string_view name) {
  for (auto v : kAllVariants) {
    if (variant_name(v) == name) return v;
  }
  throw ContractError("unknown variant '" + std::string(name) +
                      "' (expected full, no_local, no_edgeconv or no_netvlad)");
}

void NetworkConfig::validate() const {
  std::vector<std::string> bad;
  if (num_encoders < 1) bad.push_back("num_encoders >= 1");
  if (k_neighbors < 1) bad.push_back("k_neighbors >= 1");
  if (num_clusters < 1) bad.push_back("num_clusters >= 1");
  if (num_classes < 2) bad.push_back("num_classes >= 2");
  if (edge_widths.size() != 2 || std::count(edge_widths.begin(), edge_widths.end(), 0u) > 0)
    bad.push_back("edge_widths: two positive widths");
  if (feature_width < 1) bad.push_back("feature_width >= 1");
  if (head_widths.empty() || std::count(head_widths.begin(), head_widths.end(), 0u) > 0)
    bad.push_back("head_widths: at least one positive width");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) bad.push_back("0 <= dropout_p < 1");
  if (bad.empty()) return;
  std::string msg = "invalid network config, violated:";
  for (const auto& b : bad) msg += " [" + b + "]";
  throw ContractError(msg);
}

std::vector<std::pair<std::string, std::string>> config_entries(const NetworkConfig& c) {
  std::ostringstream p;
  p.precision(17);
  p << c.dropout_p;
  return {{"num_encoders", std::to_string(c.num_encoders)},
          {"k_neighbors", std::to_string(c.k_neighbors)},
          {"num_clusters", std::to_string(c.num_clusters)},
          {"f0", std::to_string(c.f0)},
          {"num_classes", std::to_string(c.num_classes)},
          {"edge_widths", join_widths(c.edge_widths)},
          {"feature_width", std::to_string(c.feature_width)},
          {"head_widths", join_widths(c.head_widths)},
          {"dropout_p", p.str()},
          {"variant", std::string(variant_name(c.variant))}};
}

bool set_config_value(NetworkConfig& c, std::string_view key, std::string_view value) {
  if (key == "num_encoders") c.num_encoders = parse_count(key, value);
  else if (key == "k_neighbors") c.k_neighbors = parse_count(key, value);
  else if (key == "num_clusters") c.num_clusters = parse_count(key, value);
  else if (key == "f0") c.f0 = parse_count(key, value);
  else if (key == "num_classes") c.num_classes = parse_count(key, value);
  else if (key == "edge_widths") c.edge_widths = parse_widths(key, value);
  else if (key == "feature_width") c.feature_width = parse_count(key, value);
  else if (key == "head_widths") c.head_widths = parse_widths(key, value);
  else if (key == "dropout_p") c.dropout_p = parse_real(key, value);
  else if (key == "variant") {
    try {
      c.variant = parse_variant(value);
    } catch (const ContractError& e) {
      throw DataError(e.what());
    }
  } else {
    return false;
  }
  return true;
}

template <typename T>
std::vector<NamedTensor<T>> named_tensors(Model<T>& model) {
  std::vector<NamedTensor<T>> out;
  for (std::size_t e = 0; e < model.encoders.size(); ++e) {
    auto& enc = model.encoders[e];
    const std::string p = "encoder" + std::to_string(e);
    add_mlp(out, p + ".local.mlp1", enc.edgeconv.mlp1);
    add_mlp(out, p + ".local.mlp2", enc.edgeconv.mlp2);
    add_mlp(out, p + ".local.mlp_out", enc.edgeconv.mlp_out);
    if (enc.netvlad) {
      out.push_back({p + ".netvlad.centers", &enc.netvlad->centers, TensorKind::param});
      out.push_back({p + ".netvlad.assign_weight", &enc.netvlad->assign_weight, TensorKind::param});
      out.push_back({p + ".netvlad.assign_bias", &enc.netvlad->assign_bias, TensorKind::param});
      add_mlp(out, p + ".netvlad.reduce", enc.netvlad->reduce);
    }
  }
  for (std::size_t h = 0; h < model.head.size(); ++h) add_mlp(out, "head" + std::to_string(h), model.head[h]);
  add_mlp(out, "classifier", model.classifier);
  return out;
}

template <typename T>
std::vector<NamedTensor<T>> named_parameters(Model<T>& model) {
  auto all = named_tensors(model);
  std::erase_if(all, [](const NamedTensor<T>& t) { return t.kind != TensorKind::param; });
  return all;
}

template <typename T>
std::size_t parameter_count(Model<T>& model) {
  std::size_t n = 0;
  for (const auto& t : named_parameters(model)) n += t.tensor->numel();
  return n;
}

template <typename T>
Model<T> build_model(const NetworkConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  Model<T> model;
  model.config = config;
  model.seed = seed;
  const LocalKind local = config.variant == Variant::no_local      ? LocalKind::pointwise
                          : config.variant == Variant::no_edgeconv ? LocalKind::pointwise_max
                                                                   : LocalKind::edgeconv;
  std::size_t in = config.input_width();
  for (std::size_t e = 0; e < config.num_encoders; ++e) {
    EncoderParams<T> enc{make_edgeconv<T>(in, config.edge_widths, config.feature_width, local, rng),
                         GlobalKind::netvlad, std::nullopt};
    if (config.variant == Variant::no_netvlad) {
      enc.global = GlobalKind::max_pool;
    } else {
      enc.netvlad = make_netvlad<T>(config.num_clusters, config.feature_width, config.feature_width, rng);
    }
    model.encoders.push_back(std::move(enc));
    in = config.encoder_width();
  }
  in = config.head_input_width();
  for (auto w : config.head_widths) {
    model.head.push_back(make_shared_mlp<T>(in, w, true, true, rng));
    in = w;
  }
  model.classifier = make_shared_mlp<T>(in, config.num_classes, false, false, rng);
  return model;
}

template <typename T>
Model<T> clone_model(Model<T>& model) {
  auto copy = build_model<T>(model.config, model.seed);
  auto src = named_tensors(model);
  auto dst = named_tensors(copy);
  for (std::size_t i = 0; i < src.size(); ++i) {
    std::ranges::copy(src[i].tensor->data(), dst[i].tensor->mutable_data().begin());
  }
  return copy;
}

BlockLayout stack_layout(std::span<const knn::KnnGraph> graphs) {
  if (graphs.empty()) throw ContractError("stack_layout: no blocks");
  const std::size_t k = graphs.front().k();
  std::size_t total = 0;
  for (const auto& g : graphs) {
    if (g.k() != k) throw ContractError("stack_layout: blocks disagree on the neighbor count");
    total += g.size();
  }
  BlockLayout out;
  out.graph.indices = IndexMatrix(total, k);
  std::size_t row = 0;
  for (const auto& g : graphs) {
    const auto offset = static_cast<std::uint32_t>(row);
    auto* dst = out.graph.indices.data.data() + row * k;
    for (std::size_t i = 0; i < g.indices.data.size(); ++i) dst[i] = g.indices.data[i] + offset;
    out.segments.emplace_back(row, row + g.size());
    row += g.size();
  }
  return out;
}

template <typename T>
Tensor<T> forward(Model<T>& model, const Tensor<T>& x, const BlockLayout& layout, Mode mode,
                  std::mt19937_64* dropout_rng, EdgeRoute route) {
  const auto& cfg = model.config;
  if (x.rank() != 2 || x.dim(1) != cfg.input_width()) {
    throw ContractError("forward: expected rows of width " + std::to_string(cfg.input_width()) +
                        " (3 + f0), got " + shape_str(x.shape()));
  }
  if (layout.graph.size() != x.dim(0)) {
    throw ContractError("forward: graph has " + std::to_string(layout.graph.size()) + " rows, input has " +
                        std::to_string(x.dim(0)));
  }
  std::vector<Tensor<T>> levels;
  levels.reserve(model.encoders.size());
  Tensor<T> h = x;
  for (auto& enc : model.encoders) {
    h = encoder_forward(h, layout.graph, layout.segments, enc, mode, route);
    levels.push_back(h);
  }
  h = levels.size() == 1 ? levels.front() : concat<T>(std::span<const Tensor<T>>(levels), 1);
  for (std::size_t i = 0; i < model.head.size(); ++i) {
    h = shared_mlp_forward(h, model.head[i], mode);
    if (i == 0 && mode == Mode::train && cfg.dropout_p > 0.0) {
      if (!dropout_rng) throw ContractError("forward: train mode with dropout needs a random source");
      h = dropout(h, static_cast<T>(cfg.dropout_p), *dropout_rng);
    }
  }
  return linear(h, model.classifier);
}

template <typename T>
Tensor<T> forward(Model<T>& model, const Tensor<T>& cloud, const knn::KnnGraph& graph, Mode mode,
                  std::mt19937_64* dropout_rng, EdgeRoute route) {
  if (cloud.rank() != 2) throw ContractError("forward: expected an N x (3 + f0) cloud");
  BlockLayout layout{graph, Segments{{0, cloud.dim(0)}}};
  return forward(model, cloud, layout, mode, dropout_rng, route);
}

template <typename T>
Tensor<T> cross_entropy_loss(const Tensor<T>& logits, std::span<const std::uint32_t> labels,
                             std::span<const std::uint8_t> mask) {
  if (logits.rank() != 2) throw DimensionError("cross_entropy: logits must be N x L");
  const std::size_t n = logits.dim(0), l = logits.dim(1);
  if (labels.size() != n || (!mask.empty() && mask.size() != n)) {
    throw DimensionError("cross_entropy: " + std::to_string(n) + " logit rows but " +
                         std::to_string(labels.size()) + " labels");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= l) {
      throw DataError("cross_entropy: label " + std::to_string(labels[i]) + " of point " +
                      std::to_string(i) + " is outside [0, " + std::to_string(l) + ")");
    }
  }
  auto probs = std::make_shared<std::vector<T>>(n * l);
  std::size_t count = 0;
  double total = 0;
  const T* z = logits.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = z + i * l;
    T* p = probs->data() + i * l;
    const T mx = *std::max_element(row, row + l);
    double s = 0;
    for (std::size_t c = 0; c < l; ++c) s += std::exp(static_cast<double>(row[c] - mx));
    for (std::size_t c = 0; c < l; ++c) p[c] = static_cast<T>(std::exp(static_cast<double>(row[c] - mx)) / s);
    if (!mask.empty() && !mask[i]) continue;
    ++count;
    total += std::log(s) + mx - row[labels[i]];
  }
  if (count == 0) throw ContractError("cross_entropy: no points selected by the mask");
  std::vector<std::uint32_t> lab(labels.begin(), labels.end());
  std::vector<std::uint8_t> sel(mask.begin(), mask.end());
  return record_op<T>(
      "cross_entropy", Tensor<T>::scalar(static_cast<T>(total / count)), {&logits},
      [logits, probs, lab = std::move(lab), sel = std::move(sel), n, l, count](std::span<const T> g) {
        auto gx = logits.grad_buffer();
        const T scale = g[0] / static_cast<T>(count);
        for (std::size_t i = 0; i < n; ++i) {
          if (!sel.empty() && !sel[i]) continue;
          const T* p = probs->data() + i * l;
          T* d = gx.data() + i * l;
          for (std::size_t c = 0; c < l; ++c) d[c] += scale * p[c];
          d[lab[i]] -= scale;
        }
      });
}

template <typename T>
OptimizerState<T> make_optimizer(Model<T>& model, const AdamConfig& hyper) {
  OptimizerState<T> s;
  s.hyper = hyper;
  for (const auto& p : named_parameters(model)) {
    s.m.push_back(Tensor<T>::zeros(p.tensor->shape()));
    s.v.push_back(Tensor<T>::zeros(p.tensor->shape()));
  }
  return s;
}

template <typename T>
void adam_step(Model<T>& model, OptimizerState<T>& state) {
  auto params = named_parameters(model);
  if (params.size() != state.m.size()) {
    throw ContractError("adam_step: optimizer state tracks " + std::to_string(state.m.size()) +
                        " parameters, model has " + std::to_string(params.size()));
  }
  for (const auto& p : params) {
    if (!p.tensor->has_grad()) throw ContractError("adam_step: parameter '" + p.name + "' has no gradient");
  }
  const auto& h = state.hyper;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(h.beta1, t), c2 = 1.0 - std::pow(h.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].tensor->mutable_data();
    auto g = params[i].tensor->grad();
    auto m = state.m[i].mutable_data();
    auto v = state.v[i].mutable_data();
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = static_cast<double>(g[j]) + h.weight_decay * static_cast<double>(w[j]);
      const double mj = h.beta1 * m[j] + (1.0 - h.beta1) * gj;
      const double vj = h.beta2 * v[j] + (1.0 - h.beta2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      w[j] = static_cast<T>(w[j] - h.learning_rate * (mj / c1) / (std::sqrt(vj / c2) + h.eps));
    }
    params[i].tensor->node().grad.clear();
  }
}

double lr_at_epoch(double initial, std::size_t epoch, std::size_t step_epochs) {
  if (step_epochs == 0) return initial;
  return std::ldexp(initial, -static_cast<int>(epoch / step_epochs));
}

#define PS2_INSTANTIATE(T)                                                                        \
  template std::vector<NamedTensor<T>> named_tensors(Model<T>&);                                  \
  template std::vector<NamedTensor<T>> named_parameters(Model<T>&);                               \
  template std::size_t parameter_count(Model<T>&);                                                \
  template Model<T> build_model(const NetworkConfig&, std::uint64_t);                             \
  template Model<T> clone_model(Model<T>&);                                                       \
  template Tensor<T> forward(Model<T>&, const Tensor<T>&, const BlockLayout&, Mode,               \
                             std::mt19937_64*, EdgeRoute);                                        \
  template Tensor<T> forward(Model<T>&, const Tensor<T>&, const knn::KnnGraph&, Mode,             \
                             std::mt19937_64*, EdgeRoute);                                        \
  template Tensor<T> cross_entropy_loss(const Tensor<T>&, std::span<const std::uint32_t>,         \
                                        std::span<const std::uint8_t>);                           \
  template OptimizerState<T> make_optimizer(Model<T>&, const AdamConfig&);                        \
  template void adam_step(Model<T>&, OptimizerState<T>&);

PS2_INSTANTIATE(float)
PS2_INSTANTIATE(double)
#undef PS2_INSTANTIATE

}  // namespace ps2::nn
