#include "ps2/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include "ps2/error.hpp"

namespace ps2::train {
namespace {

constexpr char kMagic[8] = {'P', 'S', '2', 'C', 'K', 'P', 'T', '\0'};
constexpr const char* kInitScheme = "weights_uniform_fan_in+bias_zero+netvlad_normal";

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename U>
void put(std::ostream& out, U v) {
  unsigned char b[sizeof(U)];
  std::uint64_t bits = 0;
  if constexpr (std::is_floating_point_v<U>) {
    bits = std::bit_cast<std::uint64_t>(static_cast<double>(v));
  } else {
    bits = static_cast<std::uint64_t>(v);
  }
  for (std::size_t i = 0; i < sizeof(U); ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), sizeof(U));
}

template <typename U>
U get(std::istream& in, const char* what) {
  unsigned char b[sizeof(U)];
  if (!in.read(reinterpret_cast<char*>(b), sizeof(U))) {
    throw DataError(std::string("checkpoint truncated while reading ") + what);
  }
  std::uint64_t bits = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  if constexpr (std::is_floating_point_v<U>) {
    return std::bit_cast<double>(bits);
  } else {
    return static_cast<U>(bits);
  }
}

std::string get_bytes(std::istream& in, std::size_t n, const char* what) {
  std::string s(n, '\0');
  if (n && !in.read(s.data(), static_cast<std::streamsize>(n))) {
    throw DataError(std::string("checkpoint truncated while reading ") + what);
  }
  return s;
}

std::string real_text(double v) {
  std::ostringstream o;
  o.precision(17);
  o << v;
  return o.str();
}

}  // namespace

const std::string& CheckpointFile::get(const std::string& key) const {
  for (const auto& [k, v] : header) {
    if (k == key) return v;
  }
  throw ContractError("checkpoint header has no '" + key + "'");
}

void write_checkpoint(const CheckpointFile& file, std::ostream& out) {
  out.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  std::string text;
  for (const auto& [k, v] : file.header) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw ContractError("checkpoint header entry '" + k + "' cannot be encoded");
    }
    text += k + "=" + v + "\n";
  }
  put<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(file.records.size()));
  for (const auto& r : file.records) {
    if (shape_numel(r.shape) != r.values.size()) {
      throw ContractError("checkpoint record '" + r.name + "' has shape " + shape_str(r.shape) + " but " +
                          std::to_string(r.values.size()) + " values");
    }
    put<std::uint32_t>(out, static_cast<std::uint32_t>(r.name.size()));
    out.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
    put<std::uint8_t>(out, static_cast<std::uint8_t>(r.kind));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(r.shape.size()));
    for (auto d : r.shape) put<std::uint64_t>(out, d);
    for (double v : r.values) put<double>(out, v);
  }
  if (!out) throw Error("failed writing checkpoint");
}

void write_checkpoint(const CheckpointFile& file, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  write_checkpoint(file, out);
}

CheckpointFile read_checkpoint(std::istream& in) {
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw DataError("not a checkpoint (bad magic)");
  }
  const auto version = get<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  }
  CheckpointFile file;
  const auto text = get_bytes(in, get<std::uint32_t>(in, "header size"), "header");
  std::istringstream hs(text);
  std::string line;
  while (std::getline(hs, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError("malformed checkpoint header line '" + line + "'");
    file.header.emplace_back(line.substr(0, eq), line.substr(eq + 1));
  }
  const auto count = get<std::uint32_t>(in, "record count");
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointRecord r;
    r.name = get_bytes(in, get<std::uint32_t>(in, "name size"), "record name");
    const auto kind = get<std::uint8_t>(in, "record kind");
    if (kind > 3) throw DataError("checkpoint record '" + r.name + "' has unknown kind");
    r.kind = static_cast<RecordKind>(kind);
    const auto rank = get<std::uint32_t>(in, "rank");
    if (rank > 8) throw DataError("checkpoint record '" + r.name + "' has implausible rank");
    for (std::uint32_t d = 0; d < rank; ++d) r.shape.push_back(static_cast<std::size_t>(get<std::uint64_t>(in, "dims")));
    const std::size_t n = shape_numel(r.shape);
    r.values.resize(n);
    for (std::size_t j = 0; j < n; ++j) r.values[j] = get<double>(in, "values");
    file.records.push_back(std::move(r));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw DataError("trailing bytes after checkpoint records");
  return file;
}

CheckpointFile read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint '" + path.string() + "'");
  return read_checkpoint(in);
}

template <typename T>
CheckpointFile make_checkpoint(nn::Model<T>& model, const nn::OptimizerState<T>& optimizer,
                               const CheckpointMeta& meta) {
  CheckpointFile f;
  f.header.emplace_back("format", "ps2net");
  RunConfig rc{model.config, meta.options};
  for (auto& e : run_config_entries(rc)) f.header.push_back(std::move(e));
  f.header.emplace_back("adam_beta1", real_text(optimizer.hyper.beta1));
  f.header.emplace_back("adam_beta2", real_text(optimizer.hyper.beta2));
  f.header.emplace_back("adam_eps", real_text(optimizer.hyper.eps));
  f.header.emplace_back("seed", std::to_string(meta.seed));
  f.header.emplace_back("init_seed", std::to_string(model.seed));
  f.header.emplace_back("epoch", std::to_string(meta.epoch));
  f.header.emplace_back("step", std::to_string(optimizer.step));
  f.header.emplace_back("init", kInitScheme);

  auto tensors = nn::named_tensors(model);
  for (const auto& t : tensors) {
    f.records.push_back({t.name, t.kind == nn::TensorKind::param ? RecordKind::param : RecordKind::buffer,
                         t.tensor->shape(), {t.tensor->data().begin(), t.tensor->data().end()}});
  }
  auto params = nn::named_parameters(model);
  if (optimizer.m.size() != params.size()) throw ContractError("make_checkpoint: optimizer does not match model");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& m = optimizer.m[i];
    const auto& v = optimizer.v[i];
    f.records.push_back({params[i].name, RecordKind::adam_m, m.shape(), {m.data().begin(), m.data().end()}});
    f.records.push_back({params[i].name, RecordKind::adam_v, v.shape(), {v.data().begin(), v.data().end()}});
  }
  return f;
}

RunConfig checkpoint_config(const CheckpointFile& file) {
  std::ostringstream text;
  // network and training keys only; the rest is optimizer or run metadata
  static const std::vector<std::string> skip{"format", "adam_beta1", "adam_beta2", "adam_eps", "seed",
                                             "init_seed", "epoch", "step", "init"};
  for (const auto& [k, v] : file.header) {
    if (std::find(skip.begin(), skip.end(), k) != skip.end()) continue;
    text << k << " = " << v << '\n';
  }
  std::istringstream in(text.str());
  auto config = parse_run_config(in);
  config.network.validate();
  return config;
}

template <typename T>
nn::Model<T> restore_model(const CheckpointFile& file) {
  if (file.get("format") != "ps2net") throw DataError("checkpoint format is not ps2net");
  const auto config = checkpoint_config(file);
  auto model = nn::build_model<T>(config.network, std::stoull(file.get("init_seed")));
  std::map<std::string, const CheckpointRecord*> by_name;
  for (const auto& r : file.records) {
    if (r.kind == RecordKind::param || r.kind == RecordKind::buffer) by_name[r.name] = &r;
  }
  for (auto& t : nn::named_tensors(model)) {
    auto it = by_name.find(t.name);
    if (it == by_name.end()) throw DataError("checkpoint lacks tensor '" + t.name + "'");
    if (it->second->shape != t.tensor->shape()) {
      throw DataError("checkpoint tensor '" + t.name + "' has shape " + shape_str(it->second->shape) +
                      ", model expects " + shape_str(t.tensor->shape()));
    }
    auto dst = t.tensor->mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(it->second->values[i]);
  }
  return model;
}

template <typename T>
nn::OptimizerState<T> restore_optimizer(const CheckpointFile& file, nn::Model<T>& model) {
  nn::AdamConfig hyper;
  const auto config = checkpoint_config(file);
  hyper.learning_rate = config.train.learning_rate;
  hyper.weight_decay = config.train.weight_decay;
  hyper.beta1 = std::stod(file.get("adam_beta1"));
  hyper.beta2 = std::stod(file.get("adam_beta2"));
  hyper.eps = std::stod(file.get("adam_eps"));
  auto state = nn::make_optimizer(model, hyper);
  state.step = std::stoull(file.get("step"));
  auto params = nn::named_parameters(model);
  std::map<std::pair<std::string, RecordKind>, const CheckpointRecord*> moments;
  for (const auto& r : file.records) {
    if (r.kind == RecordKind::adam_m || r.kind == RecordKind::adam_v) moments[{r.name, r.kind}] = &r;
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (auto kind : {RecordKind::adam_m, RecordKind::adam_v}) {
      auto it = moments.find({params[i].name, kind});
      if (it == moments.end() || it->second->shape != params[i].tensor->shape()) {
        throw DataError("checkpoint lacks optimizer moments for '" + params[i].name + "'");
      }
      auto dst = (kind == RecordKind::adam_m ? state.m[i] : state.v[i]).mutable_data();
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = static_cast<T>(it->second->values[j]);
    }
  }
  return state;
}

#define PS2_INSTANTIATE(T)                                                                               \
  template CheckpointFile make_checkpoint(nn::Model<T>&, const nn::OptimizerState<T>&,                  \
                                          const CheckpointMeta&);                                        \
  template nn::Model<T> restore_model(const CheckpointFile&);                                           \
  template nn::OptimizerState<T> restore_optimizer(const CheckpointFile&, nn::Model<T>&);

PS2_INSTANTIATE(float)
PS2_INSTANTIATE(double)
#undef PS2_INSTANTIATE

}  // namespace ps2::train
