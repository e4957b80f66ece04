#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "ps2/error.hpp"
#include "ps2/train.hpp"

namespace ps2::train {
namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string real_text(double v) {
  std::ostringstream o;
  o.precision(17);
  o << v;
  return o.str();
}

double real_value(const std::string& v) {
  std::size_t used = 0;
  const double out = std::stod(v, &used);
  if (used != v.size()) throw std::invalid_argument(v);
  return out;
}

std::size_t count_value(const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos) throw std::invalid_argument(v);
  return std::stoull(v);
}

// Returns false for an unknown key; throws std::exception on a bad value.
bool set_train_value(TrainOptions& t, const std::string& key, const std::string& value) {
  if (key == "learning_rate") t.learning_rate = real_value(value);
  else if (key == "weight_decay") t.weight_decay = real_value(value);
  else if (key == "lr_step_epochs") t.lr_step_epochs = count_value(value);
  else if (key == "checkpoint_every") t.checkpoint_every = count_value(value);
  else if (key == "epochs") t.epochs = count_value(value);
  else if (key == "batch_size") t.batch_size = count_value(value);
  else if (key == "precision") {
    if (value == "float" || value == "f32") t.precision = Precision::f32;
    else if (value == "double" || value == "f64") t.precision = Precision::f64;
    else throw std::invalid_argument(value);
  } else if (key == "p1_points") t.sampling.p1 = count_value(value);
  else if (key == "p2_mean") t.sampling.p2_mean = real_value(value);
  else if (key == "p2_sd") t.sampling.p2_sd = real_value(value);
  else if (key == "p2_min") t.sampling.p2_min = count_value(value);
  else if (key == "p3_points") t.sampling.p3 = count_value(value);
  else return false;
  return true;
}

}  // namespace

RunConfig parse_run_config(std::istream& in) {
  RunConfig c;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (auto hash = text.find('#'); hash != std::string::npos) text.resize(hash);
    const std::string body = trim(text);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ParseError(line, "expected 'key = value', got '" + body + "'");
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    if (key.empty() || value.empty()) throw ParseError(line, "expected 'key = value', got '" + body + "'");
    bool known = false;
    try {
      known = nn::set_config_value(c.network, key, value) || set_train_value(c.train, key, value);
    } catch (const DataError& e) {
      throw ParseError(line, e.what());
    } catch (const std::exception&) {
      throw ParseError(line, "bad value '" + value + "' for '" + key + "'");
    }
    if (!known) throw ParseError(line, "unknown config key '" + key + "'");
  }
  return c;
}

RunConfig read_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config '" + path.string() + "'");
  return parse_run_config(in);
}

std::vector<std::pair<std::string, std::string>> run_config_entries(const RunConfig& c) {
  auto out = nn::config_entries(c.network);
  const auto& t = c.train;
  out.emplace_back("learning_rate", real_text(t.learning_rate));
  out.emplace_back("weight_decay", real_text(t.weight_decay));
  out.emplace_back("lr_step_epochs", std::to_string(t.lr_step_epochs));
  out.emplace_back("checkpoint_every", std::to_string(t.checkpoint_every));
  out.emplace_back("epochs", std::to_string(t.epochs));
  out.emplace_back("batch_size", std::to_string(t.batch_size));
  out.emplace_back("precision", t.precision == Precision::f32 ? "float" : "double");
  out.emplace_back("p1_points", std::to_string(t.sampling.p1));
  out.emplace_back("p2_mean", real_text(t.sampling.p2_mean));
  out.emplace_back("p2_sd", real_text(t.sampling.p2_sd));
  out.emplace_back("p2_min", std::to_string(t.sampling.p2_min));
  out.emplace_back("p3_points", std::to_string(t.sampling.p3));
  return out;
}

void write_run_config(const RunConfig& config, std::ostream& out) {
  for (const auto& [k, v] : run_config_entries(config)) out << k << " = " << v << '\n';
}

nn::NetworkConfig bind_to_data(nn::NetworkConfig config, const data::BlockSet& set) {
  config.f0 = set.f0;
  config.num_classes = set.num_classes;
  return config;
}

}  // namespace ps2::train
