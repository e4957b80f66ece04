#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>

#include "ps2/dataio.hpp"
#include "ps2/error.hpp"

namespace ps2::data {
namespace {

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

double to_double(std::string_view tok, std::size_t line) {
  double v = 0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size()) {
    throw ParseError(line, "expected a number, got '" + std::string(tok) + "'");
  }
  return v;
}

std::size_t to_count(std::string_view tok, std::size_t line) {
  std::size_t v = 0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size() || tok.empty()) {
    throw ParseError(line, "expected a non-negative integer, got '" + std::string(tok) + "'");
  }
  return v;
}

std::size_t header_field(std::string_view tok, std::string_view key) {
  if (tok.substr(0, key.size()) != key) {
    throw ParseError(1, "expected '" + std::string(key) + "<count>' in header, got '" + std::string(tok) + "'");
  }
  return to_count(tok.substr(key.size()), 1);
}

void put_double(std::string& s, double v) {
  char buf[32];
  const int n = std::snprintf(buf, sizeof buf, "%.17g", v);
  s.append(buf, static_cast<std::size_t>(n));
}

}  // namespace

void PointCloud::validate() const {
  const std::size_t n = xyz.size();
  if (features.size() != n * f0) {
    throw DataError("cloud has " + std::to_string(features.size()) + " feature values for " +
                    std::to_string(n) + " points of width " + std::to_string(f0));
  }
  if (!labels.empty() && labels.size() != n) {
    throw DataError("cloud has " + std::to_string(labels.size()) + " labels for " + std::to_string(n) + " points");
  }
  if (!labels.empty() && num_classes == 0) throw DataError("labeled cloud declares no classes");
  if (!class_names.empty() && class_names.size() != num_classes) {
    throw DataError("cloud names " + std::to_string(class_names.size()) + " classes but declares " +
                    std::to_string(num_classes));
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (double c : xyz[i]) {
      if (!std::isfinite(c)) throw DataError("point " + std::to_string(i) + " has a non-finite coordinate");
    }
    if (!labels.empty() && labels[i] >= num_classes) {
      throw DataError("point " + std::to_string(i) + " has label " + std::to_string(labels[i]) +
                      " outside [0, " + std::to_string(num_classes) + ")");
    }
  }
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (!std::isfinite(features[i])) {
      throw DataError("point " + std::to_string(i / f0) + " has a non-finite feature");
    }
  }
}

PointCloud PointCloud::select(std::span<const std::uint32_t> ids) const {
  PointCloud out;
  out.f0 = f0;
  out.num_classes = num_classes;
  out.class_names = class_names;
  out.xyz.reserve(ids.size());
  out.features.reserve(ids.size() * f0);
  for (auto id : ids) {
    out.xyz.push_back(xyz[id]);
    out.features.insert(out.features.end(), features.begin() + id * f0, features.begin() + (id + 1) * f0);
    if (!labels.empty()) out.labels.push_back(labels[id]);
  }
  return out;
}

void write_cloud(const PointCloud& cloud, std::ostream& out) {
  cloud.validate();
  const bool labeled = cloud.num_classes > 0;
  if (labeled && !cloud.has_labels() && cloud.size() > 0) {
    throw DataError("cloud declares " + std::to_string(cloud.num_classes) + " classes but has no labels");
  }
  out << "pscloud v1 N=" << cloud.size() << " F=" << cloud.f0 << " L=" << cloud.num_classes << '\n';
  if (!cloud.class_names.empty()) {
    out << "classes";
    for (const auto& name : cloud.class_names) out << ' ' << name;
    out << '\n';
  }
  std::string line;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    line.clear();
    for (std::size_t c = 0; c < 3; ++c) {
      if (c) line += ' ';
      put_double(line, cloud.xyz[i][c]);
    }
    for (std::size_t c = 0; c < cloud.f0; ++c) {
      line += ' ';
      put_double(line, cloud.features[i * cloud.f0 + c]);
    }
    if (labeled) line += ' ' + std::to_string(cloud.labels[i]);
    line += '\n';
    out << line;
  }
  if (!out) throw Error("failed writing point cloud");
}

void write_cloud(const PointCloud& cloud, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  write_cloud(cloud, out);
}

PointCloud read_cloud(std::istream& in) {
  std::string text;
  if (!std::getline(in, text)) throw ParseError(1, "empty file, expected 'pscloud v1' header");
  const auto head = split(text);
  if (head.size() != 5 || head[0] != "pscloud" || head[1] != "v1") {
    throw ParseError(1, "expected 'pscloud v1 N=<n> F=<f0> L=<classes>'");
  }
  const std::size_t n = header_field(head[2], "N=");
  PointCloud cloud;
  cloud.f0 = header_field(head[3], "F=");
  cloud.num_classes = header_field(head[4], "L=");
  const bool labeled = cloud.num_classes > 0;
  const std::size_t width = 3 + cloud.f0 + (labeled ? 1 : 0);
  cloud.xyz.reserve(n);
  cloud.features.reserve(n * cloud.f0);
  if (labeled) cloud.labels.reserve(n);

  std::size_t line = 1;
  while (std::getline(in, text)) {
    ++line;
    const auto tok = split(text);
    if (tok.empty()) continue;
    if (tok[0] == "classes") {
      if (!cloud.class_names.empty() || !cloud.xyz.empty()) throw ParseError(line, "misplaced 'classes' line");
      for (std::size_t i = 1; i < tok.size(); ++i) cloud.class_names.emplace_back(tok[i]);
      if (cloud.class_names.size() != cloud.num_classes) {
        throw DataError("line " + std::to_string(line) + ": " + std::to_string(cloud.class_names.size()) +
                        " class names for L=" + std::to_string(cloud.num_classes));
      }
      continue;
    }
    if (tok.size() != width) {
      throw DataError("line " + std::to_string(line) + ": expected " + std::to_string(width) + " values, got " +
                      std::to_string(tok.size()));
    }
    if (cloud.xyz.size() == n) throw DataError("line " + std::to_string(line) + ": more points than N=" + std::to_string(n));
    knn::Point3 p{to_double(tok[0], line), to_double(tok[1], line), to_double(tok[2], line)};
    for (double c : p) {
      if (!std::isfinite(c)) throw DataError("line " + std::to_string(line) + ": non-finite coordinate");
    }
    cloud.xyz.push_back(p);
    for (std::size_t c = 0; c < cloud.f0; ++c) cloud.features.push_back(to_double(tok[3 + c], line));
    if (labeled) {
      const std::size_t label = to_count(tok.back(), line);
      if (label >= cloud.num_classes) {
        throw DataError("line " + std::to_string(line) + ": label " + std::to_string(label) + " outside [0, " +
                        std::to_string(cloud.num_classes) + ")");
      }
      cloud.labels.push_back(static_cast<std::uint32_t>(label));
    }
  }
  if (cloud.xyz.size() != n) {
    throw DataError("header declares N=" + std::to_string(n) + " but the file holds " +
                    std::to_string(cloud.xyz.size()) + " points");
  }
  return cloud;
}

PointCloud read_cloud(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  try {
    return read_cloud(in);
  } catch (const ParseError& e) {
    throw ParseError(e.line(), path.string() + ": " + std::string(e.what()).substr(std::string(e.what()).find(": ") + 2));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

std::vector<double> input_rows(const PointCloud& cloud) {
  const std::size_t w = 3 + cloud.f0;
  std::vector<double> out(cloud.size() * w);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    double* row = out.data() + i * w;
    row[0] = cloud.xyz[i][0];
    row[1] = cloud.xyz[i][1];
    row[2] = cloud.xyz[i][2];
    std::copy_n(cloud.features.begin() + i * cloud.f0, cloud.f0, row + 3);
  }
  return out;
}

}  // namespace ps2::data
