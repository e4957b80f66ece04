#include <charconv>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "ps2/error.hpp"
#include "ps2/eval.hpp"

namespace ps2::eval {
namespace {

std::string real_text(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fixed4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::vector<std::string> split(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string t; in >> t;) out.push_back(t);
  return out;
}

double parse_real(const std::string& s, std::size_t line) {
  double v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw ParseError(line, "bad number '" + s + "'");
  return v;
}

std::uint64_t parse_uint(const std::string& s, std::size_t line) {
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw ParseError(line, "bad count '" + s + "'");
  return v;
}

std::string pad(std::string s, std::size_t width) {
  if (s.size() < width) s.append(width - s.size(), ' ');
  return s;
}

}  // namespace

std::string summary_table(std::span<const RunReport> reports, const std::string& first_column) {
  std::size_t w = first_column.size();
  for (const auto& r : reports) w = std::max(w, r.label.size());
  std::ostringstream out;
  out << "| " << pad(first_column, w) << " | parameters |     OA |   mIoU |\n";
  out << "|-" << std::string(w, '-') << "-|------------|--------|--------|\n";
  for (const auto& r : reports) {
    char row[96];
    std::snprintf(row, sizeof row, " | %10zu | %6s | %6s |\n", r.parameters, fixed4(r.metrics.overall_accuracy()).c_str(),
                  fixed4(r.metrics.mean_iou()).c_str());
    out << "| " << pad(r.label, w) << row;
  }
  return out.str();
}

void write_report(const RunReport& r, std::ostream& out) {
  const auto& m = r.metrics;
  out << "# run " << r.label << ": OA " << fixed4(m.overall_accuracy()) << ", mIoU " << fixed4(m.mean_iou()) << '\n';
  std::size_t w = 5;
  for (const auto& n : r.class_names) w = std::max(w, n.size());
  for (std::size_t c = 0; c < m.num_classes(); ++c) {
    const std::string name = c < r.class_names.size() ? r.class_names[c] : std::to_string(c);
    const auto iou = m.class_iou(c);
    out << "#   " << pad(name, w) << "  " << (iou ? fixed4(*iou) : std::string("absent")) << '\n';
  }
  out << "report" << (r.label.empty() ? "" : " " + r.label) << '\n';
  out << "seed " << r.seed << '\n';
  out << "parameters " << r.parameters << '\n';
  out << "train_seconds " << real_text(r.train_seconds) << '\n';
  out << "eval_seconds " << real_text(r.eval_seconds) << '\n';
  out << "checkpoint" << (r.checkpoint.empty() ? "" : " " + r.checkpoint) << '\n';
  for (const auto& [k, v] : train::run_config_entries(r.config)) out << "config " << k << ' ' << v << '\n';
  for (const auto& e : r.epochs) {
    out << "epoch " << e.epoch << ' ' << real_text(e.learning_rate) << ' ' << real_text(e.loss) << ' '
        << real_text(e.accuracy) << ' ' << real_text(e.seconds) << '\n';
  }
  out << "classes";
  for (const auto& n : r.class_names) out << ' ' << n;
  out << '\n';
  out << "confusion " << m.num_classes() << '\n';
  for (std::size_t g = 0; g < m.num_classes(); ++g) {
    for (std::size_t p = 0; p < m.num_classes(); ++p) out << (p ? " " : "") << m.count(g, p);
    out << '\n';
  }
  out << "end\n";
}

void write_reports(std::span<const RunReport> reports, std::ostream& out, const std::string& title) {
  out << "# ps2report v1\n";
  if (!title.empty()) out << "# " << title << '\n';
  out << "# OA and mIoU are fractions with four decimals (published tables use percentages, two decimals).\n";
  out << summary_table(reports) << '\n';
  for (const auto& r : reports) {
    write_report(r, out);
    out << '\n';
  }
}

void write_reports(std::span<const RunReport> reports, const std::filesystem::path& path, const std::string& title) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  write_reports(reports, out, title);
}

std::vector<RunReport> read_reports(std::istream& in) {
  std::vector<RunReport> out;
  std::string text;
  std::size_t line = 0;
  RunReport* cur = nullptr;
  std::string config_text;
  std::size_t confusion_rows = 0, confusion_seen = 0;

  while (std::getline(in, text)) {
    ++line;
    if (text.empty() || text[0] == '#' || text[0] == '|') continue;
    const auto space = text.find(' ');
    const std::string key = text.substr(0, space);
    const std::string rest = space == std::string::npos ? std::string() : text.substr(space + 1);
    if (cur && confusion_seen < confusion_rows) {
      const auto cells = split(text);
      if (cells.size() != confusion_rows) throw ParseError(line, "confusion row needs " + std::to_string(confusion_rows) + " counts");
      for (std::size_t p = 0; p < cells.size(); ++p) cur->metrics.add_count(confusion_seen, p, parse_uint(cells[p], line));
      ++confusion_seen;
      continue;
    }
    if (key == "report") {
      if (cur) throw ParseError(line, "report section opened before 'end'");
      out.emplace_back();
      cur = &out.back();
      cur->label = rest;
      config_text.clear();
      confusion_rows = confusion_seen = 0;
      continue;
    }
    if (!cur) throw ParseError(line, "expected 'report', got '" + key + "'");
    if (key == "seed") cur->seed = parse_uint(rest, line);
    else if (key == "parameters") cur->parameters = parse_uint(rest, line);
    else if (key == "train_seconds") cur->train_seconds = parse_real(rest, line);
    else if (key == "eval_seconds") cur->eval_seconds = parse_real(rest, line);
    else if (key == "checkpoint") cur->checkpoint = rest;
    else if (key == "config") {
      const auto sp = rest.find(' ');
      if (sp == std::string::npos) throw ParseError(line, "config line needs a key and a value");
      config_text += rest.substr(0, sp) + " = " + rest.substr(sp + 1) + "\n";
    } else if (key == "epoch") {
      const auto f = split(rest);
      if (f.size() != 5) throw ParseError(line, "epoch line needs 5 fields");
      cur->epochs.push_back({parse_uint(f[0], line), parse_real(f[1], line), parse_real(f[2], line),
                             parse_real(f[3], line), parse_real(f[4], line)});
    } else if (key == "classes") {
      cur->class_names = split(rest);
    } else if (key == "confusion") {
      confusion_rows = parse_uint(rest, line);
      confusion_seen = 0;
      cur->metrics = Metrics(confusion_rows);
    } else if (key == "end") {
      std::istringstream cfg(config_text);
      try {
        cur->config = train::parse_run_config(cfg);
      } catch (const ParseError& e) {
        throw ParseError(line, std::string("bad config in report: ") + e.what());
      }
      cur = nullptr;
    } else {
      throw ParseError(line, "unknown report key '" + key + "'");
    }
  }
  if (cur) throw ParseError(line, "report section not closed with 'end'");
  return out;
}

std::vector<RunReport> read_reports(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open report '" + path.string() + "'");
  return read_reports(in);
}

}  // namespace ps2::eval
