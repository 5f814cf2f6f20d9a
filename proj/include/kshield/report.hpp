#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace kshield {

// One (threat model, attack, defense config, budget) -> accuracy record.
struct ExperimentRow {
  std::string experiment_id;
  std::string threat;       // gray | black | white
  std::string attack;       // fgsm | ifgsm | pgd | cw | pgd-pr | pgd-fs
  double epsilon_rel = 0.0;
  int k = 0;
  std::string weighting;    // uw | cbw-e | cbw-d
  std::string combination;  // soft | hard
  int layer = 0;
  uint64_t db_size = 0;
  std::string curation;  // targeted | all
  double overlap = 0.0;
  double clean_accuracy = 0.0;              // undefended, clean inputs
  double attacked_accuracy = 0.0;           // defended, attacked inputs
  double undefended_attacked_accuracy = 0.0;
  uint64_t sample_count = 0;
  uint64_t seed = 0;

  bool operator==(const ExperimentRow&) const = default;
};

inline const std::vector<std::string>& csv_header() {
  static const std::vector<std::string> kHeader = {
      "experiment_id", "threat", "attack", "epsilon_rel", "k", "weighting", "combination", "layer",
      "db_size", "curation", "overlap", "clean_accuracy", "attacked_accuracy",
      "undefended_attacked_accuracy", "sample_count", "seed"};
  return kHeader;
}

namespace detail {

// Shortest round-trip decimal form; reruns produce byte-identical CSVs and
// parsing recovers the exact double.
inline std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw std::runtime_error("format_double failed");
  return std::string(buf, ptr);
}

inline double parse_double(const std::string& s) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw std::runtime_error("bad numeric field '" + s + "'");
  }
  return v;
}

inline std::string check_token(const std::string& s) {
  if (s.find_first_of(",\n\r") != std::string::npos) {
    throw std::invalid_argument("CSV field contains separator characters: '" + s + "'");
  }
  return s;
}

}  // namespace detail

inline std::vector<std::string> row_fields(const ExperimentRow& r) {
  return {detail::check_token(r.experiment_id),
          detail::check_token(r.threat),
          detail::check_token(r.attack),
          detail::format_double(r.epsilon_rel),
          std::to_string(r.k),
          detail::check_token(r.weighting),
          detail::check_token(r.combination),
          std::to_string(r.layer),
          std::to_string(r.db_size),
          detail::check_token(r.curation),
          detail::format_double(r.overlap),
          detail::format_double(r.clean_accuracy),
          detail::format_double(r.attacked_accuracy),
          detail::format_double(r.undefended_attacked_accuracy),
          std::to_string(r.sample_count),
          std::to_string(r.seed)};
}

inline void write_csv(const std::vector<ExperimentRow>& rows, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  const auto& header = csv_header();
  for (size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  out << "\n";
  for (const ExperimentRow& r : rows) {
    const auto fields = row_fields(r);
    for (size_t i = 0; i < fields.size(); ++i) out << (i ? "," : "") << fields[i];
    out << "\n";
  }
  out.close();
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline std::vector<ExperimentRow> read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open for reading: " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path + ": missing header");
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
      if (c == ',') {
        out.push_back(cur);
        cur.clear();
      } else if (c != '\r') {
        cur.push_back(c);
      }
    }
    out.push_back(cur);
    return out;
  };
  {
    const auto got = split(line);
    if (got != csv_header()) throw std::runtime_error(path + ": unexpected CSV header");
  }
  std::vector<ExperimentRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split(line);
    if (f.size() != csv_header().size()) throw std::runtime_error(path + ": wrong field count");
    ExperimentRow r;
    r.experiment_id = f[0];
    r.threat = f[1];
    r.attack = f[2];
    r.epsilon_rel = detail::parse_double(f[3]);
    r.k = static_cast<int>(std::stol(f[4]));
    r.weighting = f[5];
    r.combination = f[6];
    r.layer = static_cast<int>(std::stol(f[7]));
    r.db_size = std::stoull(f[8]);
    r.curation = f[9];
    r.overlap = detail::parse_double(f[10]);
    r.clean_accuracy = detail::parse_double(f[11]);
    r.attacked_accuracy = detail::parse_double(f[12]);
    r.undefended_attacked_accuracy = detail::parse_double(f[13]);
    r.sample_count = std::stoull(f[14]);
    r.seed = std::stoull(f[15]);
    rows.push_back(std::move(r));
  }
  return rows;
}

// Field accessors by name, for chart axes and series grouping.
inline std::string row_field_string(const ExperimentRow& r, const std::string& name) {
  const auto& header = csv_header();
  const auto fields = row_fields(r);
  for (size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return fields[i];
  }
  throw std::invalid_argument("unknown row field '" + name + "'");
}

inline double row_field_numeric(const ExperimentRow& r, const std::string& name) {
  return detail::parse_double(row_field_string(r, name));
}

// Static SVG line chart: one polyline per distinct series value, points in
// row order sorted by x. No scripts, fixed canvas.
inline void plot_svg(const std::vector<ExperimentRow>& rows, const std::string& x_field,
                     const std::string& y_field, const std::string& series_field,
                     const std::string& path) {
  constexpr double kW = 640, kH = 440, kMargin = 60;
  std::vector<std::string> series_order;
  std::map<std::string, std::vector<std::pair<double, double>>> series;
  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  bool first = true;
  for (const ExperimentRow& r : rows) {
    const std::string key = row_field_string(r, series_field);
    const double x = row_field_numeric(r, x_field);
    const double y = row_field_numeric(r, y_field);
    if (series.find(key) == series.end()) series_order.push_back(key);
    series[key].emplace_back(x, y);
    if (first) {
      xmin = xmax = x;
      ymin = ymax = y;
      first = false;
    } else {
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
  }
  if (xmax == xmin) xmax = xmin + 1.0;
  if (ymax == ymin) ymax = ymin + 1.0;
  auto px = [&](double x) { return kMargin + (x - xmin) / (xmax - xmin) * (kW - 2 * kMargin); };
  auto py = [&](double y) { return kH - kMargin - (y - ymin) / (ymax - ymin) * (kH - 2 * kMargin); };

  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                  "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<line x1=\"" << kMargin << "\" y1=\"" << kH - kMargin << "\" x2=\"" << kW - kMargin
      << "\" y2=\"" << kH - kMargin << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << kMargin << "\" y1=\"" << kMargin << "\" x2=\"" << kMargin << "\" y2=\""
      << kH - kMargin << "\" stroke=\"black\"/>\n";
  out << "<text x=\"" << kW / 2 << "\" y=\"" << kH - 16 << "\" text-anchor=\"middle\" font-size=\"13\">"
      << x_field << "</text>\n";
  out << "<text x=\"16\" y=\"" << kH / 2 << "\" font-size=\"13\" transform=\"rotate(-90 16 " << kH / 2
      << ")\" text-anchor=\"middle\">" << y_field << "</text>\n";
  out << "<text x=\"" << kMargin << "\" y=\"" << kH - kMargin + 16 << "\" font-size=\"11\">"
      << detail::format_double(xmin) << "</text>\n";
  out << "<text x=\"" << kW - kMargin << "\" y=\"" << kH - kMargin + 16
      << "\" text-anchor=\"end\" font-size=\"11\">" << detail::format_double(xmax) << "</text>\n";
  out << "<text x=\"" << kMargin - 6 << "\" y=\"" << kH - kMargin << "\" text-anchor=\"end\" font-size=\"11\">"
      << detail::format_double(ymin) << "</text>\n";
  out << "<text x=\"" << kMargin - 6 << "\" y=\"" << kMargin + 4
      << "\" text-anchor=\"end\" font-size=\"11\">" << detail::format_double(ymax) << "</text>\n";
  int color = 0;
  double legend_y = kMargin;
  for (const std::string& key : series_order) {
    auto pts = series[key];
    std::stable_sort(pts.begin(), pts.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    out << "<polyline fill=\"none\" stroke=\"" << kColors[color % 8] << "\" stroke-width=\"2\" points=\"";
    for (const auto& [x, y] : pts) out << px(x) << "," << py(y) << " ";
    out << "\"/>\n";
    out << "<text x=\"" << kW - kMargin + 4 << "\" y=\"" << legend_y << "\" font-size=\"11\" fill=\""
        << kColors[color % 8] << "\">" << key << "</text>\n";
    legend_y += 14;
    ++color;
  }
  out << "</svg>\n";
  out.close();
  if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace kshield
