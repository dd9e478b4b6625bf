#pragma once

// Renders run CSVs into SVG line plots and a markdown summary. Works only
// from the files on disk; no model is loaded.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace sgvlp {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const {
    auto it = std::find(header.begin(), header.end(), name);
    return it == header.end() ? -1 : static_cast<int>(it - header.begin());
  }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  CsvTable t;
  std::string line;
  if (std::getline(in, line)) t.header = split_csv_line(line);
  while (std::getline(in, line)) {
    if (!line.empty()) t.rows.push_back(split_csv_line(line));
  }
  return t;
}

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += ch;
    }
  }
  return out;
}

/// Line plot of every numeric column against the first column.
inline std::string svg_line_plot(const CsvTable& t, const std::string& title) {
  constexpr double W = 640, H = 400, L = 60, R = 150, Tm = 40, B = 40;
  static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                 "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  std::vector<double> xs;
  std::vector<std::vector<double>> ys(t.header.size() > 1 ? t.header.size() - 1 : 0);
  for (const auto& r : t.rows) {
    xs.push_back(std::stod(r.at(0)));
    for (std::size_t c = 1; c < t.header.size(); ++c) ys[c - 1].push_back(c < r.size() && !r[c].empty() ? std::stod(r[c]) : NAN);
  }
  double xmin = xs.empty() ? 0 : *std::min_element(xs.begin(), xs.end());
  double xmax = xs.empty() ? 1 : *std::max_element(xs.begin(), xs.end());
  double ymin = INFINITY, ymax = -INFINITY;
  for (const auto& s : ys) {
    for (double v : s) {
      if (std::isfinite(v)) {
        ymin = std::min(ymin, v);
        ymax = std::max(ymax, v);
      }
    }
  }
  if (!std::isfinite(ymin)) ymin = 0, ymax = 1;
  if (ymax == ymin) ymax = ymin + 1;
  if (xmax == xmin) xmax = xmin + 1;
  auto px = [&](double x) { return L + (x - xmin) / (xmax - xmin) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - ymin) / (ymax - ymin) * (H - Tm - B); };
  std::ostringstream s;
  s << std::fixed << std::setprecision(2);
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << xml_escape(title) << "</text>\n";
  s << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << L << "\" y1=\"" << Tm << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  s << "<text x=\"" << L - 5 << "\" y=\"" << py(ymax) + 4 << "\" text-anchor=\"end\" font-size=\"10\">" << ymax << "</text>\n";
  s << "<text x=\"" << L - 5 << "\" y=\"" << py(ymin) + 4 << "\" text-anchor=\"end\" font-size=\"10\">" << ymin << "</text>\n";
  s << "<text x=\"" << px(xmin) << "\" y=\"" << H - B + 15 << "\" text-anchor=\"middle\" font-size=\"10\">" << xmin << "</text>\n";
  s << "<text x=\"" << px(xmax) << "\" y=\"" << H - B + 15 << "\" text-anchor=\"middle\" font-size=\"10\">" << xmax << "</text>\n";
  s << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 8 << "\" text-anchor=\"middle\" font-size=\"11\">"
    << xml_escape(t.header.empty() ? "" : t.header[0]) << "</text>\n";
  for (std::size_t c = 0; c < ys.size(); ++c) {
    const char* color = colors[c % 10];
    s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < xs.size(); ++i) {
      if (std::isfinite(ys[c][i])) s << px(xs[i]) << ',' << py(ys[c][i]) << ' ';
    }
    s << "\"/>\n";
    const double ly = Tm + 14.0 * static_cast<double>(c);
    s << "<line x1=\"" << W - R + 10 << "\" y1=\"" << ly << "\" x2=\"" << W - R + 30 << "\" y2=\"" << ly
      << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    s << "<text x=\"" << W - R + 35 << "\" y=\"" << ly + 4 << "\" font-size=\"10\">" << xml_escape(t.header[c + 1])
      << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

inline std::string markdown_table(const CsvTable& t) {
  std::ostringstream s;
  s << '|';
  for (const auto& h : t.header) s << ' ' << h << " |";
  s << "\n|";
  for (std::size_t i = 0; i < t.header.size(); ++i) s << "---|";
  s << '\n';
  for (const auto& r : t.rows) {
    s << '|';
    for (const auto& c : r) s << ' ' << c << " |";
    s << '\n';
  }
  return s.str();
}

/// Scans `runs_dir` recursively. Every *loss.csv becomes an SVG plot; every
/// metrics.csv and ablation.csv becomes a table in report.md. Returns the
/// number of files rendered.
inline int render_report(const std::string& runs_dir, const std::string& out_dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(runs_dir)) throw std::runtime_error("runs directory not found: " + runs_dir);
  fs::create_directories(out_dir);
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(runs_dir)) {
    if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::ostringstream md;
  md << "# Run report\n\nSource: `" << runs_dir << "`\n";
  int rendered = 0;
  for (const auto& f : files) {
    const auto rel = fs::relative(f, runs_dir).string();
    const auto name = f.filename().string();
    const auto table = read_csv(f.string());
    if (name.size() >= 8 && name.compare(name.size() - 8, 8, "loss.csv") == 0) {
      std::string svg_name = rel;
      std::replace(svg_name.begin(), svg_name.end(), '/', '_');
      svg_name = svg_name.substr(0, svg_name.size() - 4) + ".svg";
      std::ofstream(fs::path(out_dir) / svg_name) << svg_line_plot(table, rel);
      md << "\n## " << rel << "\n\n![" << rel << "](" << svg_name << ")\n";
      ++rendered;
    } else if (name == "metrics.csv" || name == "ablation.csv") {
      md << "\n## " << rel << "\n\n" << markdown_table(table);
      ++rendered;
    }
  }
  std::ofstream(fs::path(out_dir) / "report.md") << md.str();
  return rendered;
}

}  // namespace sgvlp
