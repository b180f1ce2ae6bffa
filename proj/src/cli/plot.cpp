#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "daml/cli.hpp"

namespace daml::cli {

namespace {

constexpr double kWidth = 640, kHeight = 400;
constexpr double kLeft = 70, kRight = 20, kTop = 40, kBottom = 60;

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string coord(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string header(const std::string& title) {
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
    << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<text x=\"" << kWidth / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">" << escape(title)
    << "</text>\n";
  return s.str();
}

// Axes plus `ticks`+1 horizontal grid lines labelled from lo to hi.
std::string axes(double lo, double hi, int ticks) {
  std::ostringstream s;
  const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;
  for (int i = 0; i <= ticks; ++i) {
    const double y = y0 + (y1 - y0) * i / ticks;
    s << "<line x1=\"" << coord(x0) << "\" y1=\"" << coord(y) << "\" x2=\"" << coord(x1) << "\" y2=\""
      << coord(y) << "\" stroke=\"#ddd\"/>\n"
      << "<text x=\"" << coord(x0 - 6) << "\" y=\"" << coord(y + 4) << "\" text-anchor=\"end\">"
      << num(lo + (hi - lo) * i / ticks) << "</text>\n";
  }
  s << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x1 << "\" y2=\"" << y0
    << "\" stroke=\"black\"/>\n"
    << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x0 << "\" y2=\"" << y1
    << "\" stroke=\"black\"/>\n";
  return s.str();
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  for (std::string cell; std::getline(ss, cell, ',');) out.push_back(cell);
  return out;
}

std::vector<std::pair<double, double>> read_loss_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path + ": missing header");
  const auto cols = split_csv(line);
  const auto find = [&](const std::string& name) {
    const auto it = std::find(cols.begin(), cols.end(), name);
    if (it == cols.end()) throw std::runtime_error(path + ": missing column '" + name + "'");
    return static_cast<std::size_t>(it - cols.begin());
  };
  const std::size_t ic = find("iteration"), lc = find("outer_loss");
  std::vector<std::pair<double, double>> points;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != cols.size()) throw std::runtime_error(path + ": malformed row '" + line + "'");
    points.emplace_back(std::stod(f[ic]), std::stod(f[lc]));
  }
  return points;
}

struct ReportBar {
  std::string label;
  double rate;
};

std::vector<ReportBar> read_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path + ": not valid JSON: " + e.what());
  }
  if (!j.contains("method") || !j.contains("variants") || !j["variants"].is_array()) {
    throw std::runtime_error(path + ": missing 'method' or 'variants'");
  }
  std::vector<ReportBar> out;
  const auto method = j["method"].get<std::string>();
  for (const auto& v : j["variants"]) {
    if (!v.contains("variant") || !v.contains("success_rate")) {
      throw std::runtime_error(path + ": variant entry missing 'variant' or 'success_rate'");
    }
    const auto variant = v["variant"].get<std::string>();
    const bool plain = variant == "adapted" || variant == method;
    out.push_back({plain ? method : method + " (" + variant + ")", v["success_rate"].get<double>()});
  }
  return out;
}

}  // namespace

std::string loss_curve_svg(const std::string& title, const std::vector<std::pair<double, double>>& points) {
  std::ostringstream s;
  s << header(title);
  double xlo = 0, xhi = 1, ylo = 0, yhi = 1;
  if (!points.empty()) {
    xlo = xhi = points.front().first;
    ylo = yhi = points.front().second;
    for (const auto& [x, y] : points) {
      xlo = std::min(xlo, x);
      xhi = std::max(xhi, x);
      ylo = std::min(ylo, y);
      yhi = std::max(yhi, y);
    }
    if (xhi == xlo) xhi = xlo + 1;
    if (yhi == ylo) yhi = ylo + 1;
  }
  s << axes(ylo, yhi, 4);
  const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;
  s << "<text x=\"" << coord(x0) << "\" y=\"" << coord(y0 + 18) << "\" text-anchor=\"middle\">" << num(xlo)
    << "</text>\n<text x=\"" << coord(x1) << "\" y=\"" << coord(y0 + 18) << "\" text-anchor=\"middle\">"
    << num(xhi) << "</text>\n<text x=\"" << coord((x0 + x1) / 2) << "\" y=\"" << coord(y0 + 40)
    << "\" text-anchor=\"middle\">iteration</text>\n";
  if (!points.empty()) {
    s << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < points.size(); ++i) {
      const double px = x0 + (points[i].first - xlo) / (xhi - xlo) * (x1 - x0);
      const double py = y0 + (points[i].second - ylo) / (yhi - ylo) * (y1 - y0);
      s << (i ? " " : "") << coord(px) << ',' << coord(py);
    }
    s << "\"/>\n";
  }
  s << "</svg>\n";
  return s.str();
}

std::string bar_chart_svg(const std::string& title, const std::vector<std::pair<std::string, double>>& bars) {
  std::ostringstream s;
  s << header(title) << axes(0.0, 1.0, 4);
  const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;
  const double slot = bars.empty() ? 0.0 : (x1 - x0) / bars.size();
  for (std::size_t i = 0; i < bars.size(); ++i) {
    const double v = std::clamp(bars[i].second, 0.0, 1.0);
    const double left = x0 + slot * (i + 0.15), w = slot * 0.7, top = y0 + v * (y1 - y0);
    s << "<rect x=\"" << coord(left) << "\" y=\"" << coord(top) << "\" width=\"" << coord(w)
      << "\" height=\"" << coord(y0 - top) << "\" fill=\"#4c72b0\"/>\n"
      << "<text x=\"" << coord(left + w / 2) << "\" y=\"" << coord(top - 5) << "\" text-anchor=\"middle\">"
      << num(100.0 * bars[i].second) << "%</text>\n"
      << "<text x=\"" << coord(left + w / 2) << "\" y=\"" << coord(y0 + 18) << "\" text-anchor=\"middle\">"
      << escape(bars[i].first) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

void cmd_plot(const PlotArgs& args, std::ostream& log) {
  if (args.inputs.empty()) throw UsageError("plot needs at least one input");
  namespace fs = std::filesystem;
  fs::create_directories(args.out_dir);

  std::ostringstream summary;
  summary << "source,kind,label,value\n";
  std::vector<std::pair<std::string, double>> bars;
  for (const auto& path : args.inputs) {
    const auto stem = fs::path(path).stem().string();
    if (fs::path(path).extension() == ".json") {
      for (const auto& b : read_report(path)) {
        bars.emplace_back(b.label, b.rate);
        summary << stem << ",success_rate," << b.label << ',' << num(b.rate) << '\n';
      }
      continue;
    }
    const auto points = read_loss_log(path);
    const auto out = (fs::path(args.out_dir) / (stem + ".loss.svg")).string();
    std::ofstream f(out, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open '" + out + "' for writing");
    f << loss_curve_svg(stem + " outer loss", points);
    summary << stem << ",final_outer_loss," << stem << ','
            << (points.empty() ? std::string("nan") : num(points.back().second)) << '\n';
    log << "wrote " << out << '\n';
  }
  if (!bars.empty()) {
    const auto out = (fs::path(args.out_dir) / "success.svg").string();
    std::ofstream f(out, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open '" + out + "' for writing");
    f << bar_chart_svg("one-shot success rate", bars);
    log << "wrote " << out << '\n';
  }
  const auto out = (fs::path(args.out_dir) / "summary.csv").string();
  std::ofstream f(out, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + out + "' for writing");
  f << summary.str();
  log << "wrote " << out << '\n';
}

}  // namespace daml::cli
