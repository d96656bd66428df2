#include "phasedeploy/svg.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>
#include <vector>

#include "phasedeploy/error.hpp"

namespace phasedeploy::svg {

namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
constexpr int kPaletteSize = 10;

std::string num(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", x);
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

void require_columns(const csv::Table& t, std::initializer_list<const char*> names) {
  std::string missing;
  for (const char* n : names) {
    if (!t.has_column(n)) missing += (missing.empty() ? "" : ", ") + std::string(n);
  }
  if (!missing.empty()) throw UsageError("plot input is missing column(s): " + missing);
  if (t.rows.empty()) throw UsageError("plot input has no rows");
}

double to_double(const std::string& s, const char* column) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw UsageError(std::string("column ") + column + ": not a number '" + s + "'");
  }
}

}  // namespace

std::string learning_curves(const csv::Table& curves) {
  require_columns(curves, {"method", "seed", "step", "success"});
  const auto cm = curves.column("method"), cs = curves.column("seed"), ct = curves.column("step"),
             cv = curves.column("success");
  std::vector<std::string> methods;
  std::vector<std::pair<std::string, std::string>> keys;
  std::map<std::pair<std::string, std::string>, std::vector<std::pair<double, double>>> series;
  double max_step = 0.0;
  for (const auto& r : curves.rows) {
    const auto key = std::pair{r[cm], r[cs]};
    if (!series.contains(key)) keys.push_back(key);
    if (std::find(methods.begin(), methods.end(), r[cm]) == methods.end()) methods.push_back(r[cm]);
    const double x = to_double(r[ct], "step");
    series[key].emplace_back(x, std::clamp(to_double(r[cv], "success"), 0.0, 1.0));
    max_step = std::max(max_step, x);
  }
  if (max_step <= 0.0) max_step = 1.0;

  const double w = 640, h = 400, left = 50, right = 150, top = 20, bottom = 40;
  const double pw = w - left - right, ph = h - top - bottom;
  auto px = [&](double x) { return left + pw * x / max_step; };
  auto py = [&](double y) { return top + ph * (1.0 - y); };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" viewBox=\"0 0 " << w
     << ' ' << h << "\">\n";
  os << "<rect x=\"0\" y=\"0\" width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n";
  os << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double y = i / 4.0;
    os << "<text x=\"" << num(left - 6) << "\" y=\"" << num(py(y) + 4) << "\" font-size=\"10\" text-anchor=\"end\">"
       << num(y) << "</text>\n";
  }
  os << "<text x=\"" << num(left + pw) << "\" y=\"" << num(h - 10) << "\" font-size=\"10\" text-anchor=\"end\">"
     << num(max_step) << "</text>\n";
  os << "<text x=\"" << num(left) << "\" y=\"" << num(h - 10) << "\" font-size=\"10\">0</text>\n";
  for (const auto& key : keys) {
    auto pts = series[key];
    std::stable_sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    // A lone point still reads as a line.
    if (pts.size() == 1) pts.push_back({max_step, pts[0].second});
    const auto mi = std::find(methods.begin(), methods.end(), key.first) - methods.begin();
    os << "<polyline fill=\"none\" stroke=\"" << kPalette[mi % kPaletteSize]
       << "\" stroke-width=\"1.2\" stroke-opacity=\"0.8\" data-series=\"" << escape(key.first) << '/'
       << escape(key.second) << "\" points=\"";
    for (std::size_t i = 0; i < pts.size(); ++i) {
      os << (i ? " " : "") << num(px(pts[i].first)) << ',' << num(py(pts[i].second));
    }
    os << "\"/>\n";
  }
  for (std::size_t i = 0; i < methods.size(); ++i) {
    const double y = top + 14.0 * static_cast<double>(i) + 10;
    os << "<rect x=\"" << num(w - right + 10) << "\" y=\"" << num(y - 8) << "\" width=\"10\" height=\"10\" fill=\""
       << kPalette[i % kPaletteSize] << "\"/>\n";
    os << "<text x=\"" << num(w - right + 24) << "\" y=\"" << num(y) << "\" font-size=\"10\">" << escape(methods[i])
       << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string verdict_heatmap(const csv::Table& verdicts) {
  require_columns(verdicts, {"checkpoint", "fork_horizon", "modal_winner", "informative"});
  const auto ct = verdicts.column("checkpoint"), cl = verdicts.column("fork_horizon"), cw = verdicts.column("modal_winner"),
             ci = verdicts.column("informative");
  std::set<long long> ts, ls;
  std::set<std::string> winners;
  for (const auto& r : verdicts.rows) {
    ts.insert(static_cast<long long>(to_double(r[ct], "checkpoint")));
    ls.insert(static_cast<long long>(to_double(r[cl], "fork_horizon")));
    winners.insert(r[cw]);
  }
  const std::vector<long long> tv(ts.begin(), ts.end()), lv(ls.begin(), ls.end());
  const std::vector<std::string> wv(winners.begin(), winners.end());
  const double cell = 36, left = 60, top = 20;
  const double w = left + cell * static_cast<double>(tv.size()) + 170;
  const double h = top + cell * static_cast<double>(lv.size()) + 50;

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(w) << "\" height=\"" << num(h)
     << "\" viewBox=\"0 0 " << num(w) << ' ' << num(h) << "\">\n";
  os << "<rect x=\"0\" y=\"0\" width=\"" << num(w) << "\" height=\"" << num(h) << "\" fill=\"white\"/>\n";
  for (const auto& r : verdicts.rows) {
    const auto t = static_cast<long long>(to_double(r[ct], "checkpoint"));
    const auto l = static_cast<long long>(to_double(r[cl], "fork_horizon"));
    const double x = left + cell * static_cast<double>(std::find(tv.begin(), tv.end(), t) - tv.begin());
    const double y = top + cell * static_cast<double>(std::find(lv.begin(), lv.end(), l) - lv.begin());
    const auto wi = std::find(wv.begin(), wv.end(), r[cw]) - wv.begin();
    const bool inf = r[ci] == "true" || r[ci] == "1";
    os << "<rect x=\"" << num(x) << "\" y=\"" << num(y) << "\" width=\"" << num(cell) << "\" height=\"" << num(cell)
       << "\" fill=\"" << kPalette[wi % kPaletteSize] << "\" fill-opacity=\"" << (inf ? "0.90" : "0.25")
       << "\" stroke=\"white\"/>\n";
    if (!inf) {
      os << "<path d=\"M" << num(x + 6) << ',' << num(y + 6) << " L" << num(x + cell - 6) << ',' << num(y + cell - 6)
         << " M" << num(x + cell - 6) << ',' << num(y + 6) << " L" << num(x + 6) << ',' << num(y + cell - 6)
         << "\" stroke=\"#555\" stroke-width=\"1\"/>\n";
    }
  }
  for (std::size_t i = 0; i < tv.size(); ++i) {
    os << "<text x=\"" << num(left + cell * (static_cast<double>(i) + 0.5)) << "\" y=\""
       << num(top + cell * static_cast<double>(lv.size()) + 14) << "\" font-size=\"10\" text-anchor=\"middle\">"
       << tv[i] << "</text>\n";
  }
  for (std::size_t i = 0; i < lv.size(); ++i) {
    os << "<text x=\"" << num(left - 6) << "\" y=\"" << num(top + cell * (static_cast<double>(i) + 0.5) + 4)
       << "\" font-size=\"10\" text-anchor=\"end\">L=" << lv[i] << "</text>\n";
  }
  const double lx = left + cell * static_cast<double>(tv.size()) + 14;
  for (std::size_t i = 0; i < wv.size(); ++i) {
    const double y = top + 14.0 * static_cast<double>(i) + 10;
    os << "<rect x=\"" << num(lx) << "\" y=\"" << num(y - 8) << "\" width=\"10\" height=\"10\" fill=\""
       << kPalette[i % kPaletteSize] << "\"/>\n";
    os << "<text x=\"" << num(lx + 14) << "\" y=\"" << num(y) << "\" font-size=\"10\">" << escape(wv[i])
       << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace phasedeploy::svg
