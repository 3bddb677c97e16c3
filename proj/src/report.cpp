#include "mkwm/report.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

namespace mkwm {

namespace {

std::string fixed6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                    "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};

struct Series {
  std::string name;
  std::vector<std::pair<double, double>> points;
};

// Minimal line chart: y in [0, 1], x linear or log10.
std::string line_chart(const std::string& title, const std::string& xlabel,
                       const std::vector<Series>& series, bool log_x) {
  constexpr double W = 560, H = 360, L = 60, R = 150, T = 40, B = 50;
  double xmin = INFINITY, xmax = -INFINITY;
  for (const auto& s : series) {
    for (const auto& [x, y] : s.points) {
      const double xv = log_x ? std::log10(x) : x;
      xmin = std::min(xmin, xv);
      xmax = std::max(xmax, xv);
    }
  }
  if (!(xmax > xmin)) {
    xmin -= 1.0;
    xmax += 1.0;
  }
  const double pw = W - L - R, ph = H - T - B;
  auto px = [&](double x) { return L + ((log_x ? std::log10(x) : x) - xmin) / (xmax - xmin) * pw; };
  auto py = [&](double y) { return T + (1.0 - y) * ph; };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << title
    << "</text>\n";
  for (int i = 0; i <= 4; ++i) {
    const double y = i / 4.0;
    o << "<line x1=\"" << L << "\" x2=\"" << L + pw << "\" y1=\"" << num(py(y)) << "\" y2=\""
      << num(py(y)) << "\" stroke=\"#ddd\"/>\n";
    o << "<text x=\"" << L - 6 << "\" y=\"" << num(py(y) + 4) << "\" text-anchor=\"end\">"
      << num(y) << "</text>\n";
  }
  std::map<double, bool> ticks;
  for (const auto& s : series) {
    for (const auto& p : s.points) ticks[p.first] = true;
  }
  for (const auto& [x, _] : ticks) {
    char label[32];
    std::snprintf(label, sizeof(label), "%g", x);
    o << "<text x=\"" << num(px(x)) << "\" y=\"" << T + ph + 18 << "\" text-anchor=\"middle\">"
      << label << "</text>\n";
  }
  o << "<text x=\"" << L + pw / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\">" << xlabel
    << "</text>\n";
  o << "<text transform=\"translate(16," << T + ph / 2
    << ") rotate(-90)\" text-anchor=\"middle\">forgery success</text>\n";
  o << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << pw << "\" height=\"" << ph
    << "\" fill=\"none\" stroke=\"#333\"/>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const char* color = kPalette[i % std::size(kPalette)];
    o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (const auto& [x, y] : series[i].points) o << num(px(x)) << "," << num(py(y)) << " ";
    o << "\"/>\n";
    for (const auto& [x, y] : series[i].points) {
      o << "<circle cx=\"" << num(px(x)) << "\" cy=\"" << num(py(y)) << "\" r=\"3\" fill=\""
        << color << "\"/>\n";
    }
    const double ly = T + 14 + 18.0 * static_cast<double>(i);
    o << "<line x1=\"" << L + pw + 12 << "\" x2=\"" << L + pw + 32 << "\" y1=\"" << ly
      << "\" y2=\"" << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    o << "<text x=\"" << L + pw + 38 << "\" y=\"" << ly + 4 << "\">" << series[i].name
      << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

}  // namespace

void write_results_csv(std::ostream& out, const std::vector<GameResult>& results) {
  out << kResultsHeader << '\n';
  for (const auto& r : results) {
    out << r.cell.variant << ',' << r.cell.r << ',' << r.cell.N << ',' << r.attacker << ','
        << fixed6(r.forgery_success) << ',' << fixed6(r.ci.lo) << ',' << fixed6(r.ci.hi) << ','
        << fixed6(r.fnr) << ',' << fixed6(r.fpr_fw) << ',' << r.seed_count() << '\n';
  }
}

Json results_manifest(const ExperimentConfig& cfg, const std::vector<GameResult>& results,
                      const std::string& started_at, double elapsed_seconds) {
  Json m;
  m["config"] = experiment_to_json(cfg);
  m["config_hash"] = hex64(config_hash(cfg));
  m["started_at"] = started_at;
  m["elapsed_seconds"] = elapsed_seconds;
  m["ci_method"] = cfg.ci == CiMethod::Normal ? "normal" : "wilson";
  Json cells = Json::array();
  for (const auto& r : results) {
    Json c;
    c["variant"] = r.cell.variant;
    c["r"] = r.cell.r;
    c["N"] = r.cell.N;
    c["attacker"] = r.attacker;
    c["trials"] = r.trials;
    c["genuine"] = r.genuine;
    c["forged"] = r.forged;
    c["unwatermarked"] = r.unwatermarked;
    c["forgery_success"] = r.forgery_success;
    c["ci"] = {r.ci.lo, r.ci.hi};
    c["fnr"] = r.fnr;
    c["fnr_trials"] = r.fnr_trials;
    c["fpr_fw"] = r.fpr_fw;
    c["null_trials"] = r.null_trials;
    Json seeds = Json::array();
    for (const auto& s : r.per_seed) {
      Json o;
      o["seed"] = s.seed;
      o["genuine"] = s.genuine;
      o["forged"] = s.forged;
      o["unwatermarked"] = s.unwatermarked;
      o["provider_queries"] = s.provider_queries;
      o["strength"] = s.strength;
      o["tau"] = s.tau;
      if (s.cluster_accuracy) o["cluster_accuracy"] = *s.cluster_accuracy;
      seeds.push_back(o);
    }
    c["per_seed"] = seeds;
    cells.push_back(c);
  }
  m["cells"] = cells;
  return m;
}

std::string svg_success_vs_r(const std::vector<GameResult>& results) {
  std::size_t n_max = 0;
  for (const auto& r : results) n_max = std::max(n_max, r.cell.N);
  std::vector<Series> series;
  for (const auto& r : results) {
    if (r.cell.N != n_max) continue;
    auto it = std::find_if(series.begin(), series.end(),
                           [&](const Series& s) { return s.name == r.cell.variant; });
    if (it == series.end()) {
      series.push_back({r.cell.variant, {}});
      it = series.end() - 1;
    }
    it->points.emplace_back(static_cast<double>(r.cell.r), r.forgery_success);
  }
  return line_chart("Forgery success vs number of keys (N = " + std::to_string(n_max) + ")",
                    "keys r", series, false);
}

std::string svg_success_vs_n(const std::vector<GameResult>& results) {
  std::vector<Series> series;
  for (const auto& r : results) {
    const std::string name = r.cell.variant + " r=" + std::to_string(r.cell.r);
    auto it = std::find_if(series.begin(), series.end(),
                           [&](const Series& s) { return s.name == name; });
    if (it == series.end()) {
      series.push_back({name, {}});
      it = series.end() - 1;
    }
    it->points.emplace_back(static_cast<double>(std::max<std::size_t>(r.cell.N, 1)),
                            r.forgery_success);
  }
  return line_chart("Forgery success vs attacker samples", "samples N", series, true);
}

std::vector<std::filesystem::path> write_report(const std::filesystem::path& dir,
                                                const ExperimentConfig& cfg,
                                                const std::vector<GameResult>& results,
                                                const std::string& started_at,
                                                double elapsed_seconds, bool svg) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  auto emit = [&](const std::string& name, const std::string& body) {
    const auto path = dir / name;
    std::ofstream f(path, std::ios::binary);
    if (!f) throw InputError("cannot write '" + path.string() + "'");
    f << body;
    if (!f) throw InputError("failed writing '" + path.string() + "'");
    written.push_back(path);
  };
  std::ostringstream csv;
  write_results_csv(csv, results);
  emit("results.csv", csv.str());
  emit("manifest.json", results_manifest(cfg, results, started_at, elapsed_seconds).dump(2) + "\n");
  if (svg) {
    emit("success_vs_r.svg", svg_success_vs_r(results));
    emit("success_vs_n.svg", svg_success_vs_n(results));
  }
  return written;
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace mkwm
