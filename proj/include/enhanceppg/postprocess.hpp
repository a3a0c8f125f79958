#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "error.hpp"

namespace enhanceppg {

/// One BPM estimate per 2 s window step.
struct HRSeries {
    std::string subject_id;
    std::vector<double> predictions;
    std::optional<std::vector<double>> labels;
};

/// Sequential band clipping: once `history` outputs exist, a prediction more
/// than tol * m away from the mean m of the last `history` outputs is clamped
/// to m * (1 +/- tol). The history holds clipped outputs.
inline HRSeries clip_postprocess(const HRSeries& series, std::size_t history = 10, double tol = 0.10) {
    if (history < 1) throw ArgumentError("clip_postprocess: history must be >= 1");
    if (!(tol > 0.0 && tol < 1.0)) throw ArgumentError("clip_postprocess: tolerance must be in (0, 1)");
    HRSeries out = series;
    auto& y = out.predictions;
    for (std::size_t i = history; i < y.size(); ++i) {
        // Summed afresh each step (no running total) so a second pass sees identical means.
        double sum = 0.0;
        for (std::size_t j = i - history; j < i; ++j) sum += y[j];
        const double m = sum / static_cast<double>(history);
        const double band = tol * std::abs(m);
        const double p = series.predictions[i];
        if (std::abs(p - m) > band) y[i] = p > m ? m + band : m - band;
    }
    return out;
}

inline double mae(std::span<const double> pred, std::span<const double> truth) {
    if (pred.size() != truth.size()) throw ArgumentError("mae: length mismatch");
    if (pred.empty()) throw ArgumentError("mae: empty input");
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(pred[i] - truth[i]);
    return s / static_cast<double>(pred.size());
}

struct ModelRow {
    std::string name;
    std::vector<std::pair<std::string, double>> per_subject;  // ordered
    double mean = 0.0;
};

struct MetricsReport {
    std::vector<std::pair<std::string, double>> per_subject_mae;  // ordered by subject
    double mean_mae = 0.0;
    std::vector<ModelRow> baselines;
};

inline double mean_of(const std::vector<std::pair<std::string, double>>& rows) {
    if (rows.empty()) throw ArgumentError("mean over zero subjects");
    double s = 0.0;
    for (const auto& [_, v] : rows) s += v;
    return s / static_cast<double>(rows.size());
}

/// "S2" < "S10": compares the trailing integer when both ids end in digits.
inline bool subject_less(const std::string& a, const std::string& b) {
    auto split = [](const std::string& s) {
        std::size_t i = s.size();
        while (i > 0 && std::isdigit(static_cast<unsigned char>(s[i - 1]))) --i;
        return std::pair{s.substr(0, i), i < s.size() ? std::stoll(s.substr(i)) : -1LL};
    };
    const auto [pa, na] = split(a);
    const auto [pb, nb] = split(b);
    if (pa != pb || na < 0 || nb < 0) return a < b;
    return na < nb;
}

inline MetricsReport aggregate_report(const std::map<std::string, double>& per_subject,
                                      std::vector<ModelRow> baselines = {}) {
    if (per_subject.empty()) throw ArgumentError("aggregate_report: no subjects");
    MetricsReport r;
    r.per_subject_mae.assign(per_subject.begin(), per_subject.end());
    std::sort(r.per_subject_mae.begin(), r.per_subject_mae.end(),
              [](const auto& x, const auto& y) { return subject_less(x.first, y.first); });
    r.mean_mae = mean_of(r.per_subject_mae);
    for (auto& b : baselines) b.mean = mean_of(b.per_subject);
    r.baselines = std::move(baselines);
    return r;
}

inline std::string format2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

/// Comma-delimited table: one row per model, subjects as columns, then Mean.
/// Baseline rows first, the evaluated model ("ours") last.
inline std::string render_table(const MetricsReport& r, const std::string& model_name = "EnhancePPG") {
    std::ostringstream os;
    os << "Model";
    for (const auto& [s, _] : r.per_subject_mae) os << ',' << s;
    os << ",Mean\n";
    auto row = [&](const std::string& name, const std::vector<std::pair<std::string, double>>& vals, double mean) {
        os << name;
        for (const auto& [s, _] : r.per_subject_mae) {
            auto it = std::find_if(vals.begin(), vals.end(), [&](const auto& p) { return p.first == s; });
            os << ',' << (it == vals.end() ? std::string("-") : format2(it->second));
        }
        os << ',' << format2(mean) << '\n';
    };
    for (const auto& b : r.baselines) row(b.name, b.per_subject, b.mean);
    row(model_name, r.per_subject_mae, r.mean_mae);
    return os.str();
}

/// Bar (mean) + dot (per subject) chart, one group per model, as SVG.
inline std::string render_svg(const MetricsReport& r, const std::string& model_name = "EnhancePPG") {
    std::vector<ModelRow> rows = r.baselines;
    rows.push_back({model_name, r.per_subject_mae, r.mean_mae});
    double vmax = 1.0;
    for (const auto& m : rows)
        for (const auto& [_, v] : m.per_subject) vmax = std::max(vmax, v);
    vmax = std::ceil(vmax + 0.5);
    const double width = 120.0 + 110.0 * static_cast<double>(rows.size()), height = 360.0;
    const double top = 30.0, bottom = 300.0, left = 60.0;
    auto ypos = [&](double v) { return bottom - (bottom - top) * v / vmax; };
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
       << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    os << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << bottom
       << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << left << "\" y1=\"" << bottom << "\" x2=\"" << width - 20 << "\" y2=\"" << bottom
       << "\" stroke=\"black\"/>\n";
    for (int t = 0; t <= static_cast<int>(vmax); ++t) {
        os << "<text x=\"" << left - 8 << "\" y=\"" << ypos(t) + 4 << "\" text-anchor=\"end\">" << t << "</text>\n";
    }
    os << "<text x=\"14\" y=\"" << (top + bottom) / 2 << "\" transform=\"rotate(-90 14 " << (top + bottom) / 2
       << ")\" text-anchor=\"middle\">MAE [BPM]</text>\n";
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const double cx = left + 70.0 + 110.0 * static_cast<double>(i);
        const auto& m = rows[i];
        os << "<rect x=\"" << cx - 35 << "\" y=\"" << ypos(m.mean) << "\" width=\"70\" height=\""
           << bottom - ypos(m.mean) << "\" fill=\"" << (i + 1 == rows.size() ? "#3b7dd8" : "#b0b0b0")
           << "\"/>\n";
        for (std::size_t k = 0; k < m.per_subject.size(); ++k) {
            const double jitter = (static_cast<double>(k % 5) - 2.0) * 6.0;
            os << "<circle cx=\"" << cx + jitter << "\" cy=\"" << ypos(m.per_subject[k].second)
               << "\" r=\"3\" fill=\"black\"/>\n";
        }
        os << "<text x=\"" << cx << "\" y=\"" << ypos(m.mean) - 6 << "\" text-anchor=\"middle\">"
           << format2(m.mean) << "</text>\n";
        os << "<text x=\"" << cx << "\" y=\"" << bottom + 18 << "\" text-anchor=\"middle\">" << m.name
           << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

/// Reads comparison rows from a CSV whose header is "Model,<subject>,...[,Mean]".
/// A trailing Mean column is ignored (recomputed).
inline std::vector<ModelRow> parse_baselines(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::vector<std::string> header;
    std::vector<ModelRow> rows;
    auto split = [](const std::string& l) {
        std::vector<std::string> parts;
        std::stringstream ss(l);
        for (std::string p; std::getline(ss, p, ',');) {
            p.erase(0, p.find_first_not_of(" \t\r"));
            p.erase(p.find_last_not_of(" \t\r") + 1);
            parts.push_back(p);
        }
        return parts;
    };
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        auto parts = split(line);
        if (header.empty()) {
            header = std::move(parts);
            continue;
        }
        if (parts.size() != header.size())
            throw FormatError("baselines: row '" + parts.front() + "' has " + std::to_string(parts.size()) +
                              " fields, header has " + std::to_string(header.size()));
        ModelRow row{parts[0], {}, 0.0};
        for (std::size_t i = 1; i < parts.size(); ++i) {
            if (header[i] == "Mean" || parts[i] == "-" || parts[i].empty()) continue;
            try {
                row.per_subject.emplace_back(header[i], std::stod(parts[i]));
            } catch (const std::exception&) {
                throw FormatError("baselines: non-numeric value '" + parts[i] + "'");
            }
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

inline std::vector<ModelRow> read_baselines(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot open baselines file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_baselines(ss.str());
}

} // namespace enhanceppg
