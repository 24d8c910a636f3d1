#include "cotune/report.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace cotune {

namespace fs = std::filesystem;

std::string record_csv_row(const BalanceRecord& r) {
    std::ostringstream o;
    o << r.step << ',' << format_double(r.loss) << ',' << format_double(r.kappa) << ','
      << format_double(r.kappa_ma) << ',' << format_double(r.d_t) << ',' << format_double(r.d_s)
      << ',' << format_double(r.d_joint) << ',' << format_double(r.h_s) << ','
      << format_double(r.h_t) << ',' << format_double(r.bound_t) << ','
      << format_double(r.bound_s) << ',' << format_double(r.gnorm_s) << ','
      << format_double(r.gnorm_t) << ',' << format_double(r.lr_s) << ','
      << format_double(r.lr_t) << ',' << format_double(r.reg_ds) << ','
      << format_double(r.reg_dt) << ',';
    if (r.has_eval) o << format_double(r.eval_acc);
    return o.str();
}

BalanceRecord parse_csv_row(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) cells.push_back(cell);
    if (line.ends_with(',')) cells.push_back("");
    if (cells.size() != 18)
        throw IoError("log: expected 18 columns, got " + std::to_string(cells.size()));
    BalanceRecord r;
    r.step = std::stol(cells[0]);
    r.loss = std::stod(cells[1]);
    r.kappa = std::stod(cells[2]);
    r.kappa_ma = std::stod(cells[3]);
    r.d_t = std::stod(cells[4]);
    r.d_s = std::stod(cells[5]);
    r.d_joint = std::stod(cells[6]);
    r.h_s = std::stod(cells[7]);
    r.h_t = std::stod(cells[8]);
    r.bound_t = std::stod(cells[9]);
    r.bound_s = std::stod(cells[10]);
    r.gnorm_s = std::stod(cells[11]);
    r.gnorm_t = std::stod(cells[12]);
    r.lr_s = std::stod(cells[13]);
    r.lr_t = std::stod(cells[14]);
    r.reg_ds = std::stod(cells[15]);
    r.reg_dt = std::stod(cells[16]);
    if (!cells[17].empty()) {
        r.has_eval = true;
        r.eval_acc = std::stod(cells[17]);
    }
    return r;
}

RunLogWriter::RunLogWriter(const std::string& path) : path_(path) {
    std::ofstream f(path_, std::ios::trunc);
    if (!f) throw IoError("log: cannot open '" + path_ + "' for writing");
    f << kLogSchema << "\n" << kLogHeader << "\n";
}

void RunLogWriter::append(const BalanceRecord& r) {
    std::ofstream f(path_, std::ios::app);
    if (!f) throw IoError("log: cannot append to '" + path_ + "'");
    f << record_csv_row(r) << "\n";
    f.flush();
}

EventLogWriter::EventLogWriter(const std::string& path) : path_(path) {
    std::ofstream f(path_, std::ios::trunc);
    if (!f) throw IoError("events: cannot open '" + path_ + "' for writing");
    f << kEventsSchema << "\n" << "step,kind,detail\n";
}

void EventLogWriter::append(long step, const std::string& kind, const std::string& detail) {
    std::ofstream f(path_, std::ios::app);
    if (!f) throw IoError("events: cannot append to '" + path_ + "'");
    f << step << ',' << kind << ',' << detail << "\n";
    f.flush();
}

std::vector<BalanceRecord> read_run_log(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("log: cannot open '" + path + "'");
    std::string line;
    if (!std::getline(f, line) || line != kLogSchema)
        throw IoError("log: schema mismatch in '" + path + "': expected '" +
                      std::string(kLogSchema) + "', got '" + line + "'");
    if (!std::getline(f, line) || line != kLogHeader)
        throw IoError("log: header mismatch in '" + path + "'");
    std::vector<BalanceRecord> rows;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        rows.push_back(parse_csv_row(line));
    }
    return rows;
}

LoadedRun load_run(const std::string& run_dir) {
    LoadedRun run;
    run.dir = run_dir;
    run.config = load_config((fs::path(run_dir) / "config.cfg").string());
    run.records = read_run_log((fs::path(run_dir) / "log.csv").string());
    return run;
}

// ---------------------------------------------------------------------------
// SVG
// ---------------------------------------------------------------------------

namespace {

constexpr double kWidth = 860, kHeight = 480;
constexpr double kLeft = 72, kRight = 24, kTop = 42, kBottom = 52;

const char* kPalette[] = {"#1f6fb2", "#d1495b", "#3a9e5f", "#8964b0", "#c98a2b", "#4a4a4a"};

struct AxisScale {
    double lo = 0.0, hi = 1.0;
    double to_px(double v, double px_lo, double px_hi) const {
        const double t = hi > lo ? (v - lo) / (hi - lo) : 0.5;
        return px_lo + t * (px_hi - px_lo);
    }
};

AxisScale fit_axis(double lo, double hi) {
    if (!(hi > lo)) {
        const double pad = std::max(std::abs(lo) * 0.1, 1e-9);
        return AxisScale{lo - pad, hi + pad};
    }
    const double pad = (hi - lo) * 0.05;
    return AxisScale{lo - pad, hi + pad};
}

std::string fmt_tick(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4g", v);
    return buf;
}

std::string xml_escape(const std::string& s) {
    std::string out;
    for (char ch : s) {
        switch (ch) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            default: out += ch;
        }
    }
    return out;
}

}  // namespace

void write_svg_chart(const std::string& path, const std::string& title,
                     const std::string& x_label, const std::string& y_label,
                     const std::vector<std::pair<std::string, std::vector<SeriesPoint>>>& series) {
    double xlo = 0, xhi = 1, ylo = 0, yhi = 1;
    bool any = false;
    for (const auto& [name, pts] : series) {
        for (const auto& p : pts) {
            if (!any) {
                xlo = xhi = p.x;
                ylo = yhi = p.y;
                any = true;
            }
            xlo = std::min(xlo, p.x);
            xhi = std::max(xhi, p.x);
            ylo = std::min(ylo, p.y);
            yhi = std::max(yhi, p.y);
        }
    }
    const AxisScale xs = fit_axis(xlo, xhi);
    const AxisScale ys = fit_axis(ylo, yhi);
    const double px0 = kLeft, px1 = kWidth - kRight;
    const double py0 = kHeight - kBottom, py1 = kTop;  // y grows upward

    std::ostringstream o;
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
      << kHeight << "\" viewBox=\"0 0 " << kWidth << " " << kHeight << "\">\n";
    o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    o << "<text x=\"" << kWidth / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"16\">" << xml_escape(title) << "</text>\n";

    // axes
    o << "<line x1=\"" << px0 << "\" y1=\"" << py0 << "\" x2=\"" << px1 << "\" y2=\"" << py0
      << "\" stroke=\"black\"/>\n";
    o << "<line x1=\"" << px0 << "\" y1=\"" << py0 << "\" x2=\"" << px0 << "\" y2=\"" << py1
      << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 5; ++i) {
        const double t = i / 5.0;
        const double xv = xs.lo + t * (xs.hi - xs.lo);
        const double yv = ys.lo + t * (ys.hi - ys.lo);
        const double xp = px0 + t * (px1 - px0);
        const double yp = py0 + t * (py1 - py0);
        o << "<line x1=\"" << xp << "\" y1=\"" << py0 << "\" x2=\"" << xp << "\" y2=\"" << py0 + 5
          << "\" stroke=\"black\"/>\n";
        o << "<text x=\"" << xp << "\" y=\"" << py0 + 20
          << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">"
          << fmt_tick(xv) << "</text>\n";
        o << "<line x1=\"" << px0 - 5 << "\" y1=\"" << yp << "\" x2=\"" << px0 << "\" y2=\"" << yp
          << "\" stroke=\"black\"/>\n";
        o << "<text x=\"" << px0 - 8 << "\" y=\"" << yp + 4
          << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
          << fmt_tick(yv) << "</text>\n";
    }
    o << "<text x=\"" << (px0 + px1) / 2 << "\" y=\"" << kHeight - 12
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">"
      << xml_escape(x_label) << "</text>\n";
    o << "<text x=\"18\" y=\"" << (py0 + py1) / 2
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" "
         "transform=\"rotate(-90 18 " << (py0 + py1) / 2 << ")\">"
      << xml_escape(y_label) << "</text>\n";

    std::size_t color = 0;
    for (const auto& [name, pts] : series) {
        const char* stroke = kPalette[color % 6];
        o << "<polyline fill=\"none\" stroke=\"" << stroke << "\" stroke-width=\"1.4\" points=\"";
        for (const auto& p : pts)
            o << xs.to_px(p.x, px0, px1) << ',' << ys.to_px(p.y, py0, py1) << ' ';
        o << "\"/>\n";
        o << "<text x=\"" << px1 - 6 << "\" y=\"" << py1 + 16 + 16 * static_cast<double>(color)
          << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\" fill=\"" << stroke
          << "\">" << xml_escape(name) << "</text>\n";
        ++color;
    }
    o << "</svg>\n";

    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("svg: cannot open '" + path + "' for writing");
    f << o.str();
}

// ---------------------------------------------------------------------------
// Summary statistics
// ---------------------------------------------------------------------------

double kappa_std(const std::vector<BalanceRecord>& records, long window_start) {
    std::vector<double> window;
    for (const auto& r : records)
        if (r.step >= window_start) window.push_back(r.kappa);
    if (window.size() < 2)
        throw ContractError("kappa_std: fewer than 2 records at or after step " +
                            std::to_string(window_start));
    double mean = 0.0;
    for (double k : window) mean += k;
    mean /= static_cast<double>(window.size());
    double ss = 0.0;
    for (double k : window) ss += (k - mean) * (k - mean);
    return std::sqrt(ss / static_cast<double>(window.size() - 1));
}

namespace {

std::vector<double> smoothed_loss(const std::vector<BalanceRecord>& records, std::size_t smooth) {
    std::vector<double> out(records.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < records.size(); ++i) {
        acc += records[i].loss;
        if (i >= smooth) acc -= records[i - smooth].loss;
        out[i] = acc / static_cast<double>(std::min(i + 1, smooth));
    }
    return out;
}

}  // namespace

std::optional<long> steps_to_threshold(const std::vector<BalanceRecord>& records, double threshold,
                                       std::size_t smooth) {
    const std::vector<double> sm = smoothed_loss(records, smooth);
    for (std::size_t i = 0; i < records.size(); ++i)
        if (sm[i] <= threshold) return records[i].step;
    return std::nullopt;
}

double loss_threshold(const std::vector<const LoadedRun*>& group, std::size_t smooth) {
    if (group.empty()) throw ContractError("loss_threshold: empty group");
    const double l0 = group.front()->records.front().loss;
    double best = l0;
    for (const auto* run : group) {
        const auto sm = smoothed_loss(run->records, smooth);
        for (double v : sm) best = std::min(best, v);
    }
    return l0 - 0.5 * (l0 - best);
}

void emit_report(const std::vector<std::string>& run_dirs, const std::string& out_dir,
                 const ReportOptions& opt) {
    if (run_dirs.empty()) throw ContractError("emit_report: no runs given");
    fs::create_directories(out_dir);

    std::vector<LoadedRun> runs;
    runs.reserve(run_dirs.size());
    for (const auto& dir : run_dirs) runs.push_back(load_run(dir));

    struct SeriesDef {
        const char* name;
        double (*pick)(const BalanceRecord&);
    };
    static const SeriesDef defs[] = {
        {"loss", [](const BalanceRecord& r) { return r.loss; }},
        {"kappa", [](const BalanceRecord& r) { return r.kappa; }},
        {"kappa_ma", [](const BalanceRecord& r) { return r.kappa_ma; }},
        {"HS", [](const BalanceRecord& r) { return r.h_s; }},
        {"HT", [](const BalanceRecord& r) { return r.h_t; }},
        {"gnormS", [](const BalanceRecord& r) { return r.gnorm_s; }},
        {"gnormT", [](const BalanceRecord& r) { return r.gnorm_t; }},
        {"lrS", [](const BalanceRecord& r) { return r.lr_s; }},
        {"lrT", [](const BalanceRecord& r) { return r.lr_t; }},
    };

    for (const auto& run : runs) {
        for (const auto& def : defs) {
            std::vector<SeriesPoint> pts;
            pts.reserve(run.records.size());
            for (const auto& r : run.records)
                pts.push_back(SeriesPoint{static_cast<double>(r.step), def.pick(r)});
            const std::string path =
                (fs::path(out_dir) / (run.config.name + "_" + def.name + ".svg")).string();
            write_svg_chart(path, run.config.name + ": " + def.name, "step", def.name,
                            {{run.config.name, std::move(pts)}});
        }
    }

    // kappa stability table
    {
        std::ofstream f((fs::path(out_dir) / "kappa_std.csv").string(), std::ios::trunc);
        f << "task,method,seed,name,kappa_std\n";
        std::map<std::pair<std::string, std::string>, std::vector<double>> by_method;
        std::vector<const LoadedRun*> sorted;
        for (const auto& r : runs) sorted.push_back(&r);
        std::sort(sorted.begin(), sorted.end(), [](const LoadedRun* a, const LoadedRun* b) {
            return a->config.name < b->config.name;
        });
        for (const auto* run : sorted) {
            const double sd = kappa_std(run->records, opt.kappa_window_start);
            f << run->config.task << ',' << run->config.method_label() << ',' << run->config.seed
              << ',' << run->config.name << ',' << format_double(sd) << "\n";
            by_method[{run->config.task, run->config.method_label()}].push_back(sd);
        }
        for (const auto& [key, vals] : by_method) {
            double mean = 0.0;
            for (double v : vals) mean += v;
            mean /= static_cast<double>(vals.size());
            f << key.first << ',' << key.second << ",mean,," << format_double(mean) << "\n";
        }
    }

    // steps-to-threshold table, grouped per (task, seed)
    {
        std::ofstream f((fs::path(out_dir) / "steps_to_threshold.csv").string(), std::ios::trunc);
        f << "task,seed,method,name,threshold,steps\n";
        std::map<std::pair<std::string, std::uint64_t>, std::vector<const LoadedRun*>> groups;
        for (const auto& r : runs) groups[{r.config.task, r.config.seed}].push_back(&r);
        for (auto& [key, group] : groups) {
            std::sort(group.begin(), group.end(), [](const LoadedRun* a, const LoadedRun* b) {
                return a->config.name < b->config.name;
            });
            const double threshold = loss_threshold(group, opt.loss_smooth);
            for (const auto* run : group) {
                const auto steps = steps_to_threshold(run->records, threshold, opt.loss_smooth);
                f << key.first << ',' << key.second << ',' << run->config.method_label() << ','
                  << run->config.name << ',' << format_double(threshold) << ','
                  << (steps ? std::to_string(*steps) : std::string("")) << "\n";
            }
        }
    }
}

}  // namespace cotune
