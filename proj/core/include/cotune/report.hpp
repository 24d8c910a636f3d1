#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cotune/config.hpp"
#include "cotune/metrics.hpp"

namespace cotune {

inline constexpr const char* kLogSchema = "# cotune-log v1";
inline constexpr const char* kEventsSchema = "# cotune-events v1";
inline constexpr const char* kLogHeader =
    "step,loss,kappa,kappa_ma,dT,dS,dJoint,HS,HT,boundT,boundS,gnormS,gnormT,lrS,lrT,regDS,"
    "regDT,evalAcc";

std::string record_csv_row(const BalanceRecord& r);
BalanceRecord parse_csv_row(const std::string& line);

// Streams rows as they arrive; every row is flushed so an aborted run leaves
// a valid truncated log.
class RunLogWriter {
  public:
    explicit RunLogWriter(const std::string& path);
    void append(const BalanceRecord& r);

  private:
    std::string path_;
};

class EventLogWriter {
  public:
    explicit EventLogWriter(const std::string& path);
    void append(long step, const std::string& kind, const std::string& detail);

  private:
    std::string path_;
};

// Rejects files whose schema line differs from kLogSchema.
std::vector<BalanceRecord> read_run_log(const std::string& path);

struct LoadedRun {
    ExperimentConfig config;
    std::vector<BalanceRecord> records;
    std::string dir;
};

LoadedRun load_run(const std::string& run_dir);

struct SeriesPoint {
    double x = 0.0;
    double y = 0.0;
};

// Self-contained SVG line chart with axes, ticks, and labels.
void write_svg_chart(const std::string& path, const std::string& title,
                     const std::string& x_label, const std::string& y_label,
                     const std::vector<std::pair<std::string, std::vector<SeriesPoint>>>& series);

// Sample standard deviation of kappa over records with step >= window_start.
double kappa_std(const std::vector<BalanceRecord>& records, long window_start);

// First step whose trailing-`smooth` mean loss falls to `threshold`; nullopt
// when never reached.
std::optional<long> steps_to_threshold(const std::vector<BalanceRecord>& records,
                                       double threshold, std::size_t smooth = 20);

// Per-(task, seed) threshold: halfway between the step-0 loss and the best
// smoothed loss across all compared runs of that task and seed.
double loss_threshold(const std::vector<const LoadedRun*>& group, std::size_t smooth = 20);

struct ReportOptions {
    long kappa_window_start = 100;
    std::size_t loss_smooth = 20;
};

// Per-run curves (one SVG per tracked series) plus cross-run comparison
// tables: kappa_std.csv and steps_to_threshold.csv.
void emit_report(const std::vector<std::string>& run_dirs, const std::string& out_dir,
                 const ReportOptions& opt = {});

}  // namespace cotune
