#include <algorithm>
#include <cstdio>
#include <sstream>

#include "segkit/metrics.hpp"

namespace segkit {

std::string format_percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", fraction * 100.0);
  return buf;
}

std::string render_table(std::span<const EvalReport> rows) {
  if (rows.empty()) return {};
  const auto& names = rows.front().class_names;
  for (const auto& row : rows) {
    if (row.class_names != names) throw MetricError("table rows disagree on class names");
  }

  std::vector<std::vector<std::string>> cells;
  std::vector<std::string> header{"Method", "mIoU", "fIoU"};
  header.insert(header.end(), names.begin(), names.end());
  cells.push_back(std::move(header));
  for (const auto& row : rows) {
    std::vector<std::string> line{row.method.empty() ? "model" : row.method, format_percent(row.miou),
                                  format_percent(row.fiou)};
    for (const auto& iou : row.per_class_iou) line.push_back(iou ? format_percent(*iou) : "-");
    cells.push_back(std::move(line));
  }

  std::vector<size_t> widths(cells.front().size(), 0);
  for (const auto& line : cells) {
    for (size_t i = 0; i < line.size(); ++i) widths[i] = std::max(widths[i], line[i].size());
  }
  std::ostringstream os;
  auto emit = [&](const std::vector<std::string>& line) {
    for (size_t i = 0; i < line.size(); ++i) {
      if (i) os << " | ";
      // Method column left-aligned, numbers right-aligned.
      const size_t pad = widths[i] - line[i].size();
      if (i == 0) {
        os << line[i] << std::string(pad, ' ');
      } else {
        os << std::string(pad, ' ') << line[i];
      }
    }
    os << '\n';
  };
  emit(cells.front());
  std::vector<std::string> rule;
  for (size_t w : widths) rule.emplace_back(w, '-');
  emit(rule);
  for (size_t r = 1; r < cells.size(); ++r) emit(cells[r]);
  return os.str();
}

std::string render_table(const EvalReport& report) {
  return render_table(std::span<const EvalReport>(&report, 1));
}

nlohmann::json to_json(const EvalReport& report) {
  nlohmann::json j;
  j["method"] = report.method;
  j["miou"] = report.miou;
  j["fiou"] = report.fiou;
  j["pixel_accuracy"] = report.pixel_accuracy;
  j["pixels"] = report.pixels;
  j["classes"] = nlohmann::json::array();
  for (size_t i = 0; i < report.class_names.size(); ++i) {
    const auto& iou = report.per_class_iou[i];
    j["classes"].push_back({{"name", report.class_names[i]},
                            {"iou", iou ? nlohmann::json(*iou) : nlohmann::json(nullptr)},
                            {"defined", iou.has_value()}});
  }
  return j;
}

}  // namespace segkit
