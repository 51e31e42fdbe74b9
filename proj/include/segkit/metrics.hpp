#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "segkit/tensor.hpp"

namespace segkit {

// K x K pixel counts; rows are ground-truth classes, columns predictions.
class ConfusionMatrix {
 public:
  using Counts = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>;

  explicit ConfusionMatrix(int n_classes);
  // Throws MetricError unless `counts` is square, non-empty and non-negative.
  static ConfusionMatrix from_counts(Counts counts);

  int n_classes() const { return static_cast<int>(counts_.rows()); }
  const Counts& counts() const { return counts_; }
  std::int64_t operator()(int truth, int predicted) const { return counts_(truth, predicted); }
  std::int64_t total() const { return counts_.sum(); }

  // Counts one pixel per grid position. Throws MetricError on dimension
  // mismatch or labels outside [0, K).
  void add(const LabelGrid& predicted, const LabelGrid& truth);

  ConfusionMatrix& operator+=(const ConfusionMatrix& other);

  friend bool operator==(const ConfusionMatrix& a, const ConfusionMatrix& b) {
    return a.counts_ == b.counts_;
  }

 private:
  explicit ConfusionMatrix(Counts counts) : counts_(std::move(counts)) {}
  Counts counts_;
};

ConfusionMatrix accumulate(ConfusionMatrix cm, const LabelGrid& predicted, const LabelGrid& truth);

// Entrywise sum; throws MetricError when class counts differ.
ConfusionMatrix merge(const ConfusionMatrix& a, const ConfusionMatrix& b);

// Exact IoU of one class as an integer ratio TP / (TP + FP + FN).
struct ClassIou {
  std::int64_t intersection = 0;
  std::int64_t union_count = 0;

  bool defined() const { return union_count > 0; }
  double value() const {
    return defined() ? static_cast<double>(intersection) / static_cast<double>(union_count) : 0.0;
  }
};

std::vector<ClassIou> iou_per_class(const ConfusionMatrix& cm);

// Mean over classes with non-empty union; MetricError if there are none.
double mean_iou(const ConfusionMatrix& cm);

// sum_c t_c IoU_c / sum_c t_c with t_c the ground-truth pixel count of c.
double frequency_weighted_iou(const ConfusionMatrix& cm);

double pixel_accuracy(const ConfusionMatrix& cm);

struct EvalReport {
  std::string method;
  std::vector<std::string> class_names;
  std::vector<std::optional<double>> per_class_iou;  // nullopt: undefined class
  double miou = 0.0;
  double fiou = 0.0;
  double pixel_accuracy = 0.0;
  std::int64_t pixels = 0;
};

// Throws MetricError when class_names.size() != K.
EvalReport build_report(const ConfusionMatrix& cm, std::vector<std::string> class_names,
                        std::string method = "");

// Aligned, pipe-delimited table with columns Method | mIoU | fIoU | classes...
// Values are percentages with two decimals; undefined classes print "-".
std::string render_table(std::span<const EvalReport> rows);
std::string render_table(const EvalReport& report);

nlohmann::json to_json(const EvalReport& report);

// Percentage with two decimals, e.g. 0.64514 -> "64.51".
std::string format_percent(double fraction);

}  // namespace segkit
