#include "segkit/metrics.hpp"

namespace segkit {

ConfusionMatrix::ConfusionMatrix(int n_classes) {
  if (n_classes < 1) throw MetricError("confusion matrix needs at least one class");
  counts_ = Counts::Zero(n_classes, n_classes);
}

ConfusionMatrix ConfusionMatrix::from_counts(Counts counts) {
  if (counts.rows() < 1 || counts.rows() != counts.cols()) {
    throw MetricError("confusion matrix counts must be square and non-empty");
  }
  if ((counts.array() < 0).any()) throw MetricError("confusion matrix counts must be non-negative");
  return ConfusionMatrix(std::move(counts));
}

void ConfusionMatrix::add(const LabelGrid& predicted, const LabelGrid& truth) {
  if (predicted.rows() != truth.rows() || predicted.cols() != truth.cols()) {
    throw MetricError("prediction " + std::to_string(predicted.rows()) + "x" +
                      std::to_string(predicted.cols()) + " does not match ground truth " +
                      std::to_string(truth.rows()) + "x" + std::to_string(truth.cols()));
  }
  const int k = n_classes();
  auto in_range = [k](const LabelGrid& g) {
    return g.size() == 0 || (g.minCoeff() >= 0 && g.maxCoeff() < k);
  };
  if (!in_range(predicted) || !in_range(truth)) {
    throw MetricError("label outside [0, " + std::to_string(k) + ")");
  }
  for (Index i = 0; i < truth.size(); ++i) ++counts_(truth.data()[i], predicted.data()[i]);
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  if (other.n_classes() != n_classes()) {
    throw MetricError("cannot merge confusion matrices with " + std::to_string(n_classes()) +
                      " and " + std::to_string(other.n_classes()) + " classes");
  }
  counts_ += other.counts_;
  return *this;
}

ConfusionMatrix accumulate(ConfusionMatrix cm, const LabelGrid& predicted, const LabelGrid& truth) {
  cm.add(predicted, truth);
  return cm;
}

ConfusionMatrix merge(const ConfusionMatrix& a, const ConfusionMatrix& b) {
  ConfusionMatrix out = a;
  out += b;
  return out;
}

std::vector<ClassIou> iou_per_class(const ConfusionMatrix& cm) {
  const auto& m = cm.counts();
  const Eigen::Matrix<std::int64_t, Eigen::Dynamic, 1> truth_totals = m.rowwise().sum();
  const Eigen::Matrix<std::int64_t, 1, Eigen::Dynamic> predicted_totals = m.colwise().sum();
  std::vector<ClassIou> out(static_cast<size_t>(cm.n_classes()));
  for (int c = 0; c < cm.n_classes(); ++c) {
    const std::int64_t tp = m(c, c);
    out[static_cast<size_t>(c)] = {tp, truth_totals(c) + predicted_totals(c) - tp};
  }
  return out;
}

double mean_iou(const ConfusionMatrix& cm) {
  double sum = 0.0;
  int defined = 0;
  for (const auto& iou : iou_per_class(cm)) {
    if (!iou.defined()) continue;
    sum += iou.value();
    ++defined;
  }
  if (defined == 0) throw MetricError("mean IoU is undefined: no class appears in truth or prediction");
  return sum / defined;
}

double frequency_weighted_iou(const ConfusionMatrix& cm) {
  const std::int64_t total = cm.total();
  if (total == 0) throw MetricError("frequency-weighted IoU of an empty confusion matrix");
  const auto ious = iou_per_class(cm);
  double weighted = 0.0;
  for (int c = 0; c < cm.n_classes(); ++c) {
    const std::int64_t freq = cm.counts().row(c).sum();
    weighted += static_cast<double>(freq) * ious[static_cast<size_t>(c)].value();
  }
  return weighted / static_cast<double>(total);
}

double pixel_accuracy(const ConfusionMatrix& cm) {
  const std::int64_t total = cm.total();
  if (total == 0) throw MetricError("pixel accuracy of an empty confusion matrix");
  return static_cast<double>(cm.counts().trace()) / static_cast<double>(total);
}

EvalReport build_report(const ConfusionMatrix& cm, std::vector<std::string> class_names,
                        std::string method) {
  if (static_cast<int>(class_names.size()) != cm.n_classes()) {
    throw MetricError("got " + std::to_string(class_names.size()) + " class names for " +
                      std::to_string(cm.n_classes()) + " classes");
  }
  EvalReport report;
  report.method = std::move(method);
  report.class_names = std::move(class_names);
  for (const auto& iou : iou_per_class(cm)) {
    report.per_class_iou.push_back(iou.defined() ? std::optional<double>(iou.value()) : std::nullopt);
  }
  report.miou = mean_iou(cm);
  report.fiou = frequency_weighted_iou(cm);
  report.pixel_accuracy = pixel_accuracy(cm);
  report.pixels = cm.total();
  return report;
}

}  // namespace segkit
