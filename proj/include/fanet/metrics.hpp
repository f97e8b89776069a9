#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fanet/tensor.hpp"

namespace fanet {

/// Rows are true classes, columns predicted classes.
struct ConfusionMatrix {
  std::size_t num_classes = 0;
  std::vector<std::size_t> counts;  // row-major K x K

  std::size_t at(std::size_t truth, std::size_t predicted) const {
    return counts[truth * num_classes + predicted];
  }
  std::size_t total() const;
  std::size_t row_sum(std::size_t truth) const;
  std::size_t col_sum(std::size_t predicted) const;
};

ConfusionMatrix confusion_matrix(std::span<const std::size_t> truth,
                                 std::span<const std::size_t> predicted,
                                 std::size_t num_classes);

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
  // Set when the corresponding denominator was zero and 0 was reported.
  bool precision_undefined = false;
  bool recall_undefined = false;
};

enum class Averaging { kMacro, kMicro };

struct EvalReport {
  std::vector<ClassMetrics> per_class;
  double accuracy = 0.0;
  double precision = 0.0;  // averaged per `averaging`
  double recall = 0.0;
  double f1 = 0.0;
  Averaging averaging = Averaging::kMacro;
  std::optional<double> auc;
  ConfusionMatrix confusion;
};

/// Accuracy, per-class and averaged precision/recall/F1. Zero denominators
/// yield 0 with a flag. Throws DataError on an all-zero matrix.
EvalReport classification_metrics(const ConfusionMatrix& cm,
                                  Averaging averaging = Averaging::kMacro);

/// Binary AUC as the Mann-Whitney statistic (ties count 1/2). `labels` are
/// 1 for the positive class, 0 otherwise. Throws DataError when either
/// class is absent.
double roc_auc(std::span<const double> scores, std::span<const std::size_t> labels);

/// One-vs-rest AUC per class, macro averaged. `probabilities` is N rows of K.
double roc_auc_one_vs_rest(const std::vector<std::vector<double>>& probabilities,
                           std::span<const std::size_t> labels, std::size_t num_classes);

struct PcaResult {
  Tensor projection;  // N x dims
  Tensor components;  // m x dims, orthonormal columns
  std::vector<double> explained_variance;  // eigenvalues, descending
  std::vector<double> explained_ratio;
  /// Count of components with non-negligible variance. Less than dims when
  /// the data has lower rank.
  std::size_t informative = 0;
};

/// Mean-centred PCA via the symmetric covariance eigendecomposition. Each
/// component is signed so its largest-magnitude entry is positive.
PcaResult pca_project(const Tensor& features, std::size_t dims = 3);

/// CSV writers for external plotting.
void write_metrics_csv(const std::filesystem::path& file, const EvalReport& report,
                       const std::vector<std::string>& class_names);
void write_confusion_csv(const std::filesystem::path& file, const ConfusionMatrix& cm,
                         const std::vector<std::string>& class_names);
/// `x,y,z,label`; `label` is the class name.
void write_projection_csv(const std::filesystem::path& file, const Tensor& projection,
                          std::span<const std::size_t> labels,
                          const std::vector<std::string>& class_names);

/// Shared number formatting for printed tables and CSVs (17 significant digits).
std::string format_number(double value);

}  // namespace fanet
