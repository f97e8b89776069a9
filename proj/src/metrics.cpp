#include "fanet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include <Eigen/Dense>

namespace fanet {

std::size_t ConfusionMatrix::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::size_t{0});
}

std::size_t ConfusionMatrix::row_sum(std::size_t truth) const {
  std::size_t s = 0;
  for (std::size_t j = 0; j < num_classes; ++j) s += at(truth, j);
  return s;
}

std::size_t ConfusionMatrix::col_sum(std::size_t predicted) const {
  std::size_t s = 0;
  for (std::size_t i = 0; i < num_classes; ++i) s += at(i, predicted);
  return s;
}

ConfusionMatrix confusion_matrix(std::span<const std::size_t> truth,
                                 std::span<const std::size_t> predicted,
                                 std::size_t num_classes) {
  if (truth.size() != predicted.size()) {
    throw ShapeError("confusion_matrix: " + std::to_string(truth.size()) +
                     " true labels vs " + std::to_string(predicted.size()) + " predictions");
  }
  ConfusionMatrix cm{num_classes, std::vector<std::size_t>(num_classes * num_classes, 0)};
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] >= num_classes || predicted[i] >= num_classes) {
      throw DataError("confusion_matrix: label out of range [0," +
                      std::to_string(num_classes) + ")");
    }
    ++cm.counts[truth[i] * num_classes + predicted[i]];
  }
  return cm;
}

EvalReport classification_metrics(const ConfusionMatrix& cm, Averaging averaging) {
  const std::size_t k = cm.num_classes;
  const std::size_t total = cm.total();
  if (k == 0 || total == 0) throw DataError("classification_metrics: empty confusion matrix");
  EvalReport r;
  r.confusion = cm;
  r.averaging = averaging;
  std::size_t trace = 0, sum_fp = 0, sum_fn = 0;
  for (std::size_t c = 0; c < k; ++c) {
    const std::size_t tp = cm.at(c, c);
    const std::size_t predicted = cm.col_sum(c);
    const std::size_t actual = cm.row_sum(c);
    ClassMetrics m;
    m.support = actual;
    if (predicted == 0) {
      m.precision_undefined = true;
    } else {
      m.precision = static_cast<double>(tp) / static_cast<double>(predicted);
    }
    if (actual == 0) {
      m.recall_undefined = true;
    } else {
      m.recall = static_cast<double>(tp) / static_cast<double>(actual);
    }
    const double pr = m.precision + m.recall;
    m.f1 = pr > 0.0 ? 2.0 * m.precision * m.recall / pr : 0.0;
    r.per_class.push_back(m);
    trace += tp;
    sum_fp += predicted - tp;
    sum_fn += actual - tp;
  }
  r.accuracy = static_cast<double>(trace) / static_cast<double>(total);
  if (averaging == Averaging::kMacro) {
    for (const auto& m : r.per_class) {
      r.precision += m.precision;
      r.recall += m.recall;
      r.f1 += m.f1;
    }
    r.precision /= static_cast<double>(k);
    r.recall /= static_cast<double>(k);
    r.f1 /= static_cast<double>(k);
  } else {
    const double tp = static_cast<double>(trace);
    r.precision = trace + sum_fp ? tp / (tp + static_cast<double>(sum_fp)) : 0.0;
    r.recall = trace + sum_fn ? tp / (tp + static_cast<double>(sum_fn)) : 0.0;
    const double pr = r.precision + r.recall;
    r.f1 = pr > 0.0 ? 2.0 * r.precision * r.recall / pr : 0.0;
  }
  return r;
}

double roc_auc(std::span<const double> scores, std::span<const std::size_t> labels) {
  if (scores.size() != labels.size()) {
    throw ShapeError("roc_auc: scores and labels differ in length");
  }
  // Rank-sum form of the Mann-Whitney statistic; tied scores share the
  // average rank, which counts each tied pair as 1/2.
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double pos = 0, neg = 0, rank_sum = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t t = i; t < j; ++t) {
      if (labels[order[t]] != 0) rank_sum += avg_rank;
    }
    i = j;
  }
  for (std::size_t l : labels) (l != 0 ? pos : neg) += 1;
  if (pos == 0 || neg == 0) {
    throw DataError("roc_auc: undefined with a single class present");
  }
  return (rank_sum - pos * (pos + 1) / 2.0) / (pos * neg);
}

double roc_auc_one_vs_rest(const std::vector<std::vector<double>>& probabilities,
                           std::span<const std::size_t> labels, std::size_t num_classes) {
  if (probabilities.size() != labels.size()) {
    throw ShapeError("roc_auc_one_vs_rest: probabilities and labels differ in length");
  }
  double sum = 0.0;
  std::vector<double> scores(labels.size());
  std::vector<std::size_t> binary(labels.size());
  for (std::size_t c = 0; c < num_classes; ++c) {
    for (std::size_t i = 0; i < labels.size(); ++i) {
      scores[i] = probabilities[i].at(c);
      binary[i] = labels[i] == c ? 1 : 0;
    }
    sum += roc_auc(scores, binary);
  }
  return sum / static_cast<double>(num_classes);
}

PcaResult pca_project(const Tensor& features, std::size_t dims) {
  if (!features.defined() || features.rank() != 2) {
    throw ShapeError("pca_project: features must be N x m");
  }
  const std::size_t n = features.dim(0), m = features.dim(1);
  if (n <= dims) {
    throw DataError("pca_project: need more than " + std::to_string(dims) +
                    " samples, got " + std::to_string(n));
  }
  if (dims == 0 || dims > m) {
    throw ShapeError("pca_project: dims must lie in [1, " + std::to_string(m) + "]");
  }
  if (!all_finite(features.values())) throw NumericError("pca_project: non-finite features");

  using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const Matrix> x(features.values().data(), static_cast<Eigen::Index>(n),
                             static_cast<Eigen::Index>(m));
  const Eigen::RowVectorXd mu = x.colwise().mean();
  const Eigen::MatrixXd centred = x.rowwise() - mu;
  const Eigen::MatrixXd cov =
      centred.transpose() * centred / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw NumericError("pca_project: eigensolver failed");
  // Eigen returns ascending eigenvalues.
  const Eigen::VectorXd evals = solver.eigenvalues().reverse();
  Eigen::MatrixXd evecs = solver.eigenvectors().rowwise().reverse();

  PcaResult r;
  const double total = std::max(evals.sum(), 0.0);
  const double tol = 1e-12 * std::max(1.0, std::abs(evals(0)));
  for (std::size_t d = 0; d < dims; ++d) {
    auto col = evecs.col(static_cast<Eigen::Index>(d));
    Eigen::Index arg = 0;
    col.cwiseAbs().maxCoeff(&arg);
    if (col(arg) < 0) col = -col;
    const double ev = std::max(evals(static_cast<Eigen::Index>(d)), 0.0);
    r.explained_variance.push_back(ev);
    r.explained_ratio.push_back(total > 0.0 ? ev / total : 0.0);
    if (ev > tol) ++r.informative;
  }
  const Eigen::MatrixXd comps = evecs.leftCols(static_cast<Eigen::Index>(dims));
  const Eigen::MatrixXd proj = centred * comps;
  std::vector<double> pv(n * dims), cv(m * dims);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t d = 0; d < dims; ++d)
      pv[i * dims + d] = proj(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d));
  for (std::size_t j = 0; j < m; ++j)
    for (std::size_t d = 0; d < dims; ++d)
      cv[j * dims + d] = comps(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(d));
  r.projection = Tensor({n, dims}, std::move(pv));
  r.components = Tensor({m, dims}, std::move(cv));
  return r;
}

std::string format_number(double value) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", value);
  return buf;
}

namespace {

std::ofstream open_csv(const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw Error("cannot open '" + file.string() + "' for writing");
  return out;
}

}  // namespace

void write_metrics_csv(const std::filesystem::path& file, const EvalReport& report,
                       const std::vector<std::string>& class_names) {
  auto out = open_csv(file);
  out << "scope,metric,value\n";
  const char* avg = report.averaging == Averaging::kMacro ? "macro" : "micro";
  out << "overall,accuracy," << format_number(report.accuracy) << '\n';
  out << avg << ",precision," << format_number(report.precision) << '\n';
  out << avg << ",recall," << format_number(report.recall) << '\n';
  out << avg << ",f1," << format_number(report.f1) << '\n';
  if (report.auc) out << "overall,auc," << format_number(*report.auc) << '\n';
  for (std::size_t c = 0; c < report.per_class.size(); ++c) {
    const auto& m = report.per_class[c];
    const std::string& name = c < class_names.size() ? class_names[c] : std::to_string(c);
    out << name << ",precision," << format_number(m.precision) << '\n';
    out << name << ",recall," << format_number(m.recall) << '\n';
    out << name << ",f1," << format_number(m.f1) << '\n';
    out << name << ",support," << m.support << '\n';
  }
}

void write_confusion_csv(const std::filesystem::path& file, const ConfusionMatrix& cm,
                         const std::vector<std::string>& class_names) {
  auto out = open_csv(file);
  auto name = [&](std::size_t c) {
    return c < class_names.size() ? class_names[c] : std::to_string(c);
  };
  out << "true\\predicted";
  for (std::size_t j = 0; j < cm.num_classes; ++j) out << ',' << name(j);
  out << '\n';
  for (std::size_t i = 0; i < cm.num_classes; ++i) {
    out << name(i);
    for (std::size_t j = 0; j < cm.num_classes; ++j) out << ',' << cm.at(i, j);
    out << '\n';
  }
}

void write_projection_csv(const std::filesystem::path& file, const Tensor& projection,
                          std::span<const std::size_t> labels,
                          const std::vector<std::string>& class_names) {
  if (projection.rank() != 2 || projection.dim(1) != 3 || projection.dim(0) != labels.size()) {
    throw ShapeError("write_projection_csv expects N x 3 projection and N labels");
  }
  auto out = open_csv(file);
  out << "x,y,z,label\n";
  auto v = projection.values();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    out << format_number(v[i * 3]) << ',' << format_number(v[i * 3 + 1]) << ','
        << format_number(v[i * 3 + 2]) << ','
        << (labels[i] < class_names.size() ? class_names[labels[i]]
                                           : std::to_string(labels[i]))
        << '\n';
  }
}

}  // namespace fanet
