#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "defog/schema.hpp"
#include "defog/tensor.hpp"

namespace defog {

constexpr double kDefaultExistenceThreshold = 0.5;

struct Confusion {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t tn = 0;

  std::uint64_t total() const { return tp + fp + fn + tn; }
  Confusion& operator+=(const Confusion& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
  bool operator==(const Confusion&) const = default;
};

struct EvalReport {
  std::size_t frames = 0;
  double mse = 0;
  Confusion confusion;
  double accuracy = 0;
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  // Set when the corresponding denominator was zero and the score reported as 0.
  bool precision_undefined = false;
  bool recall_undefined = false;

  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
};

// Marks a value as existing iff value >= threshold.
std::vector<std::uint8_t> existence_binarize(const Tensor& t,
                                             double threshold = kDefaultExistenceThreshold);

Confusion existence_confusion(const Tensor& pred, const Tensor& truth,
                              double threshold = kDefaultExistenceThreshold);

// Accumulates MSE and existence confusion over a frame stream fed in batches.
class Evaluator {
 public:
  explicit Evaluator(double threshold = kDefaultExistenceThreshold);

  // pred and truth share a shape whose leading extent counts frames
  // ([C,H,W] counts as one frame).
  void add(const Tensor& pred, const Tensor& truth);
  EvalReport report() const;

 private:
  double threshold_;
  std::size_t frames_ = 0;
  std::size_t elements_ = 0;
  Shape frame_shape_;
  double squared_error_ = 0;
  Confusion confusion_;
};

EvalReport evaluate(const std::vector<Tensor>& pred_frames, const std::vector<Tensor>& truth_frames,
                    double threshold = kDefaultExistenceThreshold);

// Derives accuracy, precision, recall and F1 from a confusion matrix.
void fill_scores(EvalReport& report);

using NamedReport = std::pair<std::string, EvalReport>;

// Aligned MSE / Acc. / F1 / Recall / Preci. table, one row per report in
// the given order.
std::string report_table(const std::vector<NamedReport>& reports);
nlohmann::json reports_to_json(const std::vector<NamedReport>& reports);
std::vector<NamedReport> reports_from_json(const nlohmann::json& j);

}  // namespace defog
