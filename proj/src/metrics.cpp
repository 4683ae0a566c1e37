#include "defog/metrics.hpp"

#include <cstdio>

namespace defog {

nlohmann::json EvalReport::to_json() const {
  return {{"frames", frames},
          {"mse", mse},
          {"confusion", {{"tp", confusion.tp}, {"fp", confusion.fp}, {"fn", confusion.fn}, {"tn", confusion.tn}}},
          {"accuracy", accuracy},
          {"precision", precision},
          {"recall", recall},
          {"f1", f1},
          {"precision_undefined", precision_undefined},
          {"recall_undefined", recall_undefined}};
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
  EvalReport r;
  try {
    r.frames = j.at("frames");
    r.mse = j.at("mse");
    const auto& c = j.at("confusion");
    r.confusion = {c.at("tp"), c.at("fp"), c.at("fn"), c.at("tn")};
    r.accuracy = j.at("accuracy");
    r.precision = j.at("precision");
    r.recall = j.at("recall");
    r.f1 = j.at("f1");
    r.precision_undefined = j.value("precision_undefined", false);
    r.recall_undefined = j.value("recall_undefined", false);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed evaluation report: ") + e.what());
  }
  return r;
}

std::vector<std::uint8_t> existence_binarize(const Tensor& t, double threshold) {
  if (!(threshold > 0)) throw ShapeError("existence threshold must be positive");
  std::vector<std::uint8_t> out(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = t[i] >= threshold ? 1 : 0;
  return out;
}

Confusion existence_confusion(const Tensor& pred, const Tensor& truth, double threshold) {
  if (pred.shape() != truth.shape()) {
    throw ShapeError("confusion shape mismatch: " + shape_str(pred.shape()) + " vs " +
                     shape_str(truth.shape()));
  }
  if (!(threshold > 0)) throw ShapeError("existence threshold must be positive");
  Confusion c;
  const float th = static_cast<float>(threshold);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] >= th, t = truth[i] >= th;
    if (p && t) ++c.tp;
    else if (p) ++c.fp;
    else if (t) ++c.fn;
    else ++c.tn;
  }
  return c;
}

Evaluator::Evaluator(double threshold) : threshold_(threshold) {
  if (!(threshold > 0)) throw ShapeError("existence threshold must be positive");
}

void Evaluator::add(const Tensor& pred, const Tensor& truth) {
  if (pred.shape() != truth.shape()) {
    throw ShapeError("evaluation stream misaligned: prediction " + shape_str(pred.shape()) +
                     " vs truth " + shape_str(truth.shape()));
  }
  Shape frame = pred.shape();
  std::size_t n = 1;
  if (frame.size() == 4) {
    n = frame[0];
    frame.erase(frame.begin());
  }
  if (frames_ > 0 && frame != frame_shape_) {
    throw ShapeError("evaluation stream changes frame shape from " + shape_str(frame_shape_) +
                     " to " + shape_str(frame));
  }
  frame_shape_ = frame;
  frames_ += n;
  elements_ += pred.size();
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred[i]) - static_cast<double>(truth[i]);
    squared_error_ += d * d;
  }
  confusion_ += existence_confusion(pred, truth, threshold_);
}

void fill_scores(EvalReport& r) {
  const auto& c = r.confusion;
  const double total = static_cast<double>(c.total());
  r.accuracy = total > 0 ? static_cast<double>(c.tp + c.tn) / total : 0.0;
  r.precision_undefined = c.tp + c.fp == 0;
  r.recall_undefined = c.tp + c.fn == 0;
  r.precision = r.precision_undefined ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  r.recall = r.recall_undefined ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  r.f1 = r.precision + r.recall > 0 ? 2 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
}

EvalReport Evaluator::report() const {
  EvalReport r;
  r.frames = frames_;
  r.mse = elements_ > 0 ? squared_error_ / static_cast<double>(elements_) : 0.0;
  r.confusion = confusion_;
  fill_scores(r);
  return r;
}

EvalReport evaluate(const std::vector<Tensor>& pred_frames, const std::vector<Tensor>& truth_frames,
                    double threshold) {
  if (pred_frames.size() != truth_frames.size()) {
    throw ShapeError("evaluation stream misaligned: " + std::to_string(pred_frames.size()) +
                     " predictions vs " + std::to_string(truth_frames.size()) + " truths");
  }
  Evaluator ev(threshold);
  for (std::size_t i = 0; i < pred_frames.size(); ++i) ev.add(pred_frames[i], truth_frames[i]);
  return ev.report();
}

std::string report_table(const std::vector<NamedReport>& reports) {
  std::size_t name_w = 5;
  for (const auto& [name, r] : reports) name_w = std::max(name_w, name.size());
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-*s %9s %9s %7s %7s %7s\n", static_cast<int>(name_w), "",
                "MSE", "Acc.", "F1", "Recall", "Preci.");
  out += buf;
  for (const auto& [name, r] : reports) {
    std::snprintf(buf, sizeof buf, "%-*s %9.5f %9.5f %7.3f %7.3f %7.3f\n", static_cast<int>(name_w),
                  name.c_str(), r.mse, r.accuracy, r.f1, r.recall, r.precision);
    out += buf;
  }
  return out;
}

nlohmann::json reports_to_json(const std::vector<NamedReport>& reports) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& [name, r] : reports) rows.push_back({{"name", name}, {"report", r.to_json()}});
  return {{"reports", rows}};
}

std::vector<NamedReport> reports_from_json(const nlohmann::json& j) {
  std::vector<NamedReport> out;
  try {
    for (const auto& row : j.at("reports")) {
      out.emplace_back(row.at("name").get<std::string>(), EvalReport::from_json(row.at("report")));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed report list: ") + e.what());
  }
  return out;
}

}  // namespace defog
