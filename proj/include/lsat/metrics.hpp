// Pixel-level change-detection metrics: precision, recall, F1, and the
// distance-from-ideal-position score (1 minus the normalized Euclidean
// distance of (precision, recall) from the ideal (1, 1)).
#pragma once

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <sstream>
#include <string>

#include <json.hpp>

#include "lsat/tensor.hpp"

namespace lsat {

struct ConfusionCounts {
  std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;

  std::int64_t total() const { return tp + fp + fn + tn; }

  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
};

struct MetricsReport {
  double pre = 0, rec = 0, f1 = 0, dip = 0;
  bool degenerate = false;  // a 0/0 convention fired somewhere
};

// 0/0 resolves to 0 by convention; the report flags it.
inline std::pair<double, double> precision_recall(const ConfusionCounts& c) {
  if (c.tp < 0 || c.fp < 0 || c.fn < 0 || c.tn < 0)
    throw std::invalid_argument("precision_recall: negative counts");
  const double pre = (c.tp + c.fp) == 0 ? 0.0 : double(c.tp) / double(c.tp + c.fp);
  const double rec = (c.tp + c.fn) == 0 ? 0.0 : double(c.tp) / double(c.tp + c.fn);
  return {pre, rec};
}

inline double f1_score(double pre, double rec) {
  if (pre == 0 && rec == 0) return 0.0;
  return 2.0 * pre * rec / (pre + rec);
}

inline double dip_score(double pre, double rec) {
  return 1.0 - std::hypot(1.0 - pre, 1.0 - rec) / std::sqrt(2.0);
}

inline MetricsReport derive_metrics(const ConfusionCounts& c) {
  MetricsReport r;
  r.degenerate = (c.tp + c.fp) == 0 || (c.tp + c.fn) == 0;
  std::tie(r.pre, r.rec) = precision_recall(c);
  r.f1 = f1_score(r.pre, r.rec);
  r.dip = dip_score(r.pre, r.rec);
  return r;
}

// Thresholds sigmoid(logit) >= threshold, i.e. logit >= log(t / (1-t)).
template <typename S>
void accumulate_confusion(ConfusionCounts& counts, const Tensor<S>& logits,
                          const Tensor<S>& mask, double threshold = 0.5) {
  if (logits.shape() != mask.shape())
    throw std::invalid_argument("accumulate_confusion: logits " + shape_str(logits.shape()) +
                                " and mask " + shape_str(mask.shape()) + " differ");
  if (!(threshold > 0 && threshold < 1))
    throw std::invalid_argument("accumulate_confusion: threshold must lie in (0, 1)");
  const S cut = S(std::log(threshold / (1.0 - threshold)));
  const S* z = logits.data();
  const S* m = mask.data();
  for (Index i = 0; i < logits.size(); ++i) {
    const bool pred = z[i] >= cut;
    const bool truth = m[i] != S(0);
    if (pred && truth) ++counts.tp;
    else if (pred && !truth) ++counts.fp;
    else if (!pred && truth) ++counts.fn;
    else ++counts.tn;
  }
}

inline nlohmann::json metrics_json(const MetricsReport& r) {
  return nlohmann::json{{"precision", r.pre},
                        {"recall", r.rec},
                        {"f1", r.f1},
                        {"dip", r.dip},
                        {"degenerate", r.degenerate}};
}

// Aligned percentage table, two decimals per column.
inline std::string metrics_table(const MetricsReport& r, const std::string& label = "model") {
  std::ostringstream os;
  os << std::left << std::setw(16) << "Network" << std::right << std::setw(9) << "Pre(%)"
     << std::setw(9) << "Rec(%)" << std::setw(9) << "F1(%)" << std::setw(9) << "DIP(%)" << "\n";
  os << std::left << std::setw(16) << label << std::right << std::fixed << std::setprecision(2)
     << std::setw(9) << 100.0 * r.pre << std::setw(9) << 100.0 * r.rec << std::setw(9)
     << 100.0 * r.f1 << std::setw(9) << 100.0 * r.dip;
  if (r.degenerate) os << "  (degenerate: a 0/0 case was mapped to 0)";
  os << "\n";
  return os.str();
}

}  // namespace lsat
