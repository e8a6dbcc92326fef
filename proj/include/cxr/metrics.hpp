#ifndef CXR_METRICS_HPP
#define CXR_METRICS_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "cxr/tensor.hpp"

namespace cxr {

struct ConfusionMatrix {
    int k = 0;
    std::vector<std::int64_t> counts; // k*k, rows = true, cols = predicted

    std::int64_t at(int t, int p) const { return counts[static_cast<size_t>(t * k + p)]; }
    std::int64_t& at(int t, int p) { return counts[static_cast<size_t>(t * k + p)]; }
    std::int64_t total() const;
    std::int64_t diagonal() const;
};

ConfusionMatrix confusion(const std::vector<int>& y_true, const std::vector<int>& y_pred, int k);

struct ClassPRF {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::int64_t support = 0;
    bool degenerate = false; // some denominator was zero and the 0-convention fired
};

struct PRFResult {
    std::vector<ClassPRF> per_class;
    double precision_macro = 0.0;
    double recall_macro = 0.0;
    double f1_macro = 0.0;
};

PRFResult precision_recall_f1(const ConfusionMatrix& cm);

struct AucResult {
    std::vector<double> per_class;  // 0.0 placeholder where undefined
    std::vector<bool> defined;      // class had both positives and negatives
    double macro = 0.0;             // mean over defined classes
};

/// One-vs-rest AUC per class via the midrank Mann-Whitney statistic
/// (tie-corrected, equal to exhaustive pair counting). Throws ValueError if
/// no class has both positives and negatives.
AucResult auc_ovr(const Tensor& scores, const std::vector<int>& y_true);

/// Row argmax with ties broken by lowest class index.
int argmax_row(const Tensor& probs, int row);

struct EvalReport {
    std::int64_t n = 0;
    double accuracy = 0.0;
    double loss = 0.0; // mean cross-entropy of the true class
    double auc_macro = 0.0;
    double f1_macro = 0.0;
    double recall_macro = 0.0;
    double precision_macro = 0.0;
    PRFResult prf;
    AucResult auc;
    ConfusionMatrix cm;
    std::vector<std::string> class_names;
    std::vector<std::string> warnings;
};

EvalReport report(const Tensor& probs, const std::vector<int>& y_true,
                  const std::vector<std::string>& class_names = {});

/// key:value lines plus per-class table and confusion block.
std::string report_to_text(const EvalReport& rep);

/// Comma-separated confusion matrix, one header row/column of class names.
std::string confusion_to_csv(const ConfusionMatrix& cm, const std::vector<std::string>& names);

/// ROC sample points per class: header class,threshold,fpr,tpr.
std::string roc_points_csv(const Tensor& scores, const std::vector<int>& y_true,
                           const std::vector<std::string>& names);

} // namespace cxr

#endif
