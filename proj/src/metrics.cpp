#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "cxr/errors.hpp"
#include "cxr/metrics.hpp"

namespace cxr {

namespace {

std::string f6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

void check_labels(const std::vector<int>& y, int k, const char* who) {
    for (int v : y) {
        if (v < 0 || v >= k) {
            throw ValueError(std::string(who) + ": label " + std::to_string(v) +
                             " outside [0," + std::to_string(k) + ")");
        }
    }
}

} // namespace

std::int64_t ConfusionMatrix::total() const {
    return std::accumulate(counts.begin(), counts.end(), std::int64_t{0});
}

std::int64_t ConfusionMatrix::diagonal() const {
    std::int64_t d = 0;
    for (int i = 0; i < k; ++i) d += at(i, i);
    return d;
}

ConfusionMatrix confusion(const std::vector<int>& y_true, const std::vector<int>& y_pred, int k) {
    if (k <= 0) throw ValueError("confusion: class count must be positive");
    if (y_true.size() != y_pred.size()) {
        throw ValueError("confusion: y_true and y_pred lengths differ");
    }
    check_labels(y_true, k, "confusion");
    check_labels(y_pred, k, "confusion");

    ConfusionMatrix cm;
    cm.k = k;
    cm.counts.assign(static_cast<size_t>(k) * static_cast<size_t>(k), 0);
    for (size_t i = 0; i < y_true.size(); ++i) {
        ++cm.at(y_true[i], y_pred[i]);
    }
    return cm;
}

PRFResult precision_recall_f1(const ConfusionMatrix& cm) {
    PRFResult out;
    out.per_class.resize(static_cast<size_t>(cm.k));
    for (int c = 0; c < cm.k; ++c) {
        std::int64_t tp = cm.at(c, c), fp = 0, fn = 0;
        for (int o = 0; o < cm.k; ++o) {
            if (o == c) continue;
            fp += cm.at(o, c);
            fn += cm.at(c, o);
        }
        ClassPRF& r = out.per_class[static_cast<size_t>(c)];
        r.support = tp + fn;
        if (tp + fp > 0) {
            r.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
        } else {
            r.degenerate = true;
        }
        if (tp + fn > 0) {
            r.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
        } else {
            r.degenerate = true;
        }
        if (r.precision + r.recall > 0) {
            r.f1 = 2.0 * r.precision * r.recall / (r.precision + r.recall);
        }
        out.precision_macro += r.precision;
        out.recall_macro += r.recall;
        out.f1_macro += r.f1;
    }
    out.precision_macro /= cm.k;
    out.recall_macro /= cm.k;
    out.f1_macro /= cm.k;
    return out;
}

AucResult auc_ovr(const Tensor& scores, const std::vector<int>& y_true) {
    if (scores.rank() != 2) throw ShapeError("auc_ovr: scores must be [N,K]");
    const int n = scores.dim(0), k = scores.dim(1);
    if (static_cast<size_t>(n) != y_true.size()) {
        throw ValueError("auc_ovr: scores rows and label count differ");
    }
    check_labels(y_true, k, "auc_ovr");

    AucResult out;
    out.per_class.assign(static_cast<size_t>(k), 0.0);
    out.defined.assign(static_cast<size_t>(k), false);
    int defined_count = 0;
    double sum = 0.0;

    std::vector<int> order(static_cast<size_t>(n));
    std::vector<double> ranks(static_cast<size_t>(n));
    for (int c = 0; c < k; ++c) {
        std::int64_t pos = 0;
        for (int v : y_true) pos += v == c ? 1 : 0;
        const std::int64_t neg = n - pos;
        if (pos == 0 || neg == 0) continue;

        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
            return scores.at2(a, c) < scores.at2(b, c);
        });
        // midranks over ties: average of the 1-based positions in each run
        for (int i = 0; i < n;) {
            int j = i;
            while (j < n && scores.at2(order[static_cast<size_t>(j)], c) ==
                                scores.at2(order[static_cast<size_t>(i)], c)) {
                ++j;
            }
            const double mid = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
            for (int t = i; t < j; ++t) ranks[static_cast<size_t>(order[static_cast<size_t>(t)])] = mid;
            i = j;
        }
        double rank_sum = 0.0;
        for (int i = 0; i < n; ++i) {
            if (y_true[static_cast<size_t>(i)] == c) rank_sum += ranks[static_cast<size_t>(i)];
        }
        const double p = static_cast<double>(pos);
        const double auc = (rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(neg));
        out.per_class[static_cast<size_t>(c)] = auc;
        out.defined[static_cast<size_t>(c)] = true;
        sum += auc;
        ++defined_count;
    }
    if (defined_count == 0) {
        throw ValueError("auc_ovr: every class is one-sided; AUC undefined");
    }
    out.macro = sum / defined_count;
    return out;
}

int argmax_row(const Tensor& probs, int row) {
    const int k = probs.dim(1);
    int best = 0;
    float best_v = probs.at2(row, 0);
    for (int c = 1; c < k; ++c) {
        if (probs.at2(row, c) > best_v) {
            best_v = probs.at2(row, c);
            best = c;
        }
    }
    return best;
}

EvalReport report(const Tensor& probs, const std::vector<int>& y_true,
                  const std::vector<std::string>& class_names) {
    if (probs.rank() != 2) throw ShapeError("report: probs must be [N,K]");
    const int n = probs.dim(0), k = probs.dim(1);
    if (static_cast<size_t>(n) != y_true.size()) {
        throw ValueError("report: probs rows and label count differ");
    }
    check_labels(y_true, k, "report");
    if (!probs.all_finite()) throw ValueError("report: non-finite probabilities");

    EvalReport rep;
    rep.n = n;
    rep.class_names = class_names;
    if (rep.class_names.empty()) {
        for (int c = 0; c < k; ++c) rep.class_names.push_back("class" + std::to_string(c));
    }
    if (static_cast<int>(rep.class_names.size()) != k) {
        throw ValueError("report: class name count differs from K");
    }

    std::vector<int> y_pred(static_cast<size_t>(n));
    double loss = 0.0;
    for (int i = 0; i < n; ++i) {
        y_pred[static_cast<size_t>(i)] = argmax_row(probs, i);
        const double p = std::max(static_cast<double>(probs.at2(i, y_true[static_cast<size_t>(i)])), 1e-12);
        loss -= std::log(p);
    }
    rep.loss = n > 0 ? loss / n : 0.0;
    rep.cm = confusion(y_true, y_pred, k);
    rep.accuracy = n > 0 ? static_cast<double>(rep.cm.diagonal()) / static_cast<double>(n) : 0.0;
    rep.prf = precision_recall_f1(rep.cm);
    rep.precision_macro = rep.prf.precision_macro;
    rep.recall_macro = rep.prf.recall_macro;
    rep.f1_macro = rep.prf.f1_macro;
    for (int c = 0; c < k; ++c) {
        if (rep.prf.per_class[static_cast<size_t>(c)].degenerate) {
            rep.warnings.push_back("class " + rep.class_names[static_cast<size_t>(c)] +
                                   ": zero denominator, precision/recall defaulted to 0");
        }
    }
    try {
        rep.auc = auc_ovr(probs, y_true);
        rep.auc_macro = rep.auc.macro;
        for (int c = 0; c < k; ++c) {
            if (!rep.auc.defined[static_cast<size_t>(c)]) {
                rep.warnings.push_back("class " + rep.class_names[static_cast<size_t>(c)] +
                                       ": one-sided labels, AUC excluded from macro");
            }
        }
    } catch (const ValueError&) {
        rep.auc.per_class.assign(static_cast<size_t>(k), 0.0);
        rep.auc.defined.assign(static_cast<size_t>(k), false);
        rep.warnings.push_back("AUC undefined: labels contain a single class");
    }
    return rep;
}

std::string report_to_text(const EvalReport& rep) {
    std::string s;
    s += "samples: " + std::to_string(rep.n) + "\n";
    s += "accuracy: " + f6(rep.accuracy) + "\n";
    s += "loss: " + f6(rep.loss) + "\n";
    s += "auc_macro: " + f6(rep.auc_macro) + "\n";
    s += "f1_macro: " + f6(rep.f1_macro) + "\n";
    s += "recall_macro: " + f6(rep.recall_macro) + "\n";
    s += "precision_macro: " + f6(rep.precision_macro) + "\n";
    s += "\nclass,precision,recall,f1,support,auc\n";
    for (size_t c = 0; c < rep.class_names.size(); ++c) {
        const ClassPRF& r = rep.prf.per_class[c];
        s += rep.class_names[c] + "," + f6(r.precision) + "," + f6(r.recall) + "," + f6(r.f1) +
             "," + std::to_string(r.support) + ",";
        s += rep.auc.defined[c] ? f6(rep.auc.per_class[c]) : std::string("undefined");
        s += "\n";
    }
    s += "\nconfusion rows=true cols=pred\n";
    s += confusion_to_csv(rep.cm, rep.class_names);
    if (!rep.warnings.empty()) {
        s += "\nwarnings\n";
        for (const auto& w : rep.warnings) s += "- " + w + "\n";
    }
    return s;
}

std::string confusion_to_csv(const ConfusionMatrix& cm, const std::vector<std::string>& names) {
    if (static_cast<int>(names.size()) != cm.k) {
        throw ValueError("confusion_to_csv: name count differs from K");
    }
    std::string s;
    for (const auto& nm : names) s += "," + nm;
    s += "\n";
    for (int t = 0; t < cm.k; ++t) {
        s += names[static_cast<size_t>(t)];
        for (int p = 0; p < cm.k; ++p) s += "," + std::to_string(cm.at(t, p));
        s += "\n";
    }
    return s;
}

std::string roc_points_csv(const Tensor& scores, const std::vector<int>& y_true,
                           const std::vector<std::string>& names) {
    if (scores.rank() != 2) throw ShapeError("roc_points_csv: scores must be [N,K]");
    const int n = scores.dim(0), k = scores.dim(1);
    if (static_cast<int>(names.size()) != k) {
        throw ValueError("roc_points_csv: name count differs from K");
    }
    check_labels(y_true, k, "roc_points_csv");

    std::string s = "class,threshold,fpr,tpr\n";
    for (int c = 0; c < k; ++c) {
        std::int64_t pos = 0;
        for (int v : y_true) pos += v == c ? 1 : 0;
        const std::int64_t neg = n - pos;
        if (pos == 0 || neg == 0) continue;

        std::vector<int> order(static_cast<size_t>(n));
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
            return scores.at2(a, c) > scores.at2(b, c);
        });
        s += names[static_cast<size_t>(c)] + ",inf," + f6(0.0) + "," + f6(0.0) + "\n";
        std::int64_t tp = 0, fp = 0;
        for (int i = 0; i < n;) {
            const float thr = scores.at2(order[static_cast<size_t>(i)], c);
            while (i < n && scores.at2(order[static_cast<size_t>(i)], c) == thr) {
                if (y_true[static_cast<size_t>(order[static_cast<size_t>(i)])] == c) {
                    ++tp;
                } else {
                    ++fp;
                }
                ++i;
            }
            char tbuf[64];
            std::snprintf(tbuf, sizeof(tbuf), "%.6g", static_cast<double>(thr));
            s += names[static_cast<size_t>(c)] + "," + tbuf + "," +
                 f6(static_cast<double>(fp) / static_cast<double>(neg)) + "," +
                 f6(static_cast<double>(tp) / static_cast<double>(pos)) + "\n";
        }
    }
    return s;
}

} // namespace cxr
