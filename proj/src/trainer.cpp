#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "cxr/errors.hpp"
#include "cxr/metrics.hpp"
#include "cxr/trainer.hpp"

namespace cxr {

namespace {

Tensor gather_rows(const Tensor& images, const std::vector<int>& idx) {
    const std::int64_t row = images.numel() / images.dim(0);
    std::vector<int> shape = images.shape();
    shape[0] = static_cast<int>(idx.size());
    Tensor out(shape);
    for (size_t b = 0; b < idx.size(); ++b) {
        const float* src = images.data() + static_cast<std::int64_t>(idx[b]) * row;
        std::copy(src, src + row, out.data() + static_cast<std::int64_t>(b) * row);
    }
    return out;
}

int pre_softmax_index(const ModelGraph& model) {
    if (model.layers.size() < 2 || model.layers.back().kind != LayerKind::SoftmaxOutput) {
        throw ShapeError("trainer: model must end in softmax-output");
    }
    return static_cast<int>(model.layers.size()) - 2;
}

void add_l2_grads(const ModelGraph& model, const ParamStore& params,
                  std::vector<LayerParams>& grads, float l2_override) {
    for (size_t i = 0; i < model.layers.size(); ++i) {
        const LayerSpec& spec = model.layers[i];
        if (spec.l2 <= 0.0f && l2_override < 0.0f) continue;
        if (spec.l2 <= 0.0f) continue; // override rescales flagged layers only
        const float coeff = l2_override >= 0.0f ? l2_override : spec.l2;
        const ParamTensor* w = params.layers[i].find("weight");
        if (!w) continue;
        for (auto& gt : grads[i].tensors) {
            if (gt.name != "weight") continue;
            for (std::int64_t e = 0; e < w->value.numel(); ++e) {
                gt.value.data()[e] += 2.0f * coeff * w->value.data()[e];
            }
        }
    }
}

void check_data(const ModelGraph& model, const LabeledData& d, const char* split) {
    if (d.count() == 0) throw ValueError(std::string("fit: empty ") + split + " split");
    if (d.images.rank() != 4 || d.images.dim(0) != d.count()) {
        throw ShapeError(std::string("fit: ") + split + " images must be [N,C,H,W] with one "
                         "row per label");
    }
    for (int y : d.labels) {
        if (y < 0 || y >= model.num_classes) {
            throw ValueError(std::string("fit: ") + split + " label out of range");
        }
    }
}

} // namespace

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("train config: epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("train config: batch_size must be >= 1");
    if (base_lr < 0.0f) throw ConfigError("train config: base_lr must be >= 0");
    if (optimizer != "adam" && optimizer != "sgd") {
        throw ConfigError("train config: optimizer must be adam or sgd");
    }
    if (adam_beta1 < 0.0f || adam_beta1 >= 1.0f || adam_beta2 < 0.0f || adam_beta2 >= 1.0f) {
        throw ConfigError("train config: adam betas must lie in [0,1)");
    }
    if (adam_eps <= 0.0f) throw ConfigError("train config: adam_eps must be positive");
    if (plateau_factor <= 0.0f || plateau_factor > 1.0f) {
        throw ConfigError("train config: plateau_factor must lie in (0,1]");
    }
    if (plateau_patience < 1 || early_stop_patience < 1) {
        throw ConfigError("train config: patience values must be >= 1");
    }
    if (plateau_min_lr < 0.0f) throw ConfigError("train config: plateau_min_lr must be >= 0");
    if (min_delta < 0.0f) throw ConfigError("train config: min_delta must be >= 0");
}

double cross_entropy(const Tensor& probs, const std::vector<int>& labels) {
    if (probs.rank() != 2) throw ShapeError("cross_entropy: probs must be [N,K]");
    const int n = probs.dim(0), k = probs.dim(1);
    if (static_cast<size_t>(n) != labels.size()) {
        throw ValueError("cross_entropy: probs rows and label count differ");
    }
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
        const int y = labels[static_cast<size_t>(i)];
        if (y < 0 || y >= k) throw ValueError("cross_entropy: label out of range");
        sum -= std::log(std::max(static_cast<double>(probs.at2(i, y)), 1e-12));
    }
    return n > 0 ? sum / n : 0.0;
}

Tensor ce_softmax_grad(const Tensor& probs, const std::vector<int>& labels) {
    if (probs.rank() != 2) throw ShapeError("ce_softmax_grad: probs must be [N,K]");
    const int n = probs.dim(0), k = probs.dim(1);
    if (static_cast<size_t>(n) != labels.size()) {
        throw ValueError("ce_softmax_grad: probs rows and label count differ");
    }
    Tensor g = probs;
    const float inv_n = 1.0f / static_cast<float>(n);
    for (int i = 0; i < n; ++i) {
        const int y = labels[static_cast<size_t>(i)];
        if (y < 0 || y >= k) throw ValueError("ce_softmax_grad: label out of range");
        g.at2(i, y) -= 1.0f;
        for (int c = 0; c < k; ++c) g.at2(i, c) *= inv_n;
    }
    return g;
}

AdamState AdamState::init(const ParamStore& params) {
    AdamState s;
    s.m.resize(params.layers.size());
    s.v.resize(params.layers.size());
    for (size_t i = 0; i < params.layers.size(); ++i) {
        for (const auto& pt : params.layers[i].tensors) {
            s.m[i].tensors.push_back({pt.name, Tensor(pt.value.shape()), false});
            s.v[i].tensors.push_back({pt.name, Tensor(pt.value.shape()), false});
        }
    }
    return s;
}

void adam_step(ParamStore& params, const std::vector<LayerParams>& grads, AdamState& state,
               float lr, const TrainConfig& cfg) {
    if (grads.size() != params.layers.size() || state.m.size() != params.layers.size()) {
        throw ValueError("adam_step: gradient/state not aligned with params");
    }
    ++state.step;
    const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));

    for (size_t i = 0; i < grads.size(); ++i) {
        for (const auto& gt : grads[i].tensors) {
            ParamTensor* w = params.layers[i].find(gt.name);
            ParamTensor* m = state.m[i].find(gt.name);
            ParamTensor* v = state.v[i].find(gt.name);
            if (!w || !m || !v) throw ValueError("adam_step: unknown gradient tensor " + gt.name);
            if (!w->trainable) continue;
            if (!w->value.same_shape(gt.value)) {
                throw ShapeError("adam_step: gradient shape mismatch for " + gt.name);
            }
            for (std::int64_t e = 0; e < w->value.numel(); ++e) {
                const double g = gt.value.data()[e];
                const double mn = b1 * m->value.data()[e] + (1.0 - b1) * g;
                const double vn = b2 * v->value.data()[e] + (1.0 - b2) * g * g;
                m->value.data()[e] = static_cast<float>(mn);
                v->value.data()[e] = static_cast<float>(vn);
                const double mhat = mn / bc1;
                const double vhat = vn / bc2;
                w->value.data()[e] -= static_cast<float>(
                    static_cast<double>(lr) * mhat / (std::sqrt(vhat) + cfg.adam_eps));
            }
        }
    }
}

void sgd_step(ParamStore& params, const std::vector<LayerParams>& grads, float lr) {
    if (grads.size() != params.layers.size()) {
        throw ValueError("sgd_step: gradients not aligned with params");
    }
    for (size_t i = 0; i < grads.size(); ++i) {
        for (const auto& gt : grads[i].tensors) {
            ParamTensor* w = params.layers[i].find(gt.name);
            if (!w) throw ValueError("sgd_step: unknown gradient tensor " + gt.name);
            if (!w->trainable) continue;
            if (!w->value.same_shape(gt.value)) {
                throw ShapeError("sgd_step: gradient shape mismatch for " + gt.name);
            }
            for (std::int64_t e = 0; e < w->value.numel(); ++e) {
                w->value.data()[e] -= lr * gt.value.data()[e];
            }
        }
    }
}

PlateauScheduler::PlateauScheduler(float base_lr, float factor, int patience, float min_lr,
                                   float min_delta)
    : lr(base_lr), factor(factor), patience(patience), min_lr(min_lr), min_delta(min_delta) {}

float PlateauScheduler::step(float val_loss) {
    if (!seen_any || val_loss < best - min_delta) {
        best = val_loss;
        seen_any = true;
        bad_epochs = 0;
        return lr;
    }
    ++bad_epochs;
    if (bad_epochs >= patience) {
        lr = std::max(lr * factor, min_lr);
        bad_epochs = 0;
    }
    return lr;
}

EarlyStopper::EarlyStopper(int patience, float min_delta)
    : patience(patience), min_delta(min_delta) {}

bool EarlyStopper::should_stop(float val_loss) {
    improved_last = !seen_any || val_loss < best - min_delta;
    if (improved_last) {
        best = val_loss;
        seen_any = true;
        bad_epochs = 0;
        return false;
    }
    ++bad_epochs;
    return bad_epochs >= patience;
}

double l2_penalty(const ModelGraph& model, const ParamStore& params, float l2_override) {
    double pen = 0.0;
    for (size_t i = 0; i < model.layers.size(); ++i) {
        if (model.layers[i].l2 <= 0.0f) continue;
        const double coeff = l2_override >= 0.0f ? l2_override : model.layers[i].l2;
        const ParamTensor* w = params.layers[i].find("weight");
        if (!w) continue;
        double ss = 0.0;
        for (std::int64_t e = 0; e < w->value.numel(); ++e) {
            ss += static_cast<double>(w->value.data()[e]) * w->value.data()[e];
        }
        pen += coeff * ss;
    }
    return pen;
}

EvalOutput evaluate(const ModelGraph& model, ParamStore& params, const LabeledData& data,
                    int batch_size) {
    check_data(model, data, "eval");
    if (batch_size < 1) throw ValueError("evaluate: batch_size must be >= 1");

    const int n = data.count();
    EvalOutput out;
    out.probs = Tensor({n, model.num_classes});
    for (int start = 0; start < n; start += batch_size) {
        const int b = std::min(batch_size, n - start);
        std::vector<int> idx(static_cast<size_t>(b));
        std::iota(idx.begin(), idx.end(), start);
        Tensor xb = gather_rows(data.images, idx);
        ForwardResult fr = forward(model, params, xb, Mode::Eval);
        std::copy(fr.probs.data(), fr.probs.data() + fr.probs.numel(),
                  out.probs.data() + static_cast<std::int64_t>(start) * model.num_classes);
    }
    out.loss = cross_entropy(out.probs, data.labels);
    std::int64_t correct = 0;
    for (int i = 0; i < n; ++i) {
        correct += argmax_row(out.probs, i) == data.labels[static_cast<size_t>(i)] ? 1 : 0;
    }
    out.accuracy = static_cast<double>(correct) / n;
    return out;
}

History fit(const ModelGraph& model, ParamStore& params, const LabeledData& train,
            const LabeledData& val, const TrainConfig& cfg,
            const std::function<void(const EpochRecord&)>& on_epoch) {
    cfg.validate();
    check_data(model, train, "train");
    check_data(model, val, "val");
    const int seed_layer = pre_softmax_index(model);

    Rng rng(cfg.seed);
    AdamState adam = AdamState::init(params);
    PlateauScheduler sched(cfg.base_lr, cfg.plateau_factor, cfg.plateau_patience,
                           cfg.plateau_min_lr, cfg.min_delta);
    EarlyStopper stopper(cfg.early_stop_patience, cfg.min_delta);
    ParamStore best_params = params;
    float lr = cfg.base_lr;

    const int n = train.count();
    std::vector<int> perm(static_cast<size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);

    History hist;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        rng.shuffle(perm);
        double loss_sum = 0.0;
        std::int64_t correct = 0;
        for (int start = 0; start < n; start += cfg.batch_size) {
            const int b = std::min(cfg.batch_size, n - start);
            std::vector<int> idx(perm.begin() + start, perm.begin() + start + b);
            std::vector<int> yb(static_cast<size_t>(b));
            for (int i = 0; i < b; ++i) yb[static_cast<size_t>(i)] = train.labels[static_cast<size_t>(idx[static_cast<size_t>(i)])];

            Tensor xb = gather_rows(train.images, idx);
            ForwardResult fr = forward(model, params, xb, Mode::Train, &rng);
            loss_sum += (cross_entropy(fr.probs, yb) + l2_penalty(model, params, cfg.l2_coeff)) * b;
            for (int i = 0; i < b; ++i) {
                correct += argmax_row(fr.probs, i) == yb[static_cast<size_t>(i)] ? 1 : 0;
            }

            Gradients grads = backward(model, params, fr.trace,
                                       ce_softmax_grad(fr.probs, yb), seed_layer);
            add_l2_grads(model, params, grads.param_grads, cfg.l2_coeff);
            if (lr > 0.0f) {
                if (cfg.optimizer == "adam") {
                    adam_step(params, grads.param_grads, adam, lr, cfg);
                } else {
                    sgd_step(params, grads.param_grads, lr);
                }
            }
        }

        EvalOutput ev = evaluate(model, params, val, cfg.batch_size);
        const double val_loss = ev.loss + l2_penalty(model, params, cfg.l2_coeff);
        double val_auc = 0.0;
        try {
            val_auc = auc_ovr(ev.probs, val.labels).macro;
        } catch (const ValueError&) {
            // single-class val split: AUC undefined, recorded as 0
        }
        hist.records.push_back({epoch, loss_sum / n, static_cast<double>(correct) / n, val_loss,
                                ev.accuracy, val_auc, static_cast<double>(lr)});
        if (on_epoch) on_epoch(hist.records.back());

        const float next_lr = sched.step(static_cast<float>(val_loss));
        const bool stop = stopper.should_stop(static_cast<float>(val_loss));
        if (stopper.improved_last) best_params = params;
        lr = next_lr;
        if (stop) break;
    }
    params = std::move(best_params);
    return hist;
}

std::string History::to_csv() const {
    std::string s = "epoch,train_loss,train_acc,val_loss,val_acc,val_auc,lr\n";
    char buf[256];
    for (const auto& r : records) {
        std::snprintf(buf, sizeof(buf), "%d,%.6f,%.6f,%.6f,%.6f,%.6f,%.8g\n", r.epoch,
                      r.train_loss, r.train_acc, r.val_loss, r.val_acc, r.val_auc, r.lr);
        s += buf;
    }
    return s;
}

void History::write_csv(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("history: cannot open " + path.string() + " for writing");
    const std::string s = to_csv();
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
    if (!out.flush()) throw Error("history: write failed for " + path.string());
}

GridResult grid_search(Template t, const GridSpec& grid, const LabeledData& train,
                       const LabeledData& val, const TrainConfig& base, int budget_epochs) {
    if (grid.head_units.empty() || grid.lrs.empty() || grid.activations.empty()) {
        throw ConfigError("grid_search: every grid axis needs at least one value");
    }
    if (train.images.rank() != 4) throw ShapeError("grid_search: train images must be [N,C,H,W]");

    GridResult out;
    size_t cell_index = 0;
    for (int units : grid.head_units) {
        for (float lr : grid.lrs) {
            for (const std::string& act : grid.activations) {
                TrainConfig cfg = base;
                cfg.base_lr = lr;
                if (budget_epochs > 0) cfg.epochs = std::min(cfg.epochs, budget_epochs);
                cfg.seed = Rng::mix(base.seed, cell_index);

                BuiltModel built = build_model(t, train.images.dim(1), train.images.dim(2),
                                               train.images.dim(3),
                                               HeadConfig{.units = units, .activation = act},
                                               cfg.seed, 4);
                GridCell cell;
                cell.head_units = units;
                cell.lr = lr;
                cell.activation = act;
                cell.history = fit(built.graph, built.params, train, val, cfg);
                cell.final_val_acc = cell.history.records.back().val_acc;
                cell.final_val_loss = cell.history.records.back().val_loss;
                out.cells.push_back(std::move(cell));
                ++cell_index;
            }
        }
    }
    for (size_t i = 1; i < out.cells.size(); ++i) {
        const GridCell& best = out.cells[out.best_index];
        const GridCell& c = out.cells[i];
        if (c.final_val_acc > best.final_val_acc ||
            (c.final_val_acc == best.final_val_acc && c.final_val_loss < best.final_val_loss)) {
            out.best_index = i;
        }
    }
    return out;
}

} // namespace cxr
