#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "cxr/config.hpp"
#include "cxr/dataio.hpp"
#include "cxr/errors.hpp"
#include "cxr/gradcam.hpp"
#include "cxr/metrics.hpp"
#include "cxr/trainer.hpp"

namespace fs = std::filesystem;
using namespace cxr;

namespace {

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out.flush()) throw Error("write failed for " + path.string());
}

FixtureCounts parse_per_class(const std::string& s) {
    FixtureCounts c;
    if (std::sscanf(s.c_str(), "%d,%d,%d", &c.train, &c.val, &c.test) != 3) {
        throw ConfigError("--per-class expects train,val,test (e.g. 50,20,20)");
    }
    return c;
}

Template parse_template(const std::string& name) {
    try {
        return template_from_name(name);
    } catch (const ValueError& e) {
        throw ConfigError(e.what());
    }
}

PreprocessSpec::Range parse_range(const std::string& r) {
    if (r == "unit") return PreprocessSpec::Range::Unit;
    if (r == "raw255") return PreprocessSpec::Range::Raw255;
    throw ConfigError("--range must be unit or raw255");
}

void cmd_stats(const std::string& root) {
    const DatasetManifest m = scan_dataset(root);
    std::cout << distribution_to_text(class_distribution(m));
    for (const auto& w : m.warnings) std::cerr << "warning: " << w << "\n";
}

void cmd_gen_fixture(const std::string& out, const FixtureCounts& counts, int size,
                     std::uint64_t seed, bool with_confound) {
    gen_fixture(out, counts, size, seed, with_confound);
    const DatasetManifest m = scan_dataset(out);
    std::cout << "wrote " << m.total() << " images under " << out << "\n";
}

void cmd_train(const RunConfig& cfg) {
    if (cfg.dataset_root.empty()) {
        throw ConfigError("dataset root required (--root or dataset.root in the config)");
    }
    const Template tpl = parse_template(cfg.model_template);

    PreprocessSpec prep;
    prep.size = cfg.preprocess_size_set ? cfg.preprocess.size : 64;
    prep.channels = cfg.preprocess_channels_set ? cfg.preprocess.channels : 1;
    prep.range = cfg.preprocess_range_set
                     ? cfg.preprocess.range
                     : (tpl == Template::MiniEffnetHead ? PreprocessSpec::Range::Raw255
                                                        : PreprocessSpec::Range::Unit);

    const DatasetManifest m = scan_dataset(cfg.dataset_root);
    for (const auto& w : m.warnings) std::cerr << "warning: " << w << "\n";
    const LabeledData train = to_labeled(load_split(m, "train", prep));
    const LabeledData val = to_labeled(load_split(m, "val", prep));

    BuiltModel built = build_model(tpl, prep.channels, prep.size, prep.size,
                                   HeadConfig{.units = cfg.head_units,
                                              .activation = cfg.head_activation},
                                   cfg.model_seed);
    built.graph.preprocess = prep;
    if (cfg.trainable_last >= 0) freeze(built.graph, built.params, cfg.trainable_last);

    const ParamCounts counts = param_count(built.graph, built.params);
    std::cout << "model " << cfg.model_template << ": " << counts.total << " params ("
              << counts.trainable << " trainable, " << counts.frozen << " frozen)\n";

    const History hist =
        fit(built.graph, built.params, train, val, cfg.train, [&](const EpochRecord& r) {
            std::printf("epoch %d/%d  train_loss %.4f acc %.4f  val_loss %.4f acc %.4f auc %.4f"
                        "  lr %g\n",
                        r.epoch, cfg.train.epochs, r.train_loss, r.train_acc, r.val_loss,
                        r.val_acc, r.val_auc, r.lr);
            std::fflush(stdout);
        });

    fs::create_directories(cfg.output_dir);
    save_model(fs::path(cfg.output_dir) / "model.cxr", built.graph, built.params);
    hist.write_csv(fs::path(cfg.output_dir) / "history.csv");
    std::cout << "wrote " << cfg.output_dir << "/model.cxr and history.csv\n";
}

void cmd_eval(const std::string& model_file, const std::string& root, const std::string& split,
              const std::string& out_dir, int batch_size) {
    BuiltModel built = load_model(model_file);
    const DatasetManifest m = scan_dataset(root, built.graph.class_names);
    const ImageBatch batch = load_split(m, split, built.graph.preprocess);
    const LabeledData data = to_labeled(batch);

    const EvalOutput ev = evaluate(built.graph, built.params, data, batch_size);
    const EvalReport rep = report(ev.probs, data.labels, built.graph.class_names);
    const std::string text = report_to_text(rep);
    std::cout << text;

    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        write_text(fs::path(out_dir) / "metrics.txt", text);
        write_text(fs::path(out_dir) / "confusion.csv",
                   confusion_to_csv(rep.cm, built.graph.class_names));
        write_text(fs::path(out_dir) / "roc_points.csv",
                   roc_points_csv(ev.probs, data.labels, built.graph.class_names));
        std::cout << "wrote metrics.txt, confusion.csv, roc_points.csv under " << out_dir << "\n";
    }
}

void cmd_explain(const std::string& model_file, const std::string& root,
                 const std::string& split, int first_n, const std::vector<std::string>& images,
                 const std::string& layer, float alpha, const std::string& out_dir) {
    BuiltModel built = load_model(model_file);

    ImageBatch batch;
    const std::vector<int>* labels = nullptr;
    if (!images.empty()) {
        std::vector<fs::path> files(images.begin(), images.end());
        batch = load_files(files, built.graph.preprocess);
    } else {
        if (root.empty()) throw ConfigError("explain needs --images or --root");
        const DatasetManifest m = scan_dataset(root, built.graph.class_names);
        const std::int64_t avail = m.split(split).count();
        if (avail == 0) throw DataError("split " + split + " is empty");
        std::vector<int> idx(static_cast<size_t>(std::min<std::int64_t>(first_n, avail)));
        for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
        batch = load_batch(m, split, idx, built.graph.preprocess);
        labels = &batch.labels;
    }

    const auto items = batch_explain(built.graph, built.params, batch.images, labels, out_dir,
                                     alpha, layer);
    for (const auto& it : items) {
        std::printf("%s  pred %s (%.2f)\n", it.filename.c_str(), it.pred_label.c_str(),
                    it.confidence);
    }
    std::cout << "wrote " << items.size() << " overlays + manifest.csv under " << out_dir << "\n";
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"cxrlab: train, evaluate and Grad-CAM-explain small chest-X-ray classifiers"};
    app.require_subcommand(1);

    // stats
    auto* stats = app.add_subcommand("stats", "Print the class distribution table");
    std::string stats_root;
    stats->add_option("--root", stats_root, "dataset root")->required();

    // gen-fixture
    auto* genf = app.add_subcommand("gen-fixture", "Generate the synthetic fixture dataset");
    std::string gen_out = "fixture";
    std::string gen_per_class = "50,20,20";
    int gen_size = 64;
    std::uint64_t gen_seed = 7;
    bool gen_confound = false;
    genf->add_option("--out", gen_out, "output root");
    genf->add_option("--per-class", gen_per_class, "train,val,test counts per class");
    genf->add_option("--size", gen_size, "square image size");
    genf->add_option("--seed", gen_seed, "generator seed");
    genf->add_flag("--with-confound", gen_confound, "corner-mark class 0 (shortcut probe)");

    // train
    auto* train = app.add_subcommand("train", "Train a model, write model.cxr + history.csv");
    std::string tr_config, tr_root, tr_template, tr_activation, tr_optimizer, tr_out, tr_range;
    int tr_epochs = 0, tr_batch = 0, tr_head_units = 0, tr_trainable_last = 0, tr_size = 0,
        tr_channels = 0, tr_plateau_patience = 0, tr_early_patience = 0;
    double tr_lr = 0.0, tr_l2 = 0.0, tr_plateau_factor = 0.0, tr_plateau_min_lr = 0.0,
           tr_min_delta = 0.0;
    std::uint64_t tr_seed = 0, tr_model_seed = 0;
    train->add_option("--config", tr_config, "JSON config file");
    train->add_option("--root", tr_root, "dataset root");
    train->add_option("--template", tr_template,
                      "mini_vgg | mini_resnet | mini_xception | mini_effnet_head");
    train->add_option("--head-units", tr_head_units, "dense head width (0 = template default)");
    train->add_option("--head-activation", tr_activation, "relu | linear");
    train->add_option("--trainable-last", tr_trainable_last,
                      "train only the last N backbone layers (head always trains)");
    train->add_option("--model-seed", tr_model_seed, "weight init seed");
    train->add_option("--epochs", tr_epochs, "epochs");
    train->add_option("--batch-size", tr_batch, "batch size");
    train->add_option("--lr", tr_lr, "base learning rate");
    train->add_option("--optimizer", tr_optimizer, "adam | sgd");
    train->add_option("--l2", tr_l2, "override L2 coefficient on flagged layers");
    train->add_option("--plateau-factor", tr_plateau_factor, "plateau lr factor");
    train->add_option("--plateau-patience", tr_plateau_patience, "plateau patience");
    train->add_option("--plateau-min-lr", tr_plateau_min_lr, "plateau lr floor");
    train->add_option("--min-delta", tr_min_delta, "improvement threshold");
    train->add_option("--early-stop-patience", tr_early_patience, "early stopping patience");
    train->add_option("--seed", tr_seed, "training seed (shuffle + dropout)");
    train->add_option("--out", tr_out, "output dir");
    train->add_option("--size", tr_size, "preprocess size");
    train->add_option("--range", tr_range, "unit | raw255");
    train->add_option("--channels", tr_channels, "preprocess channels (1 or 3)");

    // eval
    auto* eval = app.add_subcommand("eval", "Evaluate a model on a split");
    std::string ev_model, ev_root, ev_split = "test", ev_out;
    int ev_batch = 32;
    eval->add_option("--model", ev_model, "model file")->required();
    eval->add_option("--root", ev_root, "dataset root")->required();
    eval->add_option("--split", ev_split, "train | val | test")
        ->check(CLI::IsMember({"train", "val", "test"}));
    eval->add_option("--out", ev_out, "artifact dir (metrics.txt, confusion.csv, roc_points.csv)");
    eval->add_option("--batch-size", ev_batch, "eval batch size");

    // explain
    auto* expl = app.add_subcommand("explain", "Write Grad-CAM overlay gallery");
    std::string ex_model, ex_root, ex_split = "test", ex_layer, ex_out = "overlays";
    std::vector<std::string> ex_images;
    int ex_first = 4;
    double ex_alpha = 0.5;
    expl->add_option("--model", ex_model, "model file")->required();
    expl->add_option("--root", ex_root, "dataset root");
    expl->add_option("--split", ex_split, "train | val | test")
        ->check(CLI::IsMember({"train", "val", "test"}));
    expl->add_option("--first-n", ex_first, "explain the first N images of the split");
    expl->add_option("--images", ex_images, "explicit image files");
    expl->add_option("--layer", ex_layer, "conv layer id (default: last conv)");
    expl->add_option("--alpha", ex_alpha, "overlay blend weight");
    expl->add_option("--out", ex_out, "output dir");

    try {
        app.parse(argc, argv);

        if (*stats) {
            cmd_stats(stats_root);
        } else if (*genf) {
            cmd_gen_fixture(gen_out, parse_per_class(gen_per_class), gen_size, gen_seed,
                            gen_confound);
        } else if (*train) {
            RunConfig cfg;
            if (train->count("--config")) cfg = load_run_config(tr_config);
            if (train->count("--root")) cfg.dataset_root = tr_root;
            if (train->count("--template")) cfg.model_template = tr_template;
            if (train->count("--head-units")) cfg.head_units = tr_head_units;
            if (train->count("--head-activation")) cfg.head_activation = tr_activation;
            if (train->count("--trainable-last")) cfg.trainable_last = tr_trainable_last;
            if (train->count("--model-seed")) cfg.model_seed = tr_model_seed;
            if (train->count("--epochs")) cfg.train.epochs = tr_epochs;
            if (train->count("--batch-size")) cfg.train.batch_size = tr_batch;
            if (train->count("--lr")) cfg.train.base_lr = static_cast<float>(tr_lr);
            if (train->count("--optimizer")) cfg.train.optimizer = tr_optimizer;
            if (train->count("--l2")) cfg.train.l2_coeff = static_cast<float>(tr_l2);
            if (train->count("--plateau-factor")) {
                cfg.train.plateau_factor = static_cast<float>(tr_plateau_factor);
            }
            if (train->count("--plateau-patience")) cfg.train.plateau_patience = tr_plateau_patience;
            if (train->count("--plateau-min-lr")) {
                cfg.train.plateau_min_lr = static_cast<float>(tr_plateau_min_lr);
            }
            if (train->count("--min-delta")) cfg.train.min_delta = static_cast<float>(tr_min_delta);
            if (train->count("--early-stop-patience")) {
                cfg.train.early_stop_patience = tr_early_patience;
            }
            if (train->count("--seed")) cfg.train.seed = tr_seed;
            if (train->count("--out")) cfg.output_dir = tr_out;
            if (train->count("--size")) {
                cfg.preprocess.size = tr_size;
                cfg.preprocess_size_set = true;
            }
            if (train->count("--range")) {
                cfg.preprocess.range = parse_range(tr_range);
                cfg.preprocess_range_set = true;
            }
            if (train->count("--channels")) {
                cfg.preprocess.channels = tr_channels;
                cfg.preprocess_channels_set = true;
            }
            cmd_train(cfg);
        } else if (*eval) {
            cmd_eval(ev_model, ev_root, ev_split, ev_out, ev_batch);
        } else if (*expl) {
            cmd_explain(ex_model, ex_root, ex_split, ex_first, ex_images, ex_layer,
                        static_cast<float>(ex_alpha), ex_out);
        }
        return 0;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
