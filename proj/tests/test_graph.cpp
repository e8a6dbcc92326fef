#include <doctest.h>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "cxr/graph.hpp"
#include "cxr/kernels.hpp"
#include "cxr/trainer.hpp"
#include "oracles.hpp"

using namespace cxr;
namespace fs = std::filesystem;

namespace {

LayerSpec conv(std::string id, int ch, int k, int stride = 1, int pad = 0) {
    LayerSpec s;
    s.id = std::move(id);
    s.kind = LayerKind::Conv;
    s.out_channels = ch;
    s.kernel = k;
    s.stride = stride;
    s.padding = pad;
    return s;
}

LayerSpec simple(std::string id, LayerKind kind) {
    LayerSpec s;
    s.id = std::move(id);
    s.kind = kind;
    return s;
}

LayerSpec dense(std::string id, int units, float l2 = 0.0f) {
    LayerSpec s;
    s.id = std::move(id);
    s.kind = LayerKind::Dense;
    s.units = units;
    s.l2 = l2;
    return s;
}

LayerSpec maxpool(std::string id, int window, int stride) {
    LayerSpec s;
    s.id = std::move(id);
    s.kind = LayerKind::MaxPool;
    s.kernel = window;
    s.stride = stride;
    return s;
}

ModelGraph small_graph(std::vector<LayerSpec> layers, int c = 1, int h = 8, int w = 8,
                       int k = 4) {
    ModelGraph g;
    g.layers = std::move(layers);
    g.in_channels = c;
    g.in_h = h;
    g.in_w = w;
    g.num_classes = k;
    g.class_names = {"A", "B", "C", "D"};
    g.class_names.resize(static_cast<size_t>(k));
    return g;
}

std::vector<int> cycle_labels(int n, int k) {
    std::vector<int> y(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) y[static_cast<size_t>(i)] = i % k;
    return y;
}

} // namespace

TEST_CASE("inferred shapes match actual forward shapes on all templates") {
    for (Template t : {Template::MiniVgg, Template::MiniResnet, Template::MiniXception,
                       Template::MiniEffnetHead}) {
        CAPTURE(template_name(t));
        BuiltModel m = build_model(t, 1, 32, 32);
        const auto shapes = m.graph.infer_shapes();
        REQUIRE(shapes.size() == m.graph.layers.size());

        Rng rng(3);
        Tensor batch = oracles::random_tensor({2, 1, 32, 32}, rng, 0.0, 1.0);
        ForwardResult fr = forward(m.graph, m.params, batch, Mode::Eval);
        REQUIRE(fr.trace.layers.size() == m.graph.layers.size());

        for (size_t i = 0; i < shapes.size(); ++i) {
            std::vector<int> want = {2};
            want.insert(want.end(), shapes[i].begin(), shapes[i].end());
            CAPTURE(i);
            CHECK(fr.trace.layers[i].output.shape() == want);
        }
        CHECK(fr.probs.shape() == std::vector<int>{2, 4});
    }
}

TEST_CASE("effnet head has the published structure") {
    BuiltModel m = build_model(Template::MiniEffnetHead, 1, 64, 64);
    const auto& ls = m.graph.layers;
    REQUIRE(ls.size() >= 6);
    const size_t n = ls.size();
    CHECK(ls[n - 6].kind == LayerKind::GlobalAvgPool);
    CHECK(ls[n - 5].kind == LayerKind::Dropout);
    CHECK(ls[n - 5].rate == doctest::Approx(0.4f));
    CHECK(ls[n - 4].kind == LayerKind::Dense);
    CHECK(ls[n - 4].units == 225);
    CHECK(ls[n - 4].l2 > 0.0f);
    CHECK(ls[n - 3].kind == LayerKind::ReLU);
    CHECK(ls[n - 2].kind == LayerKind::Dense);
    CHECK(ls[n - 2].units == 4);
    CHECK(ls[n - 1].kind == LayerKind::SoftmaxOutput);
    for (size_t i = n - 6; i < n; ++i) CHECK(ls[i].head);
    CHECK(m.graph.preprocess.range == PreprocessSpec::Range::Raw255);

    // head overrides reach the specs
    BuiltModel o = build_model(Template::MiniEffnetHead, 1, 64, 64,
                               HeadConfig{.units = 96, .activation = "linear", .dropout = 0.1f,
                                          .l2 = 0.5f});
    // the relu is dropped for a linear head, shifting the tail indices
    const auto& ol = o.graph.layers;
    CHECK(ol.size() == ls.size() - 1);
    CHECK(ol[ol.size() - 3].kind == LayerKind::Dense);
    CHECK(ol[ol.size() - 3].units == 96);
    CHECK(ol[ol.size() - 3].l2 == doctest::Approx(0.5f));
    CHECK(ol[ol.size() - 4].kind == LayerKind::Dropout);
    CHECK(ol[ol.size() - 4].rate == doctest::Approx(0.1f));

    CHECK(build_model(Template::MiniVgg, 1, 64, 64, HeadConfig{.units = 77})
              .graph.layers[ /* dense sits 4 from the end */
                  build_model(Template::MiniVgg, 1, 64, 64).graph.layers.size() - 4]
              .units == 77);

    CHECK_THROWS_AS(build_model(Template::MiniVgg, 1, 16, 16), ShapeError);
    CHECK_THROWS_AS(build_model(Template::MiniVgg, 1, 64, 64, HeadConfig{.activation = "tanh"}),
                    ValueError);
}

TEST_CASE("param_count matches hand formulas") {
    // dense 4->3: weight 12 + bias 3
    ModelGraph g = small_graph({simple("f", LayerKind::Flatten), dense("d", 3),
                                simple("s", LayerKind::SoftmaxOutput)},
                               1, 2, 2, 3);
    g.class_names = {"A", "B", "C"};
    ParamStore p = init_params(g, 1);
    ParamCounts c = param_count(g, p);
    CHECK(c.total == 15);
    CHECK(c.trainable == 15);
    CHECK(c.frozen == 0);
    CHECK(c.bn_state == 0);

    // conv 2->3 k3 (57) + bn over 3 channels (6 affine + 6 running)
    ModelGraph g2 = small_graph({conv("c", 3, 3, 1, 1), simple("bn", LayerKind::BatchNorm),
                                 simple("g", LayerKind::GlobalAvgPool), dense("d", 4),
                                 simple("s", LayerKind::SoftmaxOutput)},
                                2, 8, 8, 4);
    ParamStore p2 = init_params(g2, 1);
    ParamCounts c2 = param_count(g2, p2);
    CHECK(c2.total == 57 + 12 + (3 * 4 + 4));
    CHECK(c2.bn_state == 6);
    CHECK(c2.trainable == c2.total - 6);
    CHECK(c2.frozen == 6);
}

TEST_CASE("eval forward is deterministic and per-sample independent") {
    BuiltModel m = build_model(Template::MiniResnet, 1, 32, 32);
    Rng rng(5);
    Tensor batch = oracles::random_tensor({3, 1, 32, 32}, rng, 0.0, 1.0);

    Tensor a = forward(m.graph, m.params, batch, Mode::Eval).probs;
    Tensor b = forward(m.graph, m.params, batch, Mode::Eval).probs;
    CHECK(std::memcmp(a.values().data(), b.values().data(),
                      sizeof(float) * static_cast<size_t>(a.numel())) == 0);

    // batch rows equal the single-image results bitwise
    for (int i = 0; i < 3; ++i) {
        Tensor one({1, 1, 32, 32});
        for (std::int64_t e = 0; e < one.numel(); ++e) one[e] = batch[i * one.numel() + e];
        Tensor pi = forward(m.graph, m.params, one, Mode::Eval).probs;
        for (int ci = 0; ci < 4; ++ci) CHECK(a.at2(i, ci) == pi.at2(0, ci));
    }
}

TEST_CASE("train mode equals eval mode when nothing is stochastic") {
    // mini_vgg has no dropout and no batchnorm
    BuiltModel m = build_model(Template::MiniVgg, 1, 32, 32);
    Rng rng(6), drop(1);
    Tensor batch = oracles::random_tensor({2, 1, 32, 32}, rng, 0.0, 1.0);
    Tensor tr = forward(m.graph, m.params, batch, Mode::Train, &drop).probs;
    Tensor ev = forward(m.graph, m.params, batch, Mode::Eval).probs;
    CHECK(oracles::mad(tr, ev) == 0.0);
}

TEST_CASE("fixed-weight forward matches the composed oracle") {
    ModelGraph g = small_graph({simple("f", LayerKind::Flatten), dense("d", 3),
                                simple("s", LayerKind::SoftmaxOutput)},
                               1, 2, 2, 3);
    g.class_names = {"A", "B", "C"};
    ParamStore p = init_params(g, 1);
    Rng rng(7);
    Tensor w = oracles::random_tensor({4, 3}, rng);
    Tensor b = oracles::random_tensor({3}, rng);
    p.layers[1].find("weight")->value = w;
    p.layers[1].find("bias")->value = b;

    Tensor x = oracles::random_tensor({2, 1, 2, 2}, rng);
    Tensor flat({2, 4});
    for (std::int64_t i = 0; i < x.numel(); ++i) flat[i] = x[i];

    ForwardResult fr = forward(g, p, x, Mode::Eval);
    Tensor want = oracles::softmax(oracles::dense(flat, w, b));
    CHECK(oracles::mad(fr.probs, want) <= 1e-6);
}

TEST_CASE("finite differences validate every layer kind") {
    struct Case {
        const char* name;
        ModelGraph graph;
        Mode mode;
    };
    std::vector<Case> cases;

    cases.push_back({"conv+maxpool+dense",
                     small_graph({conv("c1", 3, 3, 1, 1), simple("r1", LayerKind::ReLU),
                                  maxpool("p1", 2, 2), simple("f", LayerKind::Flatten),
                                  dense("d", 4), simple("s", LayerKind::SoftmaxOutput)}, 1, 6, 6),
                     Mode::Eval});

    {
        // one relu only: every extra relu multiplies the kink-free draws away
        LayerSpec sep;
        sep.id = "sep";
        sep.kind = LayerKind::DepthwiseSeparableConv;
        sep.out_channels = 3;
        sep.kernel = 3;
        sep.padding = 1;
        cases.push_back({"sepconv+gap",
                         small_graph({conv("c1", 2, 3, 1, 1), sep, simple("r1", LayerKind::ReLU),
                                      simple("g", LayerKind::GlobalAvgPool), dense("d", 4),
                                      simple("s", LayerKind::SoftmaxOutput)}, 1, 6, 6),
                         Mode::Eval});
    }

    cases.push_back({"batchnorm train mode",
                     small_graph({conv("c1", 3, 3, 1, 1), simple("bn", LayerKind::BatchNorm),
                                  simple("r1", LayerKind::ReLU), simple("f", LayerKind::Flatten),
                                  dense("d", 4), simple("s", LayerKind::SoftmaxOutput)}, 1, 6, 6),
                     Mode::Train});

    cases.push_back({"batchnorm eval mode (running stats)",
                     small_graph({conv("c1", 3, 3, 1, 1), simple("bn", LayerKind::BatchNorm),
                                  simple("r1", LayerKind::ReLU), simple("f", LayerKind::Flatten),
                                  dense("d", 4), simple("s", LayerKind::SoftmaxOutput)}, 1, 6, 6),
                     Mode::Eval});

    {
        LayerSpec drop;
        drop.id = "do";
        drop.kind = LayerKind::Dropout;
        drop.rate = 0.3f;
        cases.push_back({"dropout train mode",
                         small_graph({conv("c1", 3, 3, 1, 1), simple("r1", LayerKind::ReLU), drop,
                                      simple("f", LayerKind::Flatten), dense("d", 4),
                                      simple("s", LayerKind::SoftmaxOutput)}, 1, 6, 6),
                         Mode::Train});
    }

    {
        LayerSpec add;
        add.id = "add";
        add.kind = LayerKind::ResidualAdd;
        add.skip_source = "r1";
        cases.push_back({"residual add",
                         small_graph({conv("c1", 3, 3, 1, 1), simple("r1", LayerKind::ReLU),
                                      conv("c2", 3, 3, 1, 1), add,
                                      simple("f", LayerKind::Flatten), dense("d", 4),
                                      simple("s", LayerKind::SoftmaxOutput)}, 1, 6, 6),
                         Mode::Eval});
    }

    for (const auto& cs : cases) {
        const std::string case_name = cs.name;
        CAPTURE(case_name);
        for (std::uint64_t seed = 1; seed <= 5; ++seed) {
            CAPTURE(seed);
            ParamStore params = init_params(cs.graph, seed);
            if (cs.name == std::string("batchnorm eval mode (running stats)")) {
                Rng rr(seed + 100);
                for (auto& t : params.layers[1].tensors) {
                    if (t.name == "running_mean")
                        t.value = oracles::random_tensor(t.value.shape(), rr, -0.5, 0.5);
                    if (t.name == "running_var")
                        t.value = oracles::random_tensor(t.value.shape(), rr, 0.5, 2.0);
                }
            }
            // central differences need a kink-free probe segment: redraw the
            // input until no relu preactivation sits near zero
            std::uint64_t input_seed = seed * 31 + 1;
            Tensor x({1});
            bool safe = false;
            for (int tries = 0; tries < 200 && !safe; ++tries, input_seed += 977) {
                Rng rng(input_seed);
                x = oracles::random_tensor({2, 1, 6, 6}, rng, 0.0, 1.0);
                safe = oracles::fd_probe_safe(cs.graph, params, x, cs.mode, seed);
            }
            REQUIRE(safe);
            const auto y = cycle_labels(2, 4);
            const auto fd = oracles::fd_check(cs.graph, params, x, y, cs.mode, 1e-3, seed);
            CHECK(fd.checked > 0);
            CHECK(fd.max_rel < 1e-3);
        }
    }
}

TEST_CASE("finite differences hold on every built template") {
    for (Template t : {Template::MiniVgg, Template::MiniResnet, Template::MiniXception,
                       Template::MiniEffnetHead}) {
        CAPTURE(template_name(t));
        BuiltModel m = build_model(t, 1, 32, 32, HeadConfig{.units = 8}, 11);
        Rng rng(13);
        Tensor x = oracles::random_tensor({2, 1, 32, 32}, rng, 0.0, 1.0);
        const auto y = cycle_labels(2, 4);

        // subsample elements; complete per-kind coverage lives above. A big
        // template always has a few preactivations near a relu kink, where a
        // finite difference is invalid by construction, so tolerate isolated
        // outliers here and bound how wrong they may be.
        const auto fd = oracles::fd_check(m.graph, m.params, x, y, Mode::Eval, 1e-3, 17, 101);
        CHECK(fd.checked > 0);
        CHECK(fd.bad * 8 <= fd.checked); // the large majority of probes clean
        CHECK(fd.max_rel < 0.1);
    }
}

TEST_CASE("cross-entropy softmax gradient is (p - onehot)/N") {
    Rng rng(19);
    Tensor probs({3, 4});
    for (int n = 0; n < 3; ++n) {
        double s = 0;
        for (int c = 0; c < 4; ++c) {
            probs.at2(n, c) = static_cast<float>(rng.uniform(0.05, 1.0));
            s += probs.at2(n, c);
        }
        for (int c = 0; c < 4; ++c) probs.at2(n, c) = static_cast<float>(probs.at2(n, c) / s);
    }
    const std::vector<int> y = {2, 0, 3};
    Tensor g = ce_softmax_grad(probs, y);
    for (int n = 0; n < 3; ++n)
        for (int c = 0; c < 4; ++c) {
            const float want = (probs.at2(n, c) - (y[static_cast<size_t>(n)] == c ? 1.0f : 0.0f)) / 3.0f;
            CHECK(g.at2(n, c) == doctest::Approx(want).epsilon(1e-6));
        }
}

TEST_CASE("zero upstream gradient produces zero everywhere") {
    BuiltModel m = build_model(Template::MiniVgg, 1, 32, 32, HeadConfig{.units = 8});
    Rng rng(23);
    Tensor x = oracles::random_tensor({2, 1, 32, 32}, rng, 0.0, 1.0);
    ForwardResult fr = forward(m.graph, m.params, x, Mode::Eval);
    Tensor zero({2, 4});
    Gradients g = backward(m.graph, m.params, fr.trace, zero,
                           static_cast<int>(m.graph.layers.size()) - 2);
    for (const auto& lp : g.param_grads)
        for (const auto& t : lp.tensors)
            for (std::int64_t i = 0; i < t.value.numel(); ++i) CHECK(t.value[i] == 0.0f);
}

TEST_CASE("residual add with a zeroed branch is the identity") {
    LayerSpec add;
    add.id = "add";
    add.kind = LayerKind::ResidualAdd;
    add.skip_source = "r1";
    ModelGraph g = small_graph({conv("c1", 4, 3, 1, 1), simple("r1", LayerKind::ReLU),
                                conv("c2", 4, 3, 1, 1), add, simple("f", LayerKind::Flatten),
                                dense("d", 4), simple("s", LayerKind::SoftmaxOutput)});
    ParamStore p = init_params(g, 3);
    p.layers[2].find("weight")->value = Tensor({4, 4, 3, 3});
    p.layers[2].find("bias")->value = Tensor({4});

    Rng rng(29);
    Tensor x = oracles::random_tensor({2, 1, 8, 8}, rng, 0.0, 1.0);
    ForwardResult fr = forward(g, p, x, Mode::Eval);
    CHECK(oracles::mad(fr.trace.layers[3].output, fr.trace.layers[1].output) == 0.0);
}

TEST_CASE("freeze marks the right tensors") {
    BuiltModel m = build_model(Template::MiniEffnetHead, 1, 32, 32);

    freeze(m.graph, m.params, 0);
    for (size_t i = 0; i < m.graph.layers.size(); ++i) {
        for (const auto& t : m.params.layers[i].tensors) {
            const bool is_state = t.name == "running_mean" || t.name == "running_var";
            if (is_state) {
                CHECK(!t.trainable);
            } else {
                CHECK(t.trainable == m.graph.layers[i].head);
            }
        }
    }

    // monotone in trainable_last, and counts always reconcile
    std::int64_t prev = -1;
    for (int n = 0; n <= 8; ++n) {
        freeze(m.graph, m.params, n);
        ParamCounts c = param_count(m.graph, m.params);
        CHECK(c.total == c.trainable + c.frozen);
        CHECK(c.trainable >= prev);
        prev = c.trainable;
    }

    // beyond the backbone depth everything but bn state is trainable
    freeze(m.graph, m.params, 1000);
    ParamCounts c = param_count(m.graph, m.params);
    CHECK(c.frozen == c.bn_state);

    CHECK_THROWS_AS(freeze(m.graph, m.params, -1), ValueError);
}

TEST_CASE("model file round-trips bit-exactly") {
    const fs::path dir = fs::temp_directory_path() / "cxr_graph_io_test";
    fs::create_directories(dir);
    const fs::path path = dir / "model.cxr";

    BuiltModel m = build_model(Template::MiniXception, 1, 32, 32, HeadConfig{.units = 48}, 21);
    freeze(m.graph, m.params, 1); // give the file a nontrivial trainable pattern
    save_model(path, m.graph, m.params);
    BuiltModel r = load_model(path);

    CHECK(r.graph.template_name == m.graph.template_name);
    CHECK(r.graph.in_channels == m.graph.in_channels);
    CHECK(r.graph.in_h == m.graph.in_h);
    CHECK(r.graph.num_classes == m.graph.num_classes);
    CHECK(r.graph.class_names == m.graph.class_names);
    CHECK(r.graph.preprocess.size == m.graph.preprocess.size);
    CHECK(r.graph.preprocess.channels == m.graph.preprocess.channels);
    CHECK(static_cast<int>(r.graph.preprocess.range) ==
          static_cast<int>(m.graph.preprocess.range));
    REQUIRE(r.graph.layers.size() == m.graph.layers.size());
    for (size_t i = 0; i < m.graph.layers.size(); ++i) {
        CHECK(r.graph.layers[i].id == m.graph.layers[i].id);
        CHECK(r.graph.layers[i].kind == m.graph.layers[i].kind);
        CHECK(r.graph.layers[i].out_channels == m.graph.layers[i].out_channels);
        CHECK(r.graph.layers[i].kernel == m.graph.layers[i].kernel);
        CHECK(r.graph.layers[i].stride == m.graph.layers[i].stride);
        CHECK(r.graph.layers[i].padding == m.graph.layers[i].padding);
        CHECK(r.graph.layers[i].units == m.graph.layers[i].units);
        CHECK(r.graph.layers[i].rate == m.graph.layers[i].rate);
        CHECK(r.graph.layers[i].l2 == m.graph.layers[i].l2);
        CHECK(r.graph.layers[i].skip_source == m.graph.layers[i].skip_source);
        CHECK(r.graph.layers[i].head == m.graph.layers[i].head);
    }
    REQUIRE(r.params.layers.size() == m.params.layers.size());
    for (size_t i = 0; i < m.params.layers.size(); ++i) {
        REQUIRE(r.params.layers[i].tensors.size() == m.params.layers[i].tensors.size());
        for (size_t j = 0; j < m.params.layers[i].tensors.size(); ++j) {
            const auto& a = m.params.layers[i].tensors[j];
            const auto& b = r.params.layers[i].tensors[j];
            CHECK(a.name == b.name);
            CHECK(a.trainable == b.trainable);
            REQUIRE(a.value.shape() == b.value.shape());
            CHECK(std::memcmp(a.value.values().data(), b.value.values().data(),
                              sizeof(float) * static_cast<size_t>(a.value.numel())) == 0);
        }
    }

    // forward agreement, bitwise
    Rng rng(31);
    Tensor x = oracles::random_tensor({2, 1, 32, 32}, rng, 0.0, 1.0);
    Tensor pa = forward(m.graph, m.params, x, Mode::Eval).probs;
    Tensor pb = forward(r.graph, r.params, x, Mode::Eval).probs;
    CHECK(oracles::mad(pa, pb) == 0.0);

    SUBCASE("corrupt files raise DataError") {
        // truncation
        std::ifstream in(path, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)), {});
        in.close();
        const fs::path trunc = dir / "trunc.cxr";
        std::ofstream(trunc, std::ios::binary).write(bytes.data(),
                                                     static_cast<long>(bytes.size() / 2));
        CHECK_THROWS_AS(load_model(trunc), DataError);

        // bad magic
        std::string bad = bytes;
        bad[0] = 'X';
        const fs::path badp = dir / "bad.cxr";
        std::ofstream(badp, std::ios::binary).write(bad.data(), static_cast<long>(bad.size()));
        CHECK_THROWS_AS(load_model(badp), DataError);

        CHECK_THROWS_AS(load_model(dir / "missing.cxr"), DataError);
    }

    fs::remove_all(dir);
}

TEST_CASE("structural invariants are enforced") {
    // duplicate ids
    ModelGraph dup = small_graph({conv("c", 4, 3, 1, 1), simple("c", LayerKind::ReLU),
                                  simple("f", LayerKind::Flatten), dense("d", 4),
                                  simple("s", LayerKind::SoftmaxOutput)});
    CHECK_THROWS_AS(dup.infer_shapes(), ShapeError);

    // dangling skip source
    LayerSpec add;
    add.id = "add";
    add.kind = LayerKind::ResidualAdd;
    add.skip_source = "nowhere";
    ModelGraph skip = small_graph({conv("c", 4, 3, 1, 1), add, simple("f", LayerKind::Flatten),
                                   dense("d", 4), simple("s", LayerKind::SoftmaxOutput)});
    CHECK_THROWS_AS(skip.infer_shapes(), ShapeError);

    // final layer must be the softmax output
    ModelGraph tail = small_graph({conv("c", 4, 3, 1, 1), simple("f", LayerKind::Flatten),
                                   dense("d", 4)});
    CHECK_THROWS_AS(tail.infer_shapes(), ShapeError);

    // dense directly on a 4d activation
    ModelGraph nd = small_graph({conv("c", 4, 3, 1, 1), dense("d", 4),
                                 simple("s", LayerKind::SoftmaxOutput)});
    CHECK_THROWS_AS(nd.infer_shapes(), ShapeError);
}

TEST_CASE("find_layer and last_conv_layer") {
    BuiltModel m = build_model(Template::MiniEffnetHead, 1, 32, 32);
    CHECK(m.graph.find_layer("nope") == -1);
    const int tc = m.graph.find_layer("top_conv");
    REQUIRE(tc >= 0);
    CHECK(m.graph.last_conv_layer() == tc);
}
