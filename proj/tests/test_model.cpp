#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "aedet/gradcheck.h"
#include "aedet/model.h"

#include <random>
#include <sstream>

using namespace aedet;

namespace {

std::mt19937_64 rng(777);

template <typename T>
Tensor<T> random_tensor(Shape s, double lo = -1, double hi = 1) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Tensor<T> t(s);
    for (auto& x : t.v) x = static_cast<T>(dist(rng));
    return t;
}

double logit(double p) { return std::log(p / (1.0 - p)); }

}  // namespace

TEST_CASE("detector shape arithmetic") {
    DetectorConfig c;
    c.validate();
    CHECK(c.head_stride() == 16);
    CHECK(c.grid() == 4);
    CHECK(c.head_channels() == 16);

    DetectorConfig two;
    two.stage_widths = {8, 16};
    two.input_size = 32;
    two.validate();
    CHECK(two.head_stride() == 4);
    CHECK(two.grid() == 8);

    DetectorConfig bad = c;
    bad.input_size = 40;  // not divisible by 16
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = c;
    bad.stage_widths.clear();
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = c;
    bad.anchors = {{0.0, 1.0}};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = c;
    bad.num_classes = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("encode_targets basics") {
    DetectorConfig c;  // grid 4, anchors (1,1) and (2.5,2.5)
    SUBCASE("center cell and anchor choice") {
        // small box near cell (1,2): picks anchor 0
        BoxLabel small{1, 0.60, 0.40, 0.10, 0.12};
        // big box near cell (3,1): 0.5*4 = 2 cells wide, closer to anchor 1
        BoxLabel big{2, 0.30, 0.80, 0.50, 0.38};
        GridTarget t = encode_targets({small, big}, c);
        std::size_t s_small = t.slot(1, 2, 0);
        std::size_t s_big = t.slot(3, 1, 1);
        REQUIRE(t.responsible[s_small] == 1);
        REQUIRE(t.responsible[s_big] == 1);
        CHECK(t.cls[s_small] == 1);
        CHECK(t.cls[s_big] == 2);
        CHECK(t.tx[s_small] == doctest::Approx(0.60 * 4 - 2));
        CHECK(t.ty[s_small] == doctest::Approx(0.40 * 4 - 1));
        CHECK(t.tw[s_small] == doctest::Approx(std::log(0.10 * 4 / 1.0)));
        CHECK(t.tw[s_big] == doctest::Approx(std::log(0.50 * 4 / 2.5)));
        CHECK(t.th[s_big] == doctest::Approx(std::log(0.38 * 4 / 2.5)));
        int marked = 0;
        for (auto r : t.responsible) marked += r;
        CHECK(marked == 2);
    }
    SUBCASE("slot conflict keeps the larger box and warns") {
        BoxLabel a{0, 0.55, 0.55, 0.10, 0.10};
        BoxLabel b{1, 0.60, 0.60, 0.20, 0.20};
        std::ostringstream warn;
        GridTarget t = encode_targets({b, a}, c, &warn);
        CHECK(warn.str().find("duplicate assignment") != std::string::npos);
        std::size_t s = t.slot(2, 2, 0);
        REQUIRE(t.responsible[s] == 1);
        CHECK(t.cls[s] == 1);  // larger box wins regardless of order
        std::ostringstream warn2;
        GridTarget t2 = encode_targets({a, b}, c, &warn2);
        CHECK(t2.cls[s] == 1);
        CHECK(t2.tw[s] == t.tw[s]);
    }
    SUBCASE("order invariance without conflicts") {
        std::vector<BoxLabel> boxes{{0, 0.15, 0.15, 0.1, 0.1},
                                    {1, 0.60, 0.40, 0.12, 0.09},
                                    {2, 0.85, 0.85, 0.45, 0.45}};
        GridTarget t1 = encode_targets(boxes, c);
        std::reverse(boxes.begin(), boxes.end());
        GridTarget t2 = encode_targets(boxes, c);
        CHECK(t1.responsible == t2.responsible);
        CHECK(t1.tx == t2.tx);
        CHECK(t1.tw == t2.tw);
        CHECK(t1.cls == t2.cls);
    }
}

TEST_CASE("encode then decode recovers the boxes") {
    DetectorConfig c;
    const int G = c.grid();
    const int C = c.num_classes;
    std::uniform_real_distribution<double> uni(0, 1);
    for (int trial = 0; trial < 30; ++trial) {
        // one box per distinct cell, centers kept off cell boundaries
        std::vector<BoxLabel> boxes;
        int n = 1 + trial % 3;
        std::vector<int> used;
        while (static_cast<int>(boxes.size()) < n) {
            BoxLabel b;
            b.class_id = static_cast<int>(uni(rng) * C);
            b.cx = (static_cast<int>(uni(rng) * G) + 0.2 + 0.6 * uni(rng)) / G;
            b.cy = (static_cast<int>(uni(rng) * G) + 0.2 + 0.6 * uni(rng)) / G;
            b.w = 0.05 + 0.1 * uni(rng);
            b.h = 0.05 + 0.1 * uni(rng);
            if (b.x0() < 0 || b.x1() > 1 || b.y0() < 0 || b.y1() > 1) continue;
            int cell = static_cast<int>(b.cy * G) * G + static_cast<int>(b.cx * G);
            if (std::find(used.begin(), used.end(), cell) != used.end()) continue;
            used.push_back(cell);
            boxes.push_back(b);
        }
        GridTarget t = encode_targets(boxes, c);

        // build the raw head tensor whose decode inverts the encoding
        Tensor<float> raw(Shape{1, c.head_channels(), G, G});
        for (float& v : raw.v) v = -20.0f;  // objectness everywhere off
        for (int ci = 0; ci < G; ++ci)
            for (int cj = 0; cj < G; ++cj)
                for (int a = 0; a < static_cast<int>(c.anchors.size()); ++a) {
                    std::size_t s = t.slot(ci, cj, a);
                    if (!t.responsible[s]) continue;
                    int base = a * (5 + C);
                    raw.at(0, base + 0, ci, cj) = static_cast<float>(logit(t.tx[s]));
                    raw.at(0, base + 1, ci, cj) = static_cast<float>(logit(t.ty[s]));
                    raw.at(0, base + 2, ci, cj) = t.tw[s];
                    raw.at(0, base + 3, ci, cj) = t.th[s];
                    raw.at(0, base + 4, ci, cj) = 20.0f;
                    raw.at(0, base + 5 + t.cls[s], ci, cj) = 20.0f;
                }
        std::vector<Detection> dets = decode_predictions(raw, c, 0.5);
        REQUIRE(dets.size() == boxes.size());
        for (const BoxLabel& b : boxes) {
            bool found = false;
            for (const Detection& d : dets) {
                if (d.class_id != b.class_id) continue;
                if (std::abs(d.box.cx - b.cx) < 1e-5 && std::abs(d.box.cy - b.cy) < 1e-5 &&
                    std::abs(d.box.w - b.w) < 1e-5 && std::abs(d.box.h - b.h) < 1e-5)
                    found = true;
            }
            CHECK(found);
        }
    }
}

TEST_CASE("detection loss matches the direct formula, 2x2 grid") {
    DetectorConfig c;
    c.stage_widths = {8};
    c.input_size = 4;  // grid 2
    c.anchors = {{1.5, 1.5}};
    c.num_classes = 2;
    REQUIRE(c.grid() == 2);

    auto sigmoid = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
    LossWeights w;

    for (int trial = 0; trial < 20; ++trial) {
        std::vector<BoxLabel> boxes{{trial % 2, 0.3, 0.3, 0.2, 0.25},
                                    {(trial + 1) % 2, 0.7, 0.8, 0.3, 0.2}};
        GridTarget t = encode_targets(boxes, c);
        Tensor<double> raw = random_tensor<double>(Shape{1, 7, 2, 2}, -2, 2);

        Tape<double> tape;
        auto rv = make_var<double>(raw, true);
        LossParts<double> parts = detection_loss(tape, rv, t, w);

        double box = 0, obj = 0, cls = 0;
        for (int ci = 0; ci < 2; ++ci)
            for (int cj = 0; cj < 2; ++cj) {
                std::size_t s = t.slot(ci, cj, 0);
                double to = raw.at(0, 4, ci, cj);
                if (t.responsible[s]) {
                    double ex = sigmoid(raw.at(0, 0, ci, cj)) - t.tx[s];
                    double ey = sigmoid(raw.at(0, 1, ci, cj)) - t.ty[s];
                    double ew = raw.at(0, 2, ci, cj) - t.tw[s];
                    double eh = raw.at(0, 3, ci, cj) - t.th[s];
                    box += w.lambda_coord * (ex * ex + ey * ey + ew * ew + eh * eh);
                    obj += (sigmoid(to) - 1) * (sigmoid(to) - 1);
                    double z = std::exp(raw.at(0, 5, ci, cj)) + std::exp(raw.at(0, 6, ci, cj));
                    double p = std::exp(raw.at(0, 5 + t.cls[s], ci, cj)) / z;
                    cls += -std::log(p);
                } else {
                    obj += w.lambda_noobj * sigmoid(to) * sigmoid(to);
                }
            }
        CHECK(parts.box == doctest::Approx(box).epsilon(1e-10));
        CHECK(parts.obj == doctest::Approx(obj).epsilon(1e-10));
        CHECK(parts.cls == doctest::Approx(cls).epsilon(1e-10));
        CHECK(parts.total->val.v[0] == doctest::Approx(box + obj + cls).epsilon(1e-10));
    }
}

TEST_CASE("detection loss gradient passes finite differences") {
    DetectorConfig c;
    c.stage_widths = {8};
    c.input_size = 4;
    c.anchors = {{1.5, 1.5}, {0.8, 1.2}};
    c.num_classes = 2;
    std::vector<BoxLabel> boxes{{0, 0.3, 0.3, 0.2, 0.25}, {1, 0.7, 0.8, 0.3, 0.2}};
    GridTarget t = encode_targets(boxes, c);
    for (int trial = 0; trial < 5; ++trial) {
        Tensor<double> raw = random_tensor<double>(Shape{1, 14, 2, 2}, -2, 2);
        double err = finite_diff_check(
            [&](Tape<double>& tape, const VarPtr<double>& x) {
                return detection_loss(tape, x, t).total;
            },
            raw, 1e-5);
        CHECK(err < 1e-6);
    }
}

TEST_CASE("loss on a batch item ignores the rest of the batch") {
    DetectorConfig c;
    c.stage_widths = {8};
    c.input_size = 4;
    c.anchors = {{1.5, 1.5}};
    c.num_classes = 2;
    std::vector<BoxLabel> boxes{{0, 0.3, 0.3, 0.2, 0.25}};
    GridTarget t = encode_targets(boxes, c);

    Tensor<double> batch = random_tensor<double>(Shape{3, 7, 2, 2}, -2, 2);
    Tensor<double> single(Shape{1, 7, 2, 2});
    for (int ch = 0; ch < 7; ++ch)
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j) single.at(0, ch, i, j) = batch.at(1, ch, i, j);

    Tape<double> t1, t2;
    auto bv = make_var<double>(batch, true);
    auto sv = make_var<double>(single, true);
    auto lb = detection_loss(t1, bv, t, {}, 1);
    auto ls = detection_loss(t2, sv, t, {}, 0);
    CHECK(std::abs(lb.total->val.v[0] - ls.total->val.v[0]) < 1e-6);

    t1.backward(lb.total);
    // items 0 and 2 receive no gradient at all
    for (int n : {0, 2})
        for (int ch = 0; ch < 7; ++ch)
            for (int i = 0; i < 2; ++i)
                for (int j = 0; j < 2; ++j) CHECK(bv->grad.at(n, ch, i, j) == 0.0);
}

TEST_CASE("model forward shapes and the excitation hook") {
    DetectorConfig c;
    ExcitationConfig ae;
    ae.stage = 2;
    ae.schedule.max_iteration = 10;

    Model plain = Model::build(c, std::nullopt, 42);
    Model excited = Model::build(c, ae, 42);

    Tensor<float> images = random_tensor<float>(Shape{2, 3, 64, 64}, 0, 1);
    std::vector<std::vector<BoxLabel>> boxes{{BoxLabel{0, 0.4, 0.4, 0.3, 0.3}},
                                             {BoxLabel{1, 0.6, 0.5, 0.2, 0.4}}};

    Tape<float> tape;
    auto iv = make_var<float>(images, false);
    auto raw = plain.forward(tape, iv, nullptr, 0.0);
    CHECK(raw->val.shape == Shape{2, 16, 4, 4});

    SUBCASE("identity once the schedule has run out, labels not needed") {
        Tape<float> ta, tb;
        auto a = plain.forward(ta, make_var<float>(images, false), nullptr, 0.0);
        auto b = excited.forward(tb, make_var<float>(images, false), nullptr, 10.0);
        CHECK(a->val.v == b->val.v);
    }
    SUBCASE("active excitation changes the output") {
        Tape<float> ta, tb;
        auto a = plain.forward(ta, make_var<float>(images, false), nullptr, 0.0);
        auto b = excited.forward(tb, make_var<float>(images, false), &boxes, 0.0);
        CHECK(a->val.v != b->val.v);
    }
    SUBCASE("invalid AE stage rejected") {
        ExcitationConfig bad = ae;
        bad.stage = 5;
        CHECK_THROWS_AS(Model::build(c, bad, 1), ConfigError);
    }
}

TEST_CASE("state dict round trip restores forward output bit for bit") {
    DetectorConfig c;
    c.stage_widths = {8, 16};
    c.input_size = 16;
    Model m = Model::build(c, std::nullopt, 7);
    Tensor<float> images = random_tensor<float>(Shape{1, 3, 16, 16}, 0, 1);

    Tape<float> t1;
    auto before = m.forward(t1, make_var<float>(images, false), nullptr, 0.0);

    TensorMap saved = m.state_dict();
    Model fresh = Model::build(c, std::nullopt, 991);
    fresh.load_state_dict(saved);
    Tape<float> t2;
    auto after = fresh.forward(t2, make_var<float>(images, false), nullptr, 0.0);
    CHECK(before->val.v == after->val.v);

    saved.erase("conv0.w");
    Model other = Model::build(c, std::nullopt, 3);
    CHECK_THROWS_AS(other.load_state_dict(saved), CheckpointError);
}
