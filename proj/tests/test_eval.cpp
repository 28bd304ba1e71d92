#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "aedet/eval.h"

#include "oracles.h"

#include <random>

using namespace aedet;

namespace {

std::mt19937_64 rng(4242);

BoxLabel box_xyxy(double x0, double y0, double x1, double y1, int cls = 0) {
    BoxLabel b;
    b.class_id = cls;
    b.cx = (x0 + x1) / 2;
    b.cy = (y0 + y1) / 2;
    b.w = x1 - x0;
    b.h = y1 - y0;
    return b;
}

BoxLabel random_box(int num_classes) {
    std::uniform_real_distribution<double> uni(0, 1);
    BoxLabel b;
    b.class_id = static_cast<int>(uni(rng) * num_classes);
    b.cx = 0.2 + 0.6 * uni(rng);
    b.cy = 0.2 + 0.6 * uni(rng);
    b.w = 0.05 + 0.3 * uni(rng);
    b.h = 0.05 + 0.3 * uni(rng);
    return b;
}

}  // namespace

TEST_CASE("iou worked examples") {
    BoxLabel a = box_xyxy(0.0, 0.0, 0.5, 0.5);
    CHECK(iou(a, a) == doctest::Approx(1.0));
    // half-width shift: intersection 0.125, union 0.375
    BoxLabel shifted = box_xyxy(0.25, 0.0, 0.75, 0.5);
    CHECK(iou(a, shifted) == doctest::Approx(1.0 / 3.0));
    // edge contact only
    BoxLabel touching = box_xyxy(0.5, 0.0, 1.0, 0.5);
    CHECK(iou(a, touching) == doctest::Approx(0.0));
    // disjoint
    CHECK(iou(a, box_xyxy(0.6, 0.6, 0.9, 0.9)) == doctest::Approx(0.0));
    // containment: 0.25^2 / 0.5^2
    CHECK(iou(a, box_xyxy(0.125, 0.125, 0.375, 0.375)) == doctest::Approx(0.25));
}

TEST_CASE("nms agrees with the quadratic oracle on 200 random sets") {
    std::uniform_real_distribution<double> uni(0, 1);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<Detection> dets;
        int n = static_cast<int>(uni(rng) * 12);
        for (int i = 0; i < n; ++i) {
            Detection d;
            d.box = random_box(2);
            d.class_id = d.box.class_id;
            d.score = uni(rng);
            dets.push_back(d);
        }
        double thr = 0.2 + 0.6 * uni(rng);
        auto got = nms(dets, thr);
        auto want = oracles::nms(dets, thr);
        REQUIRE(got.size() == want.size());
        for (std::size_t i = 0; i < got.size(); ++i) {
            CHECK(got[i].score == want[i].score);
            CHECK(got[i].box.cx == want[i].box.cx);
        }
    }
    CHECK_THROWS_AS(nms({}, 0.0), MetricError);
    CHECK_THROWS_AS(nms({}, 1.5), MetricError);
}

TEST_CASE("nms keeps different classes apart") {
    Detection a, b;
    a.box = box_xyxy(0.1, 0.1, 0.5, 0.5, 0);
    a.class_id = 0;
    a.score = 0.9;
    b.box = box_xyxy(0.1, 0.1, 0.5, 0.5, 1);
    b.class_id = 1;
    b.score = 0.8;
    CHECK(nms({a, b}, 0.5).size() == 2);
}

TEST_CASE("average precision worked examples") {
    BoxLabel g = box_xyxy(0.2, 0.2, 0.6, 0.6);
    std::vector<GroundTruth> gts{{0, g}};
    auto det = [&](double score, BoxLabel b) {
        Detection d;
        d.box = b;
        d.class_id = b.class_id;
        d.score = score;
        return ScoredDetection{0, d};
    };
    SUBCASE("single perfect detection") {
        CHECK(average_precision({det(0.9, g)}, gts, 0.5) == doctest::Approx(1.0));
    }
    SUBCASE("high-scoring miss then a hit: AP 0.5") {
        BoxLabel miss = box_xyxy(0.7, 0.7, 0.9, 0.9);
        CHECK(average_precision({det(0.9, miss), det(0.8, g)}, gts, 0.5) ==
              doctest::Approx(0.5));
    }
    SUBCASE("half the ground truth found: AP 51/101") {
        std::vector<GroundTruth> two{{0, g}, {1, g}};
        CHECK(average_precision({det(0.9, g)}, two, 0.5) == doctest::Approx(51.0 / 101.0));
    }
    SUBCASE("no detections, nonempty ground truth") {
        CHECK(average_precision({}, gts, 0.5) == doctest::Approx(0.0));
    }
    SUBCASE("voc11 differs as expected on the half-recall case") {
        std::vector<GroundTruth> two{{0, g}, {1, g}};
        CHECK(average_precision({det(0.9, g)}, two, 0.5, ApInterp::Voc11) ==
              doctest::Approx(6.0 / 11.0));
    }
    SUBCASE("duplicate detections of one object: second is a false positive") {
        double ap = average_precision({det(0.9, g), det(0.8, g)}, gts, 0.5);
        CHECK(ap == doctest::Approx(1.0));  // recall 1 reached at precision 1
    }
}

TEST_CASE("average precision agrees with the brute-force oracle on 1000 random cases") {
    std::uniform_real_distribution<double> uni(0, 1);
    for (int trial = 0; trial < 1000; ++trial) {
        int num_images = 1 + static_cast<int>(uni(rng) * 3);
        std::vector<GroundTruth> gts;
        int ng = static_cast<int>(uni(rng) * 6);
        for (int i = 0; i < ng; ++i)
            gts.push_back({static_cast<int>(uni(rng) * num_images), random_box(2)});
        std::vector<ScoredDetection> dets;
        int nd = static_cast<int>(uni(rng) * 8);
        for (int i = 0; i < nd; ++i) {
            Detection d;
            // perturb a GT box half the time so matches actually occur
            if (!gts.empty() && uni(rng) < 0.5) {
                const auto& g = gts[static_cast<std::size_t>(uni(rng) * gts.size())];
                d.box = g.box;
                d.box.cx += (uni(rng) - 0.5) * 0.1;
                d.box.w *= 0.8 + 0.4 * uni(rng);
                d.class_id = d.box.class_id;
                d.score = uni(rng);
                dets.push_back({g.image_id, d});
            } else {
                d.box = random_box(2);
                d.class_id = d.box.class_id;
                d.score = uni(rng);
                dets.push_back({static_cast<int>(uni(rng) * num_images), d});
            }
        }
        double thr = 0.3 + 0.6 * uni(rng);
        double got = average_precision(dets, gts, thr);
        double want = oracles::average_precision(dets, gts, thr);
        REQUIRE(got == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("threshold curve is non-increasing on random inputs") {
    std::uniform_real_distribution<double> uni(0, 1);
    for (int trial = 0; trial < 300; ++trial) {
        std::vector<GroundTruth> gts;
        std::vector<ScoredDetection> dets;
        int ng = 1 + static_cast<int>(uni(rng) * 5);
        for (int i = 0; i < ng; ++i) {
            GroundTruth g{0, random_box(2)};
            gts.push_back(g);
            if (uni(rng) < 0.8) {
                Detection d;
                d.box = g.box;
                d.box.cx += (uni(rng) - 0.5) * 0.08;
                d.box.cy += (uni(rng) - 0.5) * 0.08;
                d.box.w *= 0.85 + 0.3 * uni(rng);
                d.class_id = d.box.class_id;
                d.score = uni(rng);
                dets.push_back({0, d});
            }
        }
        EvalReport r = evaluate_detections(dets, gts, 2);
        for (std::size_t k = 1; k < r.threshold_curve.size(); ++k)
            CHECK(r.threshold_curve[k].second <= r.threshold_curve[k - 1].second + 1e-12);
        CHECK(r.threshold_curve.front().second == doctest::Approx(r.ap50));
    }
}

TEST_CASE("a perfect detector scores AP 1.0 everywhere") {
    std::uniform_real_distribution<double> uni(0, 1);
    std::vector<GroundTruth> gts;
    std::vector<ScoredDetection> dets;
    bool bucket_seen[3] = {false, false, false};
    for (int i = 0; i < 40; ++i) {
        BoxLabel b = random_box(3);
        if (i % 3 == 0) b.w = b.h = 0.08;   // small bucket
        if (i % 3 == 1) b.w = b.h = 0.2;    // medium
        if (i % 3 == 2) b.w = b.h = 0.35;   // large
        gts.push_back({i, b});
        double area = b.area();
        bucket_seen[area < 0.01 ? 0 : (area <= 0.09 ? 1 : 2)] = true;
        Detection d;
        d.box = b;
        d.class_id = b.class_id;
        d.score = 0.5 + 0.5 * uni(rng);
        dets.push_back({i, d});
    }
    REQUIRE(bucket_seen[0]);
    REQUIRE(bucket_seen[1]);
    REQUIRE(bucket_seen[2]);
    EvalReport r = evaluate_detections(dets, gts, 3);
    CHECK(r.ap == doctest::Approx(1.0));
    CHECK(r.ap50 == doctest::Approx(1.0));
    CHECK(r.ap75 == doctest::Approx(1.0));
    CHECK(r.ap50_small == doctest::Approx(1.0));
    CHECK(r.ap50_medium == doctest::Approx(1.0));
    CHECK(r.ap50_large == doctest::Approx(1.0));
}

TEST_CASE("size buckets ignore detections matched to out-of-bucket ground truth") {
    // one small and one large GT; the detector finds only the large one
    BoxLabel small = box_xyxy(0.1, 0.1, 0.18, 0.18);
    BoxLabel large = box_xyxy(0.4, 0.4, 0.8, 0.8);
    std::vector<GroundTruth> gts{{0, small}, {0, large}};
    Detection d;
    d.box = large;
    d.class_id = 0;
    d.score = 0.9;
    EvalReport r = evaluate_detections({{0, d}}, gts, 1);
    CHECK(r.ap50_large == doctest::Approx(1.0));
    CHECK(r.ap50_small == doctest::Approx(0.0));
}

TEST_CASE("report json round trip") {
    EvalReport r;
    r.ap = 0.42;
    r.ap50 = 0.7;
    r.ap75 = 0.4;
    r.ap50_small = 0.1;
    r.ap50_medium = 0.5;
    r.ap50_large = 0.9;
    for (int k = 0; k < 10; ++k) r.threshold_curve.emplace_back(0.5 + 0.05 * k, 0.7 - 0.05 * k);
    EvalReport back = report_from_json(report_to_json(r));
    CHECK(back.ap == r.ap);
    CHECK(back.ap50 == r.ap50);
    CHECK(back.ap75 == r.ap75);
    CHECK(back.ap50_medium == r.ap50_medium);
    REQUIRE(back.threshold_curve.size() == 10);
    CHECK(back.threshold_curve[3].second == r.threshold_curve[3].second);
}
