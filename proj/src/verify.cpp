#include "aedet/verify.h"

#include <iomanip>
#include <random>

namespace aedet {

namespace {

Tensor<double> random_tensor(Shape s, std::mt19937_64& rng, double lo = -1, double hi = 1) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Tensor<double> t(s);
    for (double& x : t.v) x = dist(rng);
    return t;
}

/// Push values away from zero so leaky_relu kinks and pool ties stay
/// outside the probed neighborhood.
void push_from_kink(Tensor<double>& t, double margin) {
    for (double& x : t.v)
        if (std::abs(x) < margin) x = x < 0 ? -margin : margin;
}

std::vector<std::vector<BoxLabel>> random_boxes(int batch, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> uni(0.2, 0.8);
    std::vector<std::vector<BoxLabel>> boxes(batch);
    for (auto& per_image : boxes) {
        BoxLabel b;
        b.cx = uni(rng);
        b.cy = uni(rng);
        b.w = 0.2 + 0.4 * uni(rng);
        b.h = 0.2 + 0.4 * uni(rng);
        per_image.push_back(b);
    }
    return boxes;
}

}  // namespace

double ae_jacobian_error(Shape shape, double alpha, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Tensor<double> x = random_tensor(shape, rng);
    auto boxes = random_boxes(shape.n, rng);
    Tensor<double> g = detail::batch_mask<double>(boxes, shape.n, shape.h, shape.w);
    const int d = shape.c;

    ExcitationConfig config;
    config.strategy = ExcitationStrategy::ChannelAverageExcite;
    config.schedule.max_iteration = 2;  // alpha(t) matched below

    // Pick t so that alpha(t) equals the requested alpha.
    double t = std::acos(2 * alpha - 1) / M_PI * config.schedule.max_iteration;

    double max_err = 0;
    // One backward pass per output element gives a full Jacobian row.
    for (std::size_t row = 0; row < x.size(); ++row) {
        Tape<double> tape;
        auto xv = make_var<double>(x, true);
        auto out = ae_forward(tape, xv, &boxes, config, t);
        // select output element `row`
        Tensor<double> sel(out->val.shape);
        sel.v[row] = 1;
        tape.backward(weighted_sum(tape, out, sel));

        int n = static_cast<int>(row / (static_cast<std::size_t>(shape.c) * shape.h * shape.w));
        int rem = static_cast<int>(row % (static_cast<std::size_t>(shape.c) * shape.h * shape.w));
        int c = rem / (shape.h * shape.w);
        int ij = rem % (shape.h * shape.w);
        int i = ij / shape.w, j = ij % shape.w;

        for (std::size_t col = 0; col < x.size(); ++col) {
            int n2 = static_cast<int>(col / (static_cast<std::size_t>(shape.c) * shape.h * shape.w));
            int rem2 = static_cast<int>(col % (static_cast<std::size_t>(shape.c) * shape.h * shape.w));
            int c2 = rem2 / (shape.h * shape.w);
            int ij2 = rem2 % (shape.h * shape.w);
            double expected = 0;
            if (n2 == n && ij2 == ij)
                expected = (c2 == c ? 1.0 : 0.0) + alpha * g.at(n, 0, i, j) / d;
            max_err = std::max(max_err, std::abs(xv->grad.v[col] - expected));
        }
    }
    return max_err;
}

bool run_gradient_suite(std::ostream& out, const VerifyOptions& options) {
    std::mt19937_64 rng(options.seed);
    bool ok = true;
    auto report = [&](const std::string& name, double err, double tol) {
        bool pass = err < tol;
        ok = ok && pass;
        out << std::left << std::setw(44) << name << (pass ? "PASS" : "FAIL")
            << "  max err " << std::scientific << std::setprecision(3) << err << " (tol "
            << tol << ")\n"
            << std::defaultfloat;
    };

    auto run_fd = [&](const std::string& name, Shape shape,
                      const std::function<VarPtr<double>(Tape<double>&, const VarPtr<double>&)>& f,
                      bool away_from_kink = false) {
        double worst = 0;
        for (int k = 0; k < options.instances_per_op; ++k) {
            Tensor<double> x = random_tensor(shape, rng);
            if (away_from_kink) push_from_kink(x, 1e-3 + 1e-5);
            worst = std::max(worst, finite_diff_check(f, x));
        }
        report(name, worst, options.fd_tolerance);
    };

    {  // conv2d wrt input, weight fixed
        std::mt19937_64 wr(options.seed + 1);
        auto w = make_var<double>(random_tensor(Shape{3, 2, 3, 3}, wr), false);
        auto b = make_var<double>(random_tensor(Shape{1, 1, 1, 3}, wr), false);
        run_fd("conv2d (input gradient)", Shape{1, 2, 5, 5},
               [&](Tape<double>& t, const VarPtr<double>& x) {
                   auto y = conv2d(t, x, w, b, 1, 1);
                   // square so the check exercises nonunit upstream grads
                   auto y2 = mask_mul(t, y, Tensor<double>(Shape{1, 1, 5, 5}, 0.5));
                   return sum(t, elementwise_add(t, y, y2));
               });
    }
    {  // conv2d wrt weight, input fixed
        std::mt19937_64 ir(options.seed + 2);
        Tensor<double> xin = random_tensor(Shape{2, 2, 6, 6}, ir);
        run_fd("conv2d (weight gradient)", Shape{3, 2, 3, 3},
               [&](Tape<double>& t, const VarPtr<double>& w) {
                   auto x = make_var<double>(xin, false);
                   auto b = make_var<double>(Tensor<double>(Shape{1, 1, 1, 3}), false);
                   return sum(t, conv2d(t, x, w, b, 2, 1));
               });
    }
    run_fd("leaky_relu (away from kink)", Shape{2, 3, 4, 4},
           [](Tape<double>& t, const VarPtr<double>& x) {
               return sum(t, leaky_relu(t, x, 0.1));
           },
           /*away_from_kink=*/true);
    run_fd("max_pool2d (away from ties)", Shape{1, 2, 6, 6},
           [](Tape<double>& t, const VarPtr<double>& x) {
               return sum(t, max_pool2d(t, x, 2, 2));
           });
    run_fd("channel_mean", Shape{2, 4, 3, 3}, [](Tape<double>& t, const VarPtr<double>& x) {
        auto m = channel_mean(t, x);
        return sum(t, mask_mul(t, m, Tensor<double>(Shape{2, 1, 3, 3}, 1.5)));
    });

    {  // detection_loss wrt the raw head tensor
        DetectorConfig cfg;
        cfg.input_size = 32;
        cfg.stage_widths = {8, 8, 8};  // grid 4
        cfg.num_classes = 2;
        double worst = 0;
        for (int k = 0; k < options.instances_per_op; ++k) {
            std::vector<BoxLabel> boxes;
            std::uniform_real_distribution<double> uni(0.2, 0.8);
            for (int b = 0; b < 2; ++b) {
                BoxLabel box;
                box.class_id = k % cfg.num_classes;
                box.cx = uni(rng);
                box.cy = uni(rng);
                box.w = 0.15 + 0.3 * uni(rng);
                box.h = 0.15 + 0.3 * uni(rng);
                boxes.push_back(box);
            }
            GridTarget target = encode_targets(boxes, cfg);
            Shape head{1, cfg.head_channels(), cfg.grid(), cfg.grid()};
            Tensor<double> x = random_tensor(head, rng);
            worst = std::max(
                worst, finite_diff_check(
                           [&](Tape<double>& t, const VarPtr<double>& raw) {
                               return detection_loss<double>(t, raw, target).total;
                           },
                           x));
        }
        report("detection_loss", worst, options.fd_tolerance);
    }

    for (ExcitationStrategy strategy :
         {ExcitationStrategy::PerChannelExcite, ExcitationStrategy::OutOfBoxSuppress,
          ExcitationStrategy::ChannelAverageExcite}) {
        double worst = 0;
        for (int k = 0; k < options.instances_per_op; ++k) {
            Shape s{2, 3, 4, 4};
            Tensor<double> x = random_tensor(s, rng);
            auto boxes = random_boxes(s.n, rng);
            ExcitationConfig config;
            config.strategy = strategy;
            config.schedule.max_iteration = 3;
            worst = std::max(worst,
                             finite_diff_check(
                                 [&](Tape<double>& t, const VarPtr<double>& a) {
                                     auto y = ae_forward(t, a, &boxes, config, 1.0);
                                     auto y2 = mask_mul(t, y, Tensor<double>(Shape{2, 1, 4, 4}, 0.7));
                                     return sum(t, y2);
                                 },
                                 x));
        }
        report(std::string("ae_forward [") + strategy_name(strategy) + "]", worst,
               options.fd_tolerance);
    }

    {
        double err = ae_jacobian_error(Shape{1, 4, 3, 3}, 0.6, options.seed + 7);
        report("ae jacobian closed form", err, options.jacobian_tolerance);
    }
    return ok;
}

}  // namespace aedet
