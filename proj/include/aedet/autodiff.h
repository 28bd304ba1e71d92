#pragma once

#include "aedet/kernels.h"
#include "aedet/tensor.h"

#include <functional>
#include <memory>

namespace aedet {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

template <typename T>
struct Var {
    Tensor<T> val;
    Tensor<T> grad;  // same shape as val when requires_grad
    bool requires_grad = false;

    void zero_grad() { std::fill(grad.v.begin(), grad.v.end(), T(0)); }
};

template <typename T>
using VarPtr = std::shared_ptr<Var<T>>;

template <typename T>
VarPtr<T> make_var(Tensor<T> value, bool requires_grad = false) {
    auto v = std::make_shared<Var<T>>();
    v->val = std::move(value);
    v->requires_grad = requires_grad;
    if (requires_grad) v->grad = Tensor<T>(v->val.shape);
    return v;
}

/// Records backward rules in forward order; backward() replays them in
/// reverse, visiting each exactly once. Gradients accumulate additively
/// across fan-out.
template <typename T>
class Tape {
  public:
    void record(std::function<void()> bwd) { nodes_.push_back(std::move(bwd)); }

    void backward(const VarPtr<T>& loss) {
        if (!loss->requires_grad)
            throw UsageError("backward on a tensor detached from the tape");
        if (loss->val.size() != 1) throw UsageError("backward requires a scalar loss");
        loss->grad.v[0] = T(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    }

    std::size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

  private:
    std::vector<std::function<void()>> nodes_;
};

namespace detail {
template <typename T>
VarPtr<T> make_output(Tensor<T> value, bool needs_grad) {
    return make_var<T>(std::move(value), needs_grad);
}
}  // namespace detail

// --- operations -------------------------------------------------------------

template <typename T>
VarPtr<T> conv2d(Tape<T>& tape, const VarPtr<T>& input, const VarPtr<T>& weight,
                 const VarPtr<T>& bias, int stride, int padding) {
    Tensor<T> out;
    kernels::conv2d_forward(input->val, weight->val, bias->val, stride, padding, out);
    require_finite(out, "conv2d output");
    bool ng = input->requires_grad || weight->requires_grad || bias->requires_grad;
    auto y = detail::make_output(std::move(out), ng);
    if (ng) {
        tape.record([input, weight, bias, y, stride, padding] {
            if (input->requires_grad) {
                Tensor<T> gin;
                kernels::conv2d_backward_input(y->grad, weight->val, stride, padding,
                                               input->val.shape, gin);
                for (std::size_t i = 0; i < gin.size(); ++i) input->grad.v[i] += gin.v[i];
            }
            if (weight->requires_grad || bias->requires_grad) {
                Tensor<T> gw, gb;
                kernels::conv2d_backward_weight(input->val, y->grad, stride, padding,
                                                weight->val.shape, gw, gb);
                if (weight->requires_grad)
                    for (std::size_t i = 0; i < gw.size(); ++i) weight->grad.v[i] += gw.v[i];
                if (bias->requires_grad)
                    for (std::size_t i = 0; i < gb.size(); ++i) bias->grad.v[i] += gb.v[i];
            }
        });
    }
    return y;
}

template <typename T>
VarPtr<T> max_pool2d(Tape<T>& tape, const VarPtr<T>& input, int k, int stride) {
    Tensor<T> out;
    auto argmax = std::make_shared<std::vector<std::size_t>>();
    kernels::max_pool2d_forward(input->val, k, stride, out, *argmax);
    auto y = detail::make_output(std::move(out), input->requires_grad);
    if (y->requires_grad) {
        tape.record([input, y, argmax] {
            Tensor<T> gin;
            kernels::max_pool2d_backward(y->grad, *argmax, input->val.shape, gin);
            for (std::size_t i = 0; i < gin.size(); ++i) input->grad.v[i] += gin.v[i];
        });
    }
    return y;
}

template <typename T>
VarPtr<T> leaky_relu(Tape<T>& tape, const VarPtr<T>& input, T slope) {
    if (slope < T(0) || slope >= T(1)) throw UsageError("leaky_relu slope must be in [0,1)");
    Tensor<T> out(input->val.shape);
    for (std::size_t i = 0; i < out.size(); ++i) {
        T x = input->val.v[i];
        out.v[i] = x > T(0) ? x : slope * x;
    }
    auto y = detail::make_output(std::move(out), input->requires_grad);
    if (y->requires_grad) {
        tape.record([input, y, slope] {
            for (std::size_t i = 0; i < input->val.size(); ++i)
                input->grad.v[i] += y->grad.v[i] * (input->val.v[i] > T(0) ? T(1) : slope);
        });
    }
    return y;
}

/// Elementwise sum; b either matches a's shape or has channels==1 and is
/// broadcast over the channel dim (grad wrt b then sums over channels).
template <typename T>
VarPtr<T> elementwise_add(Tape<T>& tape, const VarPtr<T>& a, const VarPtr<T>& b) {
    const Shape& sa = a->val.shape;
    const Shape& sb = b->val.shape;
    bool broadcast = !(sa == sb);
    if (broadcast &&
        !(sb.c == 1 && sb.n == sa.n && sb.h == sa.h && sb.w == sa.w))
        throw ShapeError("elementwise_add: incompatible shapes " + sa.str() + " vs " + sb.str());
    Tensor<T> out(sa);
    const std::size_t plane = static_cast<std::size_t>(sa.h) * sa.w;
    if (!broadcast) {
        for (std::size_t i = 0; i < out.size(); ++i) out.v[i] = a->val.v[i] + b->val.v[i];
    } else {
        for (int n = 0; n < sa.n; ++n)
            for (int c = 0; c < sa.c; ++c) {
                const T* bp = b->val.data() + static_cast<std::size_t>(n) * plane;
                const T* ap = a->val.data() + (static_cast<std::size_t>(n) * sa.c + c) * plane;
                T* op = out.data() + (static_cast<std::size_t>(n) * sa.c + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) op[i] = ap[i] + bp[i];
            }
    }
    bool ng = a->requires_grad || b->requires_grad;
    auto y = detail::make_output(std::move(out), ng);
    if (ng) {
        tape.record([a, b, y, broadcast, plane] {
            if (a->requires_grad)
                for (std::size_t i = 0; i < a->grad.size(); ++i) a->grad.v[i] += y->grad.v[i];
            if (b->requires_grad) {
                if (!broadcast) {
                    for (std::size_t i = 0; i < b->grad.size(); ++i) b->grad.v[i] += y->grad.v[i];
                } else {
                    const Shape& sa2 = a->val.shape;
                    for (int n = 0; n < sa2.n; ++n)
                        for (int c = 0; c < sa2.c; ++c) {
                            T* bg = b->grad.data() + static_cast<std::size_t>(n) * plane;
                            const T* yg =
                                y->grad.data() + (static_cast<std::size_t>(n) * sa2.c + c) * plane;
                            for (std::size_t i = 0; i < plane; ++i) bg[i] += yg[i];
                        }
                }
            }
        });
    }
    return y;
}

template <typename T>
VarPtr<T> elementwise_mul(Tape<T>& tape, const VarPtr<T>& a, const VarPtr<T>& b) {
    if (!(a->val.shape == b->val.shape))
        throw ShapeError("elementwise_mul: shape mismatch " + a->val.shape.str() + " vs " +
                         b->val.shape.str());
    Tensor<T> out(a->val.shape);
    for (std::size_t i = 0; i < out.size(); ++i) out.v[i] = a->val.v[i] * b->val.v[i];
    bool ng = a->requires_grad || b->requires_grad;
    auto y = detail::make_output(std::move(out), ng);
    if (ng) {
        tape.record([a, b, y] {
            if (a->requires_grad)
                for (std::size_t i = 0; i < a->grad.size(); ++i)
                    a->grad.v[i] += y->grad.v[i] * b->val.v[i];
            if (b->requires_grad)
                for (std::size_t i = 0; i < b->grad.size(); ++i)
                    b->grad.v[i] += y->grad.v[i] * a->val.v[i];
        });
    }
    return y;
}

template <typename T>
VarPtr<T> scalar_mul(Tape<T>& tape, const VarPtr<T>& a, T s) {
    if (!std::isfinite(static_cast<double>(s))) throw NumericError("scalar_mul: non-finite scalar");
    Tensor<T> out(a->val.shape);
    for (std::size_t i = 0; i < out.size(); ++i) out.v[i] = a->val.v[i] * s;
    auto y = detail::make_output(std::move(out), a->requires_grad);
    if (y->requires_grad) {
        tape.record([a, y, s] {
            for (std::size_t i = 0; i < a->grad.size(); ++i) a->grad.v[i] += y->grad.v[i] * s;
        });
    }
    return y;
}

/// Per-cell mean over channels; output shape (n,1,h,w).
template <typename T>
VarPtr<T> channel_mean(Tape<T>& tape, const VarPtr<T>& a) {
    const Shape& s = a->val.shape;
    Tensor<T> out(Shape{s.n, 1, s.h, s.w});
    const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
    const T inv_d = T(1) / T(s.c);
    for (int n = 0; n < s.n; ++n) {
        T* op = out.data() + static_cast<std::size_t>(n) * plane;
        for (int c = 0; c < s.c; ++c) {
            const T* ap = a->val.data() + (static_cast<std::size_t>(n) * s.c + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) op[i] += ap[i];
        }
        for (std::size_t i = 0; i < plane; ++i) op[i] *= inv_d;
    }
    auto y = detail::make_output(std::move(out), a->requires_grad);
    if (y->requires_grad) {
        tape.record([a, y, plane, inv_d] {
            const Shape& s2 = a->val.shape;
            for (int n = 0; n < s2.n; ++n) {
                const T* yg = y->grad.data() + static_cast<std::size_t>(n) * plane;
                for (int c = 0; c < s2.c; ++c) {
                    T* ag = a->grad.data() + (static_cast<std::size_t>(n) * s2.c + c) * plane;
                    for (std::size_t i = 0; i < plane; ++i) ag[i] += yg[i] * inv_d;
                }
            }
        });
    }
    return y;
}

/// Replicate a single-channel tensor to d channels; backward sums over
/// the replicated channels.
template <typename T>
VarPtr<T> broadcast_channels(Tape<T>& tape, const VarPtr<T>& a, int d) {
    const Shape& s = a->val.shape;
    if (s.c != 1) throw ShapeError("broadcast_channels expects a single-channel input");
    Tensor<T> out(Shape{s.n, d, s.h, s.w});
    const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
    for (int n = 0; n < s.n; ++n) {
        const T* ap = a->val.data() + static_cast<std::size_t>(n) * plane;
        for (int c = 0; c < d; ++c)
            std::copy(ap, ap + plane,
                      out.data() + (static_cast<std::size_t>(n) * d + c) * plane);
    }
    auto y = detail::make_output(std::move(out), a->requires_grad);
    if (y->requires_grad) {
        tape.record([a, y, d, plane] {
            const Shape& s2 = a->val.shape;
            for (int n = 0; n < s2.n; ++n) {
                T* ag = a->grad.data() + static_cast<std::size_t>(n) * plane;
                for (int c = 0; c < d; ++c) {
                    const T* yg =
                        y->grad.data() + (static_cast<std::size_t>(n) * d + c) * plane;
                    for (std::size_t i = 0; i < plane; ++i) ag[i] += yg[i];
                }
            }
        });
    }
    return y;
}

/// Multiply every channel by a constant per-image spatial mask
/// (shape n×1×h×w). The mask does not receive gradients.
template <typename T>
VarPtr<T> mask_mul(Tape<T>& tape, const VarPtr<T>& a, const Tensor<T>& mask) {
    const Shape& s = a->val.shape;
    if (mask.shape.n != s.n || mask.shape.c != 1 || mask.shape.h != s.h || mask.shape.w != s.w)
        throw ShapeError("mask_mul: mask shape " + mask.shape.str() + " does not match " + s.str());
    Tensor<T> out(s);
    const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
    for (int n = 0; n < s.n; ++n) {
        const T* mp = mask.data() + static_cast<std::size_t>(n) * plane;
        for (int c = 0; c < s.c; ++c) {
            const T* ap = a->val.data() + (static_cast<std::size_t>(n) * s.c + c) * plane;
            T* op = out.data() + (static_cast<std::size_t>(n) * s.c + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) op[i] = ap[i] * mp[i];
        }
    }
    auto y = detail::make_output(std::move(out), a->requires_grad);
    if (y->requires_grad) {
        auto m = std::make_shared<Tensor<T>>(mask);
        tape.record([a, y, m, plane] {
            const Shape& s2 = a->val.shape;
            for (int n = 0; n < s2.n; ++n) {
                const T* mp = m->data() + static_cast<std::size_t>(n) * plane;
                for (int c = 0; c < s2.c; ++c) {
                    T* ag = a->grad.data() + (static_cast<std::size_t>(n) * s2.c + c) * plane;
                    const T* yg =
                        y->grad.data() + (static_cast<std::size_t>(n) * s2.c + c) * plane;
                    for (std::size_t i = 0; i < plane; ++i) ag[i] += yg[i] * mp[i];
                }
            }
        });
    }
    return y;
}

template <typename T>
VarPtr<T> sum(Tape<T>& tape, const VarPtr<T>& a) {
    T acc = T(0);
    for (T x : a->val.v) acc += x;
    auto y = detail::make_output(Tensor<T>::scalar(acc), a->requires_grad);
    if (y->requires_grad) {
        tape.record([a, y] {
            T g = y->grad.v[0];
            for (std::size_t i = 0; i < a->grad.size(); ++i) a->grad.v[i] += g;
        });
    }
    return y;
}

/// Dot product with a constant weight tensor of the same shape.
template <typename T>
VarPtr<T> weighted_sum(Tape<T>& tape, const VarPtr<T>& a, const Tensor<T>& weights) {
    if (!(weights.shape == a->val.shape))
        throw ShapeError("weighted_sum: weight shape mismatch");
    T acc = T(0);
    for (std::size_t i = 0; i < a->val.size(); ++i) acc += a->val.v[i] * weights.v[i];
    auto y = detail::make_output(Tensor<T>::scalar(acc), a->requires_grad);
    if (y->requires_grad) {
        auto w = std::make_shared<Tensor<T>>(weights);
        tape.record([a, y, w] {
            T g = y->grad.v[0];
            for (std::size_t i = 0; i < a->grad.size(); ++i) a->grad.v[i] += g * w->v[i];
        });
    }
    return y;
}

/// Copy that blocks gradient flow.
template <typename T>
VarPtr<T> detach(const VarPtr<T>& a) {
    return make_var<T>(a->val, false);
}

}  // namespace aedet
