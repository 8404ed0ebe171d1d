#pragma once

#include <Eigen/Core>
#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "sigil/array.hpp"

namespace sigil {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using CMatMap = Eigen::Map<const RowMat<T>>;
template <class T>
using VecMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <class T>
using CVecMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

template <class T>
MatMap<T> mat(ArrayND<T>& a, int64_t rows, int64_t cols) {
    return MatMap<T>(a.data(), rows, cols);
}
template <class T>
CMatMap<T> cmat(const ArrayND<T>& a, int64_t rows, int64_t cols) {
    return CMatMap<T>(a.data(), rows, cols);
}

template <class T>
class Graph;

template <class T>
struct Node {
    ArrayND<T> val;
    ArrayND<T> grad;  // allocated on first accumulation
    std::vector<std::shared_ptr<Node<T>>> prev;
    std::function<void(Node<T>&)> back;
    bool need_grad = false;
    Graph<T>* graph = nullptr;

    void accum_grad_flat(const T* g, int64_t n) {
        if (!grad.defined()) {
            grad = ArrayND<T>::zeros(val.shape);
        }
        T* dst = grad.data();
        for (int64_t i = 0; i < n; i++) {
            dst[i] += g[i];
        }
    }
    ArrayND<T>& ensure_grad() {
        if (!grad.defined()) {
            grad = ArrayND<T>::zeros(val.shape);
        }
        return grad;
    }
};

// Lightweight handle; ops are free functions taking Vars.
template <class T>
struct Var {
    std::shared_ptr<Node<T>> node;

    bool defined() const { return node != nullptr; }
    const ArrayND<T>& val() const { return node->val; }
    const ArrayND<T>& grad() const { return node->grad; }
    const std::vector<int64_t>& shape() const { return node->val.shape; }
    int64_t dim(int i) const { return node->val.dim(i); }
};

// Append-only tape; creation order is a topological order, so backward is a
// reverse sweep. One graph per sample per step; graphs are never shared
// across threads.
template <class T>
class Graph {
  public:
    std::vector<std::shared_ptr<Node<T>>> tape;
    std::unordered_map<std::string, std::shared_ptr<Node<T>>> param_nodes;
    std::vector<std::string> param_order;
    bool grad_enabled = true;

    Var<T> constant(ArrayND<T> v) {
        auto n   = std::make_shared<Node<T>>();
        n->val   = std::move(v);
        n->graph = this;
        tape.push_back(n);
        return Var<T>{n};
    }

    // Shares the underlying buffer with the caller's array; the same name
    // always resolves to the same node within one graph, so weights shared
    // between passes accumulate gradients in one place.
    Var<T> param(const std::string& name, const ArrayND<T>& v) {
        auto it = param_nodes.find(name);
        if (it != param_nodes.end()) {
            return Var<T>{it->second};
        }
        auto n       = std::make_shared<Node<T>>();
        n->val       = v;  // shallow share
        n->need_grad = grad_enabled;
        n->graph     = this;
        tape.push_back(n);
        param_nodes.emplace(name, n);
        param_order.push_back(name);
        return Var<T>{n};
    }

    void backward(const Var<T>& loss) {
        if (loss.node->val.numel() != 1) {
            throw std::invalid_argument("backward: loss must be scalar");
        }
        auto& g = loss.node->ensure_grad();
        g[0]    = T(1);
        for (auto it = tape.rbegin(); it != tape.rend(); ++it) {
            Node<T>& n = **it;
            if (n.need_grad && n.grad.defined() && n.back) {
                n.back(n);
            }
        }
    }
};

template <class T>
Var<T> make_op(Graph<T>* g, ArrayND<T> val, std::vector<Var<T>> parents,
               const std::function<std::function<void(Node<T>&)>()>& make_back) {
    auto n   = std::make_shared<Node<T>>();
    n->val   = std::move(val);
    n->graph = g;
    bool ng  = false;
    for (auto& p : parents) {
        ng = ng || p.node->need_grad;
    }
    n->need_grad = ng && g->grad_enabled;
    if (n->need_grad) {
        n->prev.reserve(parents.size());
        for (auto& p : parents) {
            n->prev.push_back(p.node);
        }
        n->back = make_back();
    }
    g->tape.push_back(n);
    return Var<T>{n};
}

// ---------------------------------------------------------------- elementwise

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
    check_same_shape(a.val(), b.val(), "add");
    ArrayND<T> out(a.shape());
    const T* pa = a.val().data();
    const T* pb = b.val().data();
    T* po       = out.data();
    for (int64_t i = 0; i < out.numel(); i++) {
        po[i] = pa[i] + pb[i];
    }
    Graph<T>* g = a.node->graph;
    return make_op<T>(g, std::move(out), {a, b}, [a, b]() {
        return [a, b](Node<T>& n) {
            int64_t m = n.val.numel();
            a.node->accum_grad_flat(n.grad.data(), m);
            b.node->accum_grad_flat(n.grad.data(), m);
        };
    });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
    check_same_shape(a.val(), b.val(), "sub");
    ArrayND<T> out(a.shape());
    for (int64_t i = 0; i < out.numel(); i++) {
        out[i] = a.val()[i] - b.val()[i];
    }
    return make_op<T>(a.node->graph, std::move(out), {a, b}, [a, b]() {
        return [a, b](Node<T>& n) {
            int64_t m = n.val.numel();
            a.node->accum_grad_flat(n.grad.data(), m);
            auto& gb = b.node->ensure_grad();
            for (int64_t i = 0; i < m; i++) {
                gb[i] -= n.grad[i];
            }
        };
    });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
    check_same_shape(a.val(), b.val(), "mul");
    ArrayND<T> out(a.shape());
    for (int64_t i = 0; i < out.numel(); i++) {
        out[i] = a.val()[i] * b.val()[i];
    }
    return make_op<T>(a.node->graph, std::move(out), {a, b}, [a, b]() {
        return [a, b](Node<T>& n) {
            int64_t m = n.val.numel();
            auto& ga  = a.node->ensure_grad();
            auto& gb  = b.node->ensure_grad();
            for (int64_t i = 0; i < m; i++) {
                ga[i] += n.grad[i] * b.node->val[i];
                gb[i] += n.grad[i] * a.node->val[i];
            }
        };
    });
}

template <class T>
Var<T> scale(Var<T> a, T c) {
    ArrayND<T> out(a.shape());
    for (int64_t i = 0; i < out.numel(); i++) {
        out[i] = a.val()[i] * c;
    }
    return make_op<T>(a.node->graph, std::move(out), {a}, [a, c]() {
        return [a, c](Node<T>& n) {
            auto& ga = a.node->ensure_grad();
            for (int64_t i = 0; i < n.val.numel(); i++) {
                ga[i] += n.grad[i] * c;
            }
        };
    });
}

template <class T>
Var<T> silu(Var<T> a) {
    ArrayND<T> out(a.shape());
    for (int64_t i = 0; i < out.numel(); i++) {
        T x    = a.val()[i];
        T s    = T(1) / (T(1) + std::exp(-x));
        out[i] = x * s;
    }
    return make_op<T>(a.node->graph, std::move(out), {a}, [a]() {
        return [a](Node<T>& n) {
            auto& ga = a.node->ensure_grad();
            for (int64_t i = 0; i < n.val.numel(); i++) {
                T x   = a.node->val[i];
                T s   = T(1) / (T(1) + std::exp(-x));
                ga[i] += n.grad[i] * s * (T(1) + x * (T(1) - s));
            }
        };
    });
}

template <class T>
Var<T> mean_all(Var<T> a) {
    ArrayND<T> out({1});
    T acc = 0;
    for (int64_t i = 0; i < a.val().numel(); i++) {
        acc += a.val()[i];
    }
    out[0]    = acc / (T)a.val().numel();
    return make_op<T>(a.node->graph, std::move(out), {a}, [a]() {
        return [a](Node<T>& n) {
            auto& ga = a.node->ensure_grad();
            T per    = n.grad[0] / (T)a.val().numel();
            for (int64_t i = 0; i < a.val().numel(); i++) {
                ga[i] += per;
            }
        };
    });
}

// ---------------------------------------------------------------- matrix ops

template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
    if (a.val().rank() != 2 || b.val().rank() != 2 || a.dim(1) != b.dim(0)) {
        throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    ArrayND<T> out({m, n});
    mat(out, m, n).noalias() = cmat(a.val(), m, k) * cmat(b.val(), k, n);
    return make_op<T>(a.node->graph, std::move(out), {a, b}, [a, b, m, k, n]() {
        return [a, b, m, k, n](Node<T>& nd) {
            CMatMap<T> g(nd.grad.data(), m, n);
            auto& ga = a.node->ensure_grad();
            auto& gb = b.node->ensure_grad();
            MatMap<T>(ga.data(), m, k).noalias() += g * cmat(b.node->val, k, n).transpose();
            MatMap<T>(gb.data(), k, n).noalias() += cmat(a.node->val, m, k).transpose() * g;
        };
    });
}

template <class T>
Var<T> transpose2d(Var<T> a) {
    int64_t m = a.dim(0), n = a.dim(1);
    ArrayND<T> out({n, m});
    mat(out, n, m).noalias() = cmat(a.val(), m, n).transpose();
    return make_op<T>(a.node->graph, std::move(out), {a}, [a, m, n]() {
        return [a, m, n](Node<T>& nd) {
            auto& ga = a.node->ensure_grad();
            MatMap<T>(ga.data(), m, n).noalias() += CMatMap<T>(nd.grad.data(), n, m).transpose();
        };
    });
}

// rows (m,n) + bias (n)
template <class T>
Var<T> add_row_bias(Var<T> a, Var<T> bias) {
    int64_t m = a.dim(0), n = a.dim(1);
    if (bias.val().numel() != n) {
        throw std::invalid_argument("add_row_bias: bias size mismatch");
    }
    ArrayND<T> out(a.shape());
    for (int64_t i = 0; i < m; i++) {
        for (int64_t j = 0; j < n; j++) {
            out[i * n + j] = a.val()[i * n + j] + bias.val()[j];
        }
    }
    return make_op<T>(a.node->graph, std::move(out), {a, bias}, [a, bias, m, n]() {
        return [a, bias, m, n](Node<T>& nd) {
            a.node->accum_grad_flat(nd.grad.data(), m * n);
            auto& gb = bias.node->ensure_grad();
            for (int64_t i = 0; i < m; i++) {
                for (int64_t j = 0; j < n; j++) {
                    gb[j] += nd.grad[i * n + j];
                }
            }
        };
    });
}

template <class T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
    return add_row_bias(matmul(x, w), b);
}

// x (C,H,W) + bias (C), broadcast over the spatial dims
template <class T>
Var<T> add_channel_bias(Var<T> x, Var<T> bias) {
    const int64_t C = x.dim(0), HW = x.dim(1) * x.dim(2);
    if (bias.val().numel() != C) {
        throw std::invalid_argument("add_channel_bias: size mismatch");
    }
    ArrayND<T> out(x.shape());
    for (int64_t c = 0; c < C; c++) {
        T bv         = bias.val()[c];
        const T* src = x.val().data() + c * HW;
        T* dst       = out.data() + c * HW;
        for (int64_t i = 0; i < HW; i++) {
            dst[i] = src[i] + bv;
        }
    }
    return make_op<T>(x.node->graph, std::move(out), {x, bias}, [x, bias, C, HW]() {
        return [x, bias, C, HW](Node<T>& nd) {
            x.node->accum_grad_flat(nd.grad.data(), C * HW);
            auto& gb = bias.node->ensure_grad();
            for (int64_t c = 0; c < C; c++) {
                T acc        = 0;
                const T* src = nd.grad.data() + c * HW;
                for (int64_t i = 0; i < HW; i++) {
                    acc += src[i];
                }
                gb[c] += acc;
            }
        };
    });
}

template <class T>
Var<T> reshape(Var<T> a, std::vector<int64_t> shape) {
    ArrayND<T> out = a.val().reshaped(std::move(shape));
    return make_op<T>(a.node->graph, std::move(out), {a}, [a]() {
        return [a](Node<T>& nd) { a.node->accum_grad_flat(nd.grad.data(), nd.grad.numel()); };
    });
}

template <class T>
Var<T> concat_rows(Var<T> a, Var<T> b) {
    if (a.dim(1) != b.dim(1)) {
        throw std::invalid_argument("concat_rows: column mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    int64_t m1 = a.dim(0), m2 = b.dim(0), n = a.dim(1);
    ArrayND<T> out({m1 + m2, n});
    std::copy(a.val().data(), a.val().data() + m1 * n, out.data());
    std::copy(b.val().data(), b.val().data() + m2 * n, out.data() + m1 * n);
    return make_op<T>(a.node->graph, std::move(out), {a, b}, [a, b, m1, m2, n]() {
        return [a, b, m1, m2, n](Node<T>& nd) {
            a.node->accum_grad_flat(nd.grad.data(), m1 * n);
            b.node->accum_grad_flat(nd.grad.data() + m1 * n, m2 * n);
        };
    });
}

// channel concat of (C_i, H, W) blocks
template <class T>
Var<T> concat_channels(std::vector<Var<T>> xs) {
    if (xs.empty()) {
        throw std::invalid_argument("concat_channels: empty");
    }
    int64_t H = xs[0].dim(1), W = xs[0].dim(2), C = 0;
    for (auto& x : xs) {
        if (x.val().rank() != 3 || x.dim(1) != H || x.dim(2) != W) {
            throw std::invalid_argument("concat_channels: spatial mismatch");
        }
        C += x.dim(0);
    }
    ArrayND<T> out({C, H, W});
    int64_t off = 0;
    for (auto& x : xs) {
        std::copy(x.val().data(), x.val().data() + x.val().numel(), out.data() + off);
        off += x.val().numel();
    }
    return make_op<T>(xs[0].node->graph, std::move(out), xs, [xs]() {
        return [xs](Node<T>& nd) {
            int64_t off = 0;
            for (auto& x : xs) {
                x.node->accum_grad_flat(nd.grad.data() + off, x.val().numel());
                off += x.val().numel();
            }
        };
    });
}

// ---------------------------------------------------------------- image ops

template <class T>
ArrayND<T> im2col(const ArrayND<T>& x, int64_t kh, int64_t kw, int64_t stride, int64_t pad,
                  int64_t oh, int64_t ow) {
    const int64_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    ArrayND<T> cols({C * kh * kw, oh * ow});
    T* pc = cols.data();
    for (int64_t c = 0; c < C; c++) {
        for (int64_t ky = 0; ky < kh; ky++) {
            for (int64_t kx = 0; kx < kw; kx++) {
                int64_t row = (c * kh + ky) * kw + kx;
                for (int64_t y = 0; y < oh; y++) {
                    int64_t sy = y * stride + ky - pad;
                    T* dst     = pc + row * oh * ow + y * ow;
                    if (sy < 0 || sy >= H) {
                        std::fill(dst, dst + ow, T(0));
                        continue;
                    }
                    const T* src = x.data() + (c * H + sy) * W;
                    for (int64_t xo = 0; xo < ow; xo++) {
                        int64_t sx = xo * stride + kx - pad;
                        dst[xo]    = (sx >= 0 && sx < W) ? src[sx] : T(0);
                    }
                }
            }
        }
    }
    return cols;
}

template <class T>
void col2im_accum(const ArrayND<T>& cols, ArrayND<T>& gx, int64_t kh, int64_t kw, int64_t stride,
                  int64_t pad, int64_t oh, int64_t ow) {
    const int64_t C = gx.dim(0), H = gx.dim(1), W = gx.dim(2);
    const T* pc = cols.data();
    for (int64_t c = 0; c < C; c++) {
        for (int64_t ky = 0; ky < kh; ky++) {
            for (int64_t kx = 0; kx < kw; kx++) {
                int64_t row = (c * kh + ky) * kw + kx;
                for (int64_t y = 0; y < oh; y++) {
                    int64_t sy = y * stride + ky - pad;
                    if (sy < 0 || sy >= H) {
                        continue;
                    }
                    const T* src = pc + row * oh * ow + y * ow;
                    T* dst       = gx.data() + (c * H + sy) * W;
                    for (int64_t xo = 0; xo < ow; xo++) {
                        int64_t sx = xo * stride + kx - pad;
                        if (sx >= 0 && sx < W) {
                            dst[sx] += src[xo];
                        }
                    }
                }
            }
        }
    }
}

// x (C,H,W), w (OC, C, kh, kw), b (OC) -> (OC, OH, OW)
template <class T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, int64_t stride, int64_t pad) {
    if (x.val().rank() != 3 || w.val().rank() != 4 || x.dim(0) != w.dim(1)) {
        throw std::invalid_argument("conv2d: bad shapes " + shape_str(x.shape()) + " w " + shape_str(w.shape()));
    }
    const int64_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    const int64_t OC = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const int64_t OH = (H + 2 * pad - kh) / stride + 1;
    const int64_t OW = (W + 2 * pad - kw) / stride + 1;
    ArrayND<T> cols = im2col(x.val(), kh, kw, stride, pad, OH, OW);
    ArrayND<T> out({OC, OH, OW});
    mat(out, OC, OH * OW).noalias() = cmat(w.val(), OC, C * kh * kw) * cmat(cols, C * kh * kw, OH * OW);
    for (int64_t oc = 0; oc < OC; oc++) {
        T bv = b.val()[oc];
        T* p = out.data() + oc * OH * OW;
        for (int64_t i = 0; i < OH * OW; i++) {
            p[i] += bv;
        }
    }
    return make_op<T>(x.node->graph, std::move(out), {x, w, b},
                      [x, w, b, cols, C, H, W, OC, kh, kw, OH, OW, stride, pad]() {
        return [x, w, b, cols, C, H, W, OC, kh, kw, OH, OW, stride, pad](Node<T>& nd) {
            CMatMap<T> g(nd.grad.data(), OC, OH * OW);
            auto& gw = w.node->ensure_grad();
            MatMap<T>(gw.data(), OC, C * kh * kw).noalias() += g * cmat(cols, C * kh * kw, OH * OW).transpose();
            auto& gb = b.node->ensure_grad();
            for (int64_t oc = 0; oc < OC; oc++) {
                T acc = 0;
                for (int64_t i = 0; i < OH * OW; i++) {
                    acc += nd.grad[oc * OH * OW + i];
                }
                gb[oc] += acc;
            }
            if (x.node->need_grad) {
                ArrayND<T> gcols({C * kh * kw, OH * OW});
                mat(gcols, C * kh * kw, OH * OW).noalias() = cmat(w.node->val, OC, C * kh * kw).transpose() * g;
                auto& gx = x.node->ensure_grad();
                col2im_accum(gcols, gx, kh, kw, stride, pad, OH, OW);
            }
        };
    });
}

template <class T>
Var<T> upsample_nearest2x(Var<T> x) {
    const int64_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    ArrayND<T> out({C, H * 2, W * 2});
    for (int64_t c = 0; c < C; c++) {
        for (int64_t y = 0; y < H * 2; y++) {
            const T* src = x.val().data() + (c * H + y / 2) * W;
            T* dst       = out.data() + (c * H * 2 + y) * W * 2;
            for (int64_t xo = 0; xo < W * 2; xo++) {
                dst[xo] = src[xo / 2];
            }
        }
    }
    return make_op<T>(x.node->graph, std::move(out), {x}, [x, C, H, W]() {
        return [x, C, H, W](Node<T>& nd) {
            auto& gx = x.node->ensure_grad();
            for (int64_t c = 0; c < C; c++) {
                for (int64_t y = 0; y < H * 2; y++) {
                    const T* src = nd.grad.data() + (c * H * 2 + y) * W * 2;
                    T* dst       = gx.data() + (c * H + y / 2) * W;
                    for (int64_t xo = 0; xo < W * 2; xo++) {
                        dst[xo / 2] += src[xo];
                    }
                }
            }
        };
    });
}

// average pool with kernel == stride
template <class T>
Var<T> avgpool(Var<T> x, int64_t kh, int64_t kw) {
    const int64_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    if (H % kh != 0 || W % kw != 0) {
        throw std::invalid_argument("avgpool: size not divisible by kernel");
    }
    const int64_t OH = H / kh, OW = W / kw;
    ArrayND<T> out({C, OH, OW});
    T inv = T(1) / (T)(kh * kw);
    for (int64_t c = 0; c < C; c++) {
        for (int64_t y = 0; y < OH; y++) {
            for (int64_t xo = 0; xo < OW; xo++) {
                T acc = 0;
                for (int64_t dy = 0; dy < kh; dy++) {
                    const T* src = x.val().data() + (c * H + y * kh + dy) * W + xo * kw;
                    for (int64_t dx = 0; dx < kw; dx++) {
                        acc += src[dx];
                    }
                }
                out[(c * OH + y) * OW + xo] = acc * inv;
            }
        }
    }
    return make_op<T>(x.node->graph, std::move(out), {x}, [x, C, H, W, OH, OW, kh, kw, inv]() {
        return [x, C, H, W, OH, OW, kh, kw, inv](Node<T>& nd) {
            auto& gx = x.node->ensure_grad();
            for (int64_t c = 0; c < C; c++) {
                for (int64_t y = 0; y < OH; y++) {
                    for (int64_t xo = 0; xo < OW; xo++) {
                        T g = nd.grad[(c * OH + y) * OW + xo] * inv;
                        for (int64_t dy = 0; dy < kh; dy++) {
                            T* dst = gx.data() + (c * H + y * kh + dy) * W + xo * kw;
                            for (int64_t dx = 0; dx < kw; dx++) {
                                dst[dx] += g;
                            }
                        }
                    }
                }
            }
        };
    });
}

// ---------------------------------------------------------------- normalization

// GroupNorm over (C,H,W) with per-channel affine.
template <class T>
Var<T> groupnorm(Var<T> x, Var<T> gamma, Var<T> beta, int64_t groups, T eps = (T)1e-5) {
    const int64_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    if (C % groups != 0) {
        throw std::invalid_argument("groupnorm: channels not divisible by groups");
    }
    const int64_t cpg = C / groups, gsz = cpg * H * W;
    ArrayND<T> xhat({C, H, W});
    std::vector<T> inv_std((size_t)groups);
    for (int64_t g = 0; g < groups; g++) {
        const T* px = x.val().data() + g * gsz;
        T mean      = 0;
        for (int64_t i = 0; i < gsz; i++) {
            mean += px[i];
        }
        mean /= (T)gsz;
        T var = 0;
        for (int64_t i = 0; i < gsz; i++) {
            T d = px[i] - mean;
            var += d * d;
        }
        var /= (T)gsz;
        T is           = T(1) / std::sqrt(var + eps);
        inv_std[(size_t)g] = is;
        T* ph = xhat.data() + g * gsz;
        for (int64_t i = 0; i < gsz; i++) {
            ph[i] = (px[i] - mean) * is;
        }
    }
    ArrayND<T> out({C, H, W});
    for (int64_t c = 0; c < C; c++) {
        T gm = gamma.val()[c], bt = beta.val()[c];
        const T* ph = xhat.data() + c * H * W;
        T* po       = out.data() + c * H * W;
        for (int64_t i = 0; i < H * W; i++) {
            po[i] = gm * ph[i] + bt;
        }
    }
    return make_op<T>(x.node->graph, std::move(out), {x, gamma, beta},
                      [x, gamma, beta, xhat, inv_std, C, H, W, groups, cpg, gsz]() {
        return [x, gamma, beta, xhat, inv_std, C, H, W, groups, cpg, gsz](Node<T>& nd) {
            auto& ggm = gamma.node->ensure_grad();
            auto& gbt = beta.node->ensure_grad();
            for (int64_t c = 0; c < C; c++) {
                T sg = 0, sb = 0;
                const T* pg = nd.grad.data() + c * H * W;
                const T* ph = xhat.data() + c * H * W;
                for (int64_t i = 0; i < H * W; i++) {
                    sg += pg[i] * ph[i];
                    sb += pg[i];
                }
                ggm[c] += sg;
                gbt[c] += sb;
            }
            if (x.node->need_grad) {
                auto& gx = x.node->ensure_grad();
                for (int64_t g = 0; g < groups; g++) {
                    // dxhat = dy * gamma; dx = is*(dxhat - mean(dxhat) - xhat*mean(dxhat*xhat))
                    T m1 = 0, m2 = 0;
                    for (int64_t c = g * cpg; c < (g + 1) * cpg; c++) {
                        const T* pg = nd.grad.data() + c * H * W;
                        const T* ph = xhat.data() + c * H * W;
                        T gm        = gamma.node->val[c];
                        for (int64_t i = 0; i < H * W; i++) {
                            T dxh = pg[i] * gm;
                            m1 += dxh;
                            m2 += dxh * ph[i];
                        }
                    }
                    m1 /= (T)gsz;
                    m2 /= (T)gsz;
                    T is = inv_std[(size_t)g];
                    for (int64_t c = g * cpg; c < (g + 1) * cpg; c++) {
                        const T* pg = nd.grad.data() + c * H * W;
                        const T* ph = xhat.data() + c * H * W;
                        T* px       = gx.data() + c * H * W;
                        T gm        = gamma.node->val[c];
                        for (int64_t i = 0; i < H * W; i++) {
                            px[i] += is * (pg[i] * gm - m1 - ph[i] * m2);
                        }
                    }
                }
            }
        };
    });
}

// ---------------------------------------------------------------- attention

template <class T>
Var<T> softmax_rows(Var<T> a) {
    const int64_t m = a.dim(0), n = a.dim(1);
    ArrayND<T> out(a.shape());
    for (int64_t i = 0; i < m; i++) {
        const T* src = a.val().data() + i * n;
        T* dst       = out.data() + i * n;
        T mx         = src[0];
        for (int64_t j = 1; j < n; j++) {
            mx = std::max(mx, src[j]);
        }
        T sum = 0;
        for (int64_t j = 0; j < n; j++) {
            dst[j] = std::exp(src[j] - mx);
            sum += dst[j];
        }
        T inv = T(1) / sum;
        for (int64_t j = 0; j < n; j++) {
            dst[j] *= inv;
        }
    }
    return make_op<T>(a.node->graph, std::move(out), {a}, [a, m, n]() {
        return [a, m, n](Node<T>& nd) {
            auto& ga = a.node->ensure_grad();
            for (int64_t i = 0; i < m; i++) {
                const T* y = nd.val.data() + i * n;
                const T* g = nd.grad.data() + i * n;
                T dot      = 0;
                for (int64_t j = 0; j < n; j++) {
                    dot += y[j] * g[j];
                }
                T* d = ga.data() + i * n;
                for (int64_t j = 0; j < n; j++) {
                    d[j] += y[j] * (g[j] - dot);
                }
            }
        };
    });
}

// Per-query attention-mass summary recorded as side data by attention_core.
struct AttnMasses {
    int64_t n_queries    = 0;
    int64_t n_gen_cols   = 0;
    int64_t n_total_cols = 0;
    std::vector<double> subject_mass;  // per query, sum over columns >= n_gen_cols
};

// out = softmax(q k^T / sqrt(d)) v, streamed in key tiles so the attention
// matrix is never materialized. Columns >= n_gen_cols count as subject mass.
template <class T>
Var<T> attention_core(Var<T> q, Var<T> k, Var<T> v, int64_t n_gen_cols, AttnMasses* masses = nullptr) {
    const int64_t Nq = q.dim(0), d = q.dim(1), Nk = k.dim(0);
    if (k.dim(1) != d || v.dim(0) != Nk || v.dim(1) != d) {
        throw std::invalid_argument("attention_core: dimension mismatch q " + shape_str(q.shape()) + " k " + shape_str(k.shape()));
    }
    if (n_gen_cols < 0 || n_gen_cols > Nk) {
        throw std::invalid_argument("attention_core: bad n_gen_cols");
    }
    const T sc        = T(1) / (T)std::sqrt((double)d);
    const int64_t BI  = 64, BJ = 128;
    ArrayND<T> out({Nq, d});
    auto rowmax = std::make_shared<std::vector<T>>((size_t)Nq);
    auto rowsum = std::make_shared<std::vector<T>>((size_t)Nq);
    if (masses) {
        masses->n_queries    = Nq;
        masses->n_gen_cols   = n_gen_cols;
        masses->n_total_cols = Nk;
        masses->subject_mass.assign((size_t)Nq, 0.0);
    }
    CMatMap<T> Q(q.val().data(), Nq, d);
    CMatMap<T> K(k.val().data(), Nk, d);
    CMatMap<T> V(v.val().data(), Nk, d);
    RowMat<T> S(BI, BJ);
    for (int64_t i0 = 0; i0 < Nq; i0 += BI) {
        const int64_t bi = std::min(BI, Nq - i0);
        // pass 1: row maxima
        for (int64_t i = 0; i < bi; i++) {
            (*rowmax)[(size_t)(i0 + i)] = -std::numeric_limits<T>::infinity();
        }
        for (int64_t j0 = 0; j0 < Nk; j0 += BJ) {
            const int64_t bj = std::min(BJ, Nk - j0);
            S.topLeftCorner(bi, bj).noalias() = Q.middleRows(i0, bi) * K.middleRows(j0, bj).transpose() * sc;
            for (int64_t i = 0; i < bi; i++) {
                T& mx = (*rowmax)[(size_t)(i0 + i)];
                for (int64_t j = 0; j < bj; j++) {
                    mx = std::max(mx, S(i, j));
                }
            }
        }
        // pass 2: exp-sums and weighted values
        MatMap<T> O(out.data(), Nq, d);
        O.middleRows(i0, bi).setZero();
        for (int64_t i = 0; i < bi; i++) {
            (*rowsum)[(size_t)(i0 + i)] = 0;
        }
        for (int64_t j0 = 0; j0 < Nk; j0 += BJ) {
            const int64_t bj = std::min(BJ, Nk - j0);
            S.topLeftCorner(bi, bj).noalias() = Q.middleRows(i0, bi) * K.middleRows(j0, bj).transpose() * sc;
            for (int64_t i = 0; i < bi; i++) {
                T mx = (*rowmax)[(size_t)(i0 + i)];
                T ls = 0;
                double sub = 0;
                for (int64_t j = 0; j < bj; j++) {
                    T e     = std::exp(S(i, j) - mx);
                    S(i, j) = e;
                    ls += e;
                    if (masses && j0 + j >= n_gen_cols) {
                        sub += (double)e;
                    }
                }
                (*rowsum)[(size_t)(i0 + i)] += ls;
                if (masses) {
                    masses->subject_mass[(size_t)(i0 + i)] += sub;
                }
            }
            O.middleRows(i0, bi).noalias() += S.topLeftCorner(bi, bj) * V.middleRows(j0, bj);
        }
        for (int64_t i = 0; i < bi; i++) {
            T inv = T(1) / (*rowsum)[(size_t)(i0 + i)];
            O.row(i0 + i) *= inv;
            if (masses) {
                masses->subject_mass[(size_t)(i0 + i)] *= (double)inv;
            }
        }
    }
    return make_op<T>(q.node->graph, std::move(out), {q, k, v}, [q, k, v, rowmax, rowsum, Nq, Nk, d, sc]() {
        return [q, k, v, rowmax, rowsum, Nq, Nk, d, sc](Node<T>& nd) {
            const int64_t BI = 64, BJ = 128;
            CMatMap<T> Q(q.node->val.data(), Nq, d);
            CMatMap<T> K(k.node->val.data(), Nk, d);
            CMatMap<T> V(v.node->val.data(), Nk, d);
            CMatMap<T> O(nd.val.data(), Nq, d);
            CMatMap<T> dO(nd.grad.data(), Nq, d);
            MatMap<T> dQ(q.node->ensure_grad().data(), Nq, d);
            MatMap<T> dK(k.node->ensure_grad().data(), Nk, d);
            MatMap<T> dV(v.node->ensure_grad().data(), Nk, d);
            std::vector<T> rowdot((size_t)Nq);
            for (int64_t i = 0; i < Nq; i++) {
                rowdot[(size_t)i] = dO.row(i).dot(O.row(i));
            }
            RowMat<T> P(BI, BJ), dS(BI, BJ);
            for (int64_t i0 = 0; i0 < Nq; i0 += BI) {
                const int64_t bi = std::min(BI, Nq - i0);
                for (int64_t j0 = 0; j0 < Nk; j0 += BJ) {
                    const int64_t bj = std::min(BJ, Nk - j0);
                    P.topLeftCorner(bi, bj).noalias() = Q.middleRows(i0, bi) * K.middleRows(j0, bj).transpose() * sc;
                    for (int64_t i = 0; i < bi; i++) {
                        T mx  = (*rowmax)[(size_t)(i0 + i)];
                        T inv = T(1) / (*rowsum)[(size_t)(i0 + i)];
                        for (int64_t j = 0; j < bj; j++) {
                            P(i, j) = std::exp(P(i, j) - mx) * inv;
                        }
                    }
                    dV.middleRows(j0, bj).noalias() += P.topLeftCorner(bi, bj).transpose() * dO.middleRows(i0, bi);
                    dS.topLeftCorner(bi, bj).noalias() = dO.middleRows(i0, bi) * V.middleRows(j0, bj).transpose();
                    for (int64_t i = 0; i < bi; i++) {
                        T rd = rowdot[(size_t)(i0 + i)];
                        for (int64_t j = 0; j < bj; j++) {
                            dS(i, j) = P(i, j) * (dS(i, j) - rd);
                        }
                    }
                    dQ.middleRows(i0, bi).noalias() += dS.topLeftCorner(bi, bj) * K.middleRows(j0, bj) * sc;
                    dK.middleRows(j0, bj).noalias() += dS.topLeftCorner(bi, bj).transpose() * Q.middleRows(i0, bi) * sc;
                }
            }
        };
    });
}

}  // namespace sigil
