#include "dmad/graph.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace dmad {

void Node::ensure_grad() {
    if (grad.shape != value.shape) grad = Tensor(value.shape);
}

Var make_leaf(Tensor value, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return n;
}

namespace {

Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> fn) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    bool needs = false;
    for (const auto& p : parents) needs = needs || p->requires_grad;
    n->requires_grad = needs;
    if (needs) {
        n->parents = std::move(parents);
        n->backward_fn = std::move(fn);
    }
    return n;
}

void check_chw(const Var& x, const char* op) {
    if (x->value.ndim() != 3) throw std::invalid_argument(std::string(op) + ": expected [C,H,W] tensor");
}

}  // namespace

void backward(const Var& root) {
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node* p = node->parents[idx].get();
            ++idx;
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root->ensure_grad();
    root->grad.fill(1.0);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        // A reachable node can still end up with no incoming gradient (an
        // inactive hinge writes nothing into its parents); skip those.
        if (n->backward_fn && n->grad.shape == n->value.shape) n->backward_fn(*n);
    }
}

// --- image ops ---------------------------------------------------------------

Var conv2d(const Var& x, const Var& w, const Var& b) {
    check_chw(x, "conv2d");
    if (w->value.ndim() != 4) throw std::invalid_argument("conv2d: weight must be [OC,IC,k,k]");
    const int ic = x->value.dim(0), h = x->value.dim(1), wd = x->value.dim(2);
    const int oc = w->value.dim(0), k = w->value.dim(2);
    if (w->value.dim(1) != ic) throw std::invalid_argument("conv2d: input channel mismatch");
    if (w->value.dim(3) != k || k % 2 == 0) throw std::invalid_argument("conv2d: kernel must be odd square");
    if (b->value.ndim() != 1 || b->value.dim(0) != oc) throw std::invalid_argument("conv2d: bias shape");
    const int pad = k / 2;

    Tensor out({oc, h, wd});
    const double* xd = x->value.data.data();
    const double* wd_ = w->value.data.data();
    double* od = out.data.data();
    const std::size_t plane = static_cast<std::size_t>(h) * wd;

    for (int o = 0; o < oc; ++o) {
        const double bias = b->value(o);
        double* op_ = od + o * plane;
        for (std::size_t i = 0; i < plane; ++i) op_[i] = bias;
        for (int i = 0; i < ic; ++i) {
            const double* ip = xd + i * plane;
            for (int ky = 0; ky < k; ++ky) {
                for (int kx = 0; kx < k; ++kx) {
                    const double wv = wd_[((static_cast<std::size_t>(o) * ic + i) * k + ky) * k + kx];
                    const int dy = ky - pad, dx = kx - pad;
                    const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
                    const int x0 = std::max(0, -dx), x1 = std::min(wd, wd - dx);
                    for (int y = y0; y < y1; ++y) {
                        double* orow = op_ + static_cast<std::size_t>(y) * wd;
                        const double* irow = ip + static_cast<std::size_t>(y + dy) * wd + dx;
                        for (int xx = x0; xx < x1; ++xx) orow[xx] += wv * irow[xx];
                    }
                }
            }
        }
    }

    return make_op(std::move(out), {x, w, b}, [ic, oc, h, wd, k, pad, plane](Node& n) {
        Var xv = n.parents[0], wv_ = n.parents[1], bv = n.parents[2];
        const double* gd = n.grad.data.data();
        if (bv->requires_grad) {
            bv->ensure_grad();
            for (int o = 0; o < oc; ++o) {
                const double* gp = gd + o * plane;
                double s = 0.0;
                for (std::size_t i = 0; i < plane; ++i) s += gp[i];
                bv->grad(o) += s;
            }
        }
        if (wv_->requires_grad) {
            wv_->ensure_grad();
            const double* xd = xv->value.data.data();
            for (int o = 0; o < oc; ++o) {
                const double* gp = gd + o * plane;
                for (int i = 0; i < ic; ++i) {
                    const double* ip = xd + i * plane;
                    for (int ky = 0; ky < k; ++ky) {
                        for (int kx = 0; kx < k; ++kx) {
                            const int dy = ky - pad, dx = kx - pad;
                            const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
                            const int x0 = std::max(0, -dx), x1 = std::min(wd, wd - dx);
                            double s = 0.0;
                            for (int y = y0; y < y1; ++y) {
                                const double* grow = gp + static_cast<std::size_t>(y) * wd;
                                const double* irow = ip + static_cast<std::size_t>(y + dy) * wd + dx;
                                for (int xx = x0; xx < x1; ++xx) s += grow[xx] * irow[xx];
                            }
                            wv_->grad.data[((static_cast<std::size_t>(o) * ic + i) * k + ky) * k + kx] += s;
                        }
                    }
                }
            }
        }
        if (xv->requires_grad) {
            xv->ensure_grad();
            double* xg = xv->grad.data.data();
            const double* wd2 = wv_->value.data.data();
            for (int o = 0; o < oc; ++o) {
                const double* gp = gd + o * plane;
                for (int i = 0; i < ic; ++i) {
                    double* igp = xg + i * plane;
                    for (int ky = 0; ky < k; ++ky) {
                        for (int kx = 0; kx < k; ++kx) {
                            const double wval = wd2[((static_cast<std::size_t>(o) * ic + i) * k + ky) * k + kx];
                            const int dy = ky - pad, dx = kx - pad;
                            const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
                            const int x0 = std::max(0, -dx), x1 = std::min(wd, wd - dx);
                            for (int y = y0; y < y1; ++y) {
                                const double* grow = gp + static_cast<std::size_t>(y) * wd;
                                double* irow = igp + static_cast<std::size_t>(y + dy) * wd + dx;
                                for (int xx = x0; xx < x1; ++xx) irow[xx] += wval * grow[xx];
                            }
                        }
                    }
                }
            }
        }
    });
}

Var avg_pool2(const Var& x) {
    check_chw(x, "avg_pool2");
    const int c = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2);
    if (h % 2 != 0 || w % 2 != 0) throw std::invalid_argument("avg_pool2: odd spatial extent");
    const int oh = h / 2, ow = w / 2;
    Tensor out({c, oh, ow});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < oh; ++y)
            for (int xx = 0; xx < ow; ++xx)
                out(ch, y, xx) = 0.25 * (x->value(ch, 2 * y, 2 * xx) + x->value(ch, 2 * y, 2 * xx + 1) +
                                         x->value(ch, 2 * y + 1, 2 * xx) + x->value(ch, 2 * y + 1, 2 * xx + 1));
    return make_op(std::move(out), {x}, [c, oh, ow](Node& n) {
        Var xv = n.parents[0];
        xv->ensure_grad();
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < oh; ++y)
                for (int xx = 0; xx < ow; ++xx) {
                    const double g = 0.25 * n.grad(ch, y, xx);
                    xv->grad(ch, 2 * y, 2 * xx) += g;
                    xv->grad(ch, 2 * y, 2 * xx + 1) += g;
                    xv->grad(ch, 2 * y + 1, 2 * xx) += g;
                    xv->grad(ch, 2 * y + 1, 2 * xx + 1) += g;
                }
    });
}

Var upsample2(const Var& x) {
    check_chw(x, "upsample2");
    const int c = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2);
    Tensor out({c, 2 * h, 2 * w});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) {
                const double v = x->value(ch, y, xx);
                out(ch, 2 * y, 2 * xx) = v;
                out(ch, 2 * y, 2 * xx + 1) = v;
                out(ch, 2 * y + 1, 2 * xx) = v;
                out(ch, 2 * y + 1, 2 * xx + 1) = v;
            }
    return make_op(std::move(out), {x}, [c, h, w](Node& n) {
        Var xv = n.parents[0];
        xv->ensure_grad();
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < w; ++xx)
                    xv->grad(ch, y, xx) += n.grad(ch, 2 * y, 2 * xx) + n.grad(ch, 2 * y, 2 * xx + 1) +
                                           n.grad(ch, 2 * y + 1, 2 * xx) + n.grad(ch, 2 * y + 1, 2 * xx + 1);
    });
}

Var concat_channels(const Var& a, const Var& b) {
    check_chw(a, "concat_channels");
    check_chw(b, "concat_channels");
    const int ca = a->value.dim(0), cb = b->value.dim(0);
    const int h = a->value.dim(1), w = a->value.dim(2);
    if (b->value.dim(1) != h || b->value.dim(2) != w)
        throw std::invalid_argument("concat_channels: spatial mismatch");
    Tensor out({ca + cb, h, w});
    std::copy(a->value.data.begin(), a->value.data.end(), out.data.begin());
    std::copy(b->value.data.begin(), b->value.data.end(), out.data.begin() + a->value.numel());
    return make_op(std::move(out), {a, b}, [](Node& n) {
        Var av = n.parents[0], bv = n.parents[1];
        const std::size_t na = av->value.numel();
        if (av->requires_grad) {
            av->ensure_grad();
            for (std::size_t i = 0; i < na; ++i) av->grad.data[i] += n.grad.data[i];
        }
        if (bv->requires_grad) {
            bv->ensure_grad();
            for (std::size_t i = 0; i < bv->value.numel(); ++i) bv->grad.data[i] += n.grad.data[na + i];
        }
    });
}

Var relu(const Var& x) {
    Tensor out = x->value;
    for (double& v : out.data) v = v > 0.0 ? v : 0.0;
    return make_op(std::move(out), {x}, [](Node& n) {
        Var xv = n.parents[0];
        xv->ensure_grad();
        for (std::size_t i = 0; i < n.value.numel(); ++i)
            if (xv->value.data[i] > 0.0) xv->grad.data[i] += n.grad.data[i];
    });
}

Var tanh_activation(const Var& x) {
    Tensor out = x->value;
    for (double& v : out.data) v = std::tanh(v);
    return make_op(std::move(out), {x}, [](Node& n) {
        Var xv = n.parents[0];
        xv->ensure_grad();
        for (std::size_t i = 0; i < n.value.numel(); ++i) {
            const double y = n.value.data[i];
            xv->grad.data[i] += n.grad.data[i] * (1.0 - y * y);
        }
    });
}

Var global_avg_pool(const Var& x) {
    check_chw(x, "global_avg_pool");
    const int c = x->value.dim(0);
    const std::size_t plane = static_cast<std::size_t>(x->value.dim(1)) * x->value.dim(2);
    Tensor out({c});
    for (int ch = 0; ch < c; ++ch) {
        const double* p = x->value.data.data() + ch * plane;
        double s = 0.0;
        for (std::size_t i = 0; i < plane; ++i) s += p[i];
        out(ch) = s / static_cast<double>(plane);
    }
    return make_op(std::move(out), {x}, [c, plane](Node& n) {
        Var xv = n.parents[0];
        xv->ensure_grad();
        const double inv = 1.0 / static_cast<double>(plane);
        for (int ch = 0; ch < c; ++ch) {
            const double g = n.grad(ch) * inv;
            double* p = xv->grad.data.data() + ch * plane;
            for (std::size_t i = 0; i < plane; ++i) p[i] += g;
        }
    });
}

// --- grid ops ----------------------------------------------------------------

Var chw_to_rows(const Var& x) {
    check_chw(x, "chw_to_rows");
    const int c = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2);
    Tensor out({h * w, c});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) out(y * w + xx, ch) = x->value(ch, y, xx);
    return make_op(std::move(out), {x}, [c, h, w](Node& n) {
        Var xv = n.parents[0];
        xv->ensure_grad();
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < w; ++xx) xv->grad(ch, y, xx) += n.grad(y * w + xx, ch);
    });
}

Var rows_to_chw(const Var& x, int height, int width) {
    if (x->value.ndim() != 2 || x->value.dim(0) != height * width)
        throw std::invalid_argument("rows_to_chw: row count must equal height*width");
    const int c = x->value.dim(1);
    Tensor out({c, height, width});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < height; ++y)
            for (int xx = 0; xx < width; ++xx) out(ch, y, xx) = x->value(y * width + xx, ch);
    return make_op(std::move(out), {x}, [c, height, width](Node& n) {
        Var xv = n.parents[0];
        xv->ensure_grad();
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < height; ++y)
                for (int xx = 0; xx < width; ++xx) xv->grad(y * width + xx, ch) += n.grad(ch, y, xx);
    });
}

Var l2_normalize_rows(const Var& x, double eps) {
    if (x->value.ndim() != 2) throw std::invalid_argument("l2_normalize_rows: expected [K,C]");
    const int k = x->value.dim(0), c = x->value.dim(1);
    Tensor out({k, c});
    std::vector<double> norms(static_cast<std::size_t>(k));
    for (int r = 0; r < k; ++r) {
        const double* p = x->value.data.data() + static_cast<std::size_t>(r) * c;
        double nr = l2_norm(p, static_cast<std::size_t>(c));
        norms[r] = nr;
        double* o = out.data.data() + static_cast<std::size_t>(r) * c;
        if (nr > eps)
            for (int i = 0; i < c; ++i) o[i] = p[i] / nr;
        else
            for (int i = 0; i < c; ++i) o[i] = p[i];
    }
    return make_op(std::move(out), {x}, [k, c, eps, norms](Node& n) {
        Var xv = n.parents[0];
        xv->ensure_grad();
        for (int r = 0; r < k; ++r) {
            const double nr = norms[r];
            double* xg = xv->grad.data.data() + static_cast<std::size_t>(r) * c;
            const double* g = n.grad.data.data() + static_cast<std::size_t>(r) * c;
            if (nr > eps) {
                const double* y = n.value.data.data() + static_cast<std::size_t>(r) * c;
                double gy = 0.0;
                for (int i = 0; i < c; ++i) gy += g[i] * y[i];
                for (int i = 0; i < c; ++i) xg[i] += (g[i] - y[i] * gy) / nr;
            } else {
                for (int i = 0; i < c; ++i) xg[i] += g[i];
            }
        }
    });
}

Var softmax_rows(const Var& x) {
    if (x->value.ndim() != 2) throw std::invalid_argument("softmax_rows: expected 2-d tensor");
    const int k = x->value.dim(0), m = x->value.dim(1);
    Tensor out({k, m});
    for (int r = 0; r < k; ++r) {
        const double* p = x->value.data.data() + static_cast<std::size_t>(r) * m;
        double mx = p[0];
        for (int i = 1; i < m; ++i) mx = std::max(mx, p[i]);
        double denom = 0.0;
        double* o = out.data.data() + static_cast<std::size_t>(r) * m;
        for (int i = 0; i < m; ++i) {
            o[i] = std::exp(p[i] - mx);
            denom += o[i];
        }
        for (int i = 0; i < m; ++i) o[i] /= denom;
    }
    return make_op(std::move(out), {x}, [k, m](Node& n) {
        Var xv = n.parents[0];
        xv->ensure_grad();
        for (int r = 0; r < k; ++r) {
            const double* y = n.value.data.data() + static_cast<std::size_t>(r) * m;
            const double* g = n.grad.data.data() + static_cast<std::size_t>(r) * m;
            double* xg = xv->grad.data.data() + static_cast<std::size_t>(r) * m;
            double gy = 0.0;
            for (int i = 0; i < m; ++i) gy += g[i] * y[i];
            for (int i = 0; i < m; ++i) xg[i] += y[i] * (g[i] - gy);
        }
    });
}

Var matmul_const_nt(const Var& x, const Tensor& mat) {
    if (x->value.ndim() != 2 || mat.ndim() != 2 || x->value.dim(1) != mat.dim(1))
        throw std::invalid_argument("matmul_const_nt: shape mismatch");
    const int k = x->value.dim(0), c = x->value.dim(1), m = mat.dim(0);
    Tensor out({k, m});
    for (int r = 0; r < k; ++r)
        for (int j = 0; j < m; ++j)
            out(r, j) = dot(x->value.data.data() + static_cast<std::size_t>(r) * c,
                            mat.data.data() + static_cast<std::size_t>(j) * c, static_cast<std::size_t>(c));
    return make_op(std::move(out), {x}, [k, c, m, mat](Node& n) {
        Var xv = n.parents[0];
        xv->ensure_grad();
        for (int r = 0; r < k; ++r)
            for (int j = 0; j < m; ++j) {
                const double g = n.grad(r, j);
                const double* mr = mat.data.data() + static_cast<std::size_t>(j) * c;
                double* xg = xv->grad.data.data() + static_cast<std::size_t>(r) * c;
                for (int i = 0; i < c; ++i) xg[i] += g * mr[i];
            }
    });
}

Var matmul_const_nn(const Var& x, const Tensor& mat) {
    if (x->value.ndim() != 2 || mat.ndim() != 2 || x->value.dim(1) != mat.dim(0))
        throw std::invalid_argument("matmul_const_nn: shape mismatch");
    const int k = x->value.dim(0), m = x->value.dim(1), c = mat.dim(1);
    Tensor out({k, c});
    for (int r = 0; r < k; ++r)
        for (int j = 0; j < m; ++j) {
            const double xv_ = x->value(r, j);
            const double* mr = mat.data.data() + static_cast<std::size_t>(j) * c;
            double* o = out.data.data() + static_cast<std::size_t>(r) * c;
            for (int i = 0; i < c; ++i) o[i] += xv_ * mr[i];
        }
    return make_op(std::move(out), {x}, [k, m, c, mat](Node& n) {
        Var xv = n.parents[0];
        xv->ensure_grad();
        for (int r = 0; r < k; ++r)
            for (int j = 0; j < m; ++j) {
                const double* mr = mat.data.data() + static_cast<std::size_t>(j) * c;
                const double* g = n.grad.data.data() + static_cast<std::size_t>(r) * c;
                double s = 0.0;
                for (int i = 0; i < c; ++i) s += g[i] * mr[i];
                xv->grad(r, j) += s;
            }
    });
}

Var concat_rows_cols(const Var& a, const Var& b) {
    if (a->value.ndim() != 2 || b->value.ndim() != 2 || a->value.dim(0) != b->value.dim(0))
        throw std::invalid_argument("concat_rows_cols: row mismatch");
    const int k = a->value.dim(0), ca = a->value.dim(1), cb = b->value.dim(1);
    Tensor out({k, ca + cb});
    for (int r = 0; r < k; ++r) {
        for (int i = 0; i < ca; ++i) out(r, i) = a->value(r, i);
        for (int i = 0; i < cb; ++i) out(r, ca + i) = b->value(r, i);
    }
    return make_op(std::move(out), {a, b}, [k, ca, cb](Node& n) {
        Var av = n.parents[0], bv = n.parents[1];
        if (av->requires_grad) {
            av->ensure_grad();
            for (int r = 0; r < k; ++r)
                for (int i = 0; i < ca; ++i) av->grad(r, i) += n.grad(r, i);
        }
        if (bv->requires_grad) {
            bv->ensure_grad();
            for (int r = 0; r < k; ++r)
                for (int i = 0; i < cb; ++i) bv->grad(r, i) += n.grad(r, ca + i);
        }
    });
}

// --- scalar ops ----------------------------------------------------------------

Var sum_sq_diff(const Var& a, const Tensor& target) {
    if (!a->value.same_shape(target)) throw std::invalid_argument("sum_sq_diff: shape mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a->value.numel(); ++i) {
        const double d = a->value.data[i] - target.data[i];
        s += d * d;
    }
    return make_op(Tensor({1}, {s}), {a}, [target](Node& n) {
        Var av = n.parents[0];
        av->ensure_grad();
        const double g = 2.0 * n.grad(0);
        for (std::size_t i = 0; i < av->value.numel(); ++i)
            av->grad.data[i] += g * (av->value.data[i] - target.data[i]);
    });
}

Var scale(const Var& a, double s) {
    Tensor out = a->value;
    for (double& v : out.data) v *= s;
    return make_op(std::move(out), {a}, [s](Node& n) {
        Var av = n.parents[0];
        av->ensure_grad();
        for (std::size_t i = 0; i < av->value.numel(); ++i) av->grad.data[i] += s * n.grad.data[i];
    });
}

Var weighted_sum(const std::vector<std::pair<double, Var>>& terms) {
    if (terms.empty()) throw std::invalid_argument("weighted_sum: no terms");
    double s = 0.0;
    std::vector<Var> parents;
    std::vector<double> coeffs;
    for (const auto& [c, v] : terms) {
        if (v->value.numel() != 1) throw std::invalid_argument("weighted_sum: non-scalar term");
        s += c * v->value(0);
        parents.push_back(v);
        coeffs.push_back(c);
    }
    return make_op(Tensor({1}, {s}), std::move(parents), [coeffs](Node& n) {
        for (std::size_t i = 0; i < n.parents.size(); ++i) {
            if (!n.parents[i]->requires_grad) continue;
            n.parents[i]->ensure_grad();
            n.parents[i]->grad(0) += coeffs[i] * n.grad(0);
        }
    });
}

Var triplet_op(const Var& anchor, const Var& positive, const Var& negative, double margin) {
    if (!anchor->value.same_shape(positive->value) || !anchor->value.same_shape(negative->value))
        throw std::invalid_argument("triplet_op: feature shape mismatch");
    if (margin < 0.0) throw std::invalid_argument("triplet_op: negative margin");
    const std::size_t n = anchor->value.numel();
    const double dp = sq_dist(anchor->value.data.data(), positive->value.data.data(), n);
    const double dn = sq_dist(anchor->value.data.data(), negative->value.data.data(), n);
    const double v = dp - dn + margin;
    const bool active = v > 0.0;
    return make_op(Tensor({1}, {active ? v : 0.0}), {anchor, positive, negative}, [active](Node& nd) {
        if (!active) return;
        Var a = nd.parents[0], p = nd.parents[1], ng = nd.parents[2];
        const double g = 2.0 * nd.grad(0);
        const std::size_t sz = a->value.numel();
        if (a->requires_grad) {
            a->ensure_grad();
            for (std::size_t i = 0; i < sz; ++i)
                a->grad.data[i] += g * (ng->value.data[i] - p->value.data[i]);
        }
        if (p->requires_grad) {
            p->ensure_grad();
            for (std::size_t i = 0; i < sz; ++i)
                p->grad.data[i] += g * (p->value.data[i] - a->value.data[i]);
        }
        if (ng->requires_grad) {
            ng->ensure_grad();
            for (std::size_t i = 0; i < sz; ++i)
                ng->grad.data[i] += g * (a->value.data[i] - ng->value.data[i]);
        }
    });
}

namespace {

// nearest and second-nearest bank rows by dot product, ties to lowest index
void two_nearest(const double* q, const Tensor& bank, int& first, int& second) {
    const int m = bank.dim(0), c = bank.dim(1);
    first = -1;
    second = -1;
    double s1 = -1e300, s2 = -1e300;
    for (int j = 0; j < m; ++j) {
        const double s = dot(q, bank.data.data() + static_cast<std::size_t>(j) * c, static_cast<std::size_t>(c));
        if (s > s1) {
            s2 = s1;
            second = first;
            s1 = s;
            first = j;
        } else if (s > s2) {
            s2 = s;
            second = j;
        }
    }
}

}  // namespace

Var compactness_op(const Var& queries, const Tensor& bank) {
    if (queries->value.ndim() != 2 || bank.ndim() != 2 || queries->value.dim(1) != bank.dim(1))
        throw std::invalid_argument("compactness_op: shape mismatch");
    const int k = queries->value.dim(0), c = bank.dim(1);
    std::vector<int> sel(static_cast<std::size_t>(k));
    double total = 0.0;
    for (int r = 0; r < k; ++r) {
        int first, second;
        two_nearest(queries->value.data.data() + static_cast<std::size_t>(r) * c, bank, first, second);
        sel[r] = first;
        total += sq_dist(queries->value.data.data() + static_cast<std::size_t>(r) * c,
                         bank.data.data() + static_cast<std::size_t>(first) * c, static_cast<std::size_t>(c));
    }
    return make_op(Tensor({1}, {total}), {queries}, [k, c, bank, sel](Node& n) {
        Var qv = n.parents[0];
        qv->ensure_grad();
        const double g = 2.0 * n.grad(0);
        for (int r = 0; r < k; ++r) {
            const double* q = qv->value.data.data() + static_cast<std::size_t>(r) * c;
            const double* p = bank.data.data() + static_cast<std::size_t>(sel[r]) * c;
            double* qg = qv->grad.data.data() + static_cast<std::size_t>(r) * c;
            for (int i = 0; i < c; ++i) qg[i] += g * (q[i] - p[i]);
        }
    });
}

Var separateness_op(const Var& queries, const Tensor& bank, double margin) {
    if (queries->value.ndim() != 2 || bank.ndim() != 2 || queries->value.dim(1) != bank.dim(1))
        throw std::invalid_argument("separateness_op: shape mismatch");
    if (bank.dim(0) < 2) throw std::invalid_argument("separateness_op: needs at least two bank rows");
    if (margin < 0.0) throw std::invalid_argument("separateness_op: negative margin");
    const int k = queries->value.dim(0), c = bank.dim(1);
    std::vector<int> sel_p(static_cast<std::size_t>(k)), sel_n(static_cast<std::size_t>(k));
    std::vector<bool> active(static_cast<std::size_t>(k));
    double total = 0.0;
    for (int r = 0; r < k; ++r) {
        const double* q = queries->value.data.data() + static_cast<std::size_t>(r) * c;
        int first, second;
        two_nearest(q, bank, first, second);
        sel_p[r] = first;
        sel_n[r] = second;
        const double dp = sq_dist(q, bank.data.data() + static_cast<std::size_t>(first) * c, static_cast<std::size_t>(c));
        const double dn = sq_dist(q, bank.data.data() + static_cast<std::size_t>(second) * c, static_cast<std::size_t>(c));
        const double v = dp - dn + margin;
        active[r] = v > 0.0;
        if (active[r]) total += v;
    }
    return make_op(Tensor({1}, {total}), {queries}, [k, c, bank, sel_p, sel_n, active](Node& n) {
        Var qv = n.parents[0];
        qv->ensure_grad();
        const double g = 2.0 * n.grad(0);
        for (int r = 0; r < k; ++r) {
            if (!active[r]) continue;
            const double* pp = bank.data.data() + static_cast<std::size_t>(sel_p[r]) * c;
            const double* pn = bank.data.data() + static_cast<std::size_t>(sel_n[r]) * c;
            double* qg = qv->grad.data.data() + static_cast<std::size_t>(r) * c;
            for (int i = 0; i < c; ++i) qg[i] += g * (pn[i] - pp[i]);
        }
    });
}

}  // namespace dmad
