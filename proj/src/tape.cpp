#include "lstr/tape.hpp"

#include <array>
#include <cmath>
#include <stdexcept>
#include <utility>

namespace lstr {

namespace {

void accumulate(MatD& dst, const MatD& src, double fault) {
    for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += fault * src.data[i];
}

constexpr std::array<OpKind, 12> kDifferentiable = {
    OpKind::matmul,     OpKind::transpose, OpKind::add,          OpKind::scale,
    OpKind::add_row,    OpKind::relu,      OpKind::layer_norm,   OpKind::softmax_rows,
    OpKind::col_slice,  OpKind::col_concat, OpKind::sum_all,     OpKind::softmax_xent,
};

}  // namespace

const char* op_name(OpKind k) {
    switch (k) {
        case OpKind::leaf: return "leaf";
        case OpKind::matmul: return "matmul";
        case OpKind::transpose: return "transpose";
        case OpKind::add: return "add";
        case OpKind::scale: return "scale";
        case OpKind::add_row: return "add_row";
        case OpKind::relu: return "relu";
        case OpKind::layer_norm: return "layer_norm";
        case OpKind::softmax_rows: return "softmax_rows";
        case OpKind::col_slice: return "col_slice";
        case OpKind::col_concat: return "col_concat";
        case OpKind::sum_all: return "sum_all";
        case OpKind::softmax_xent: return "softmax_xent";
    }
    return "?";
}

std::span<const OpKind> differentiable_ops() { return kDifferentiable; }

Var Tape::push(OpKind kind, MatD value, std::function<void(Tape&, const Node&)> back) {
    Node n;
    n.kind = kind;
    n.value = std::move(value);
    n.grad = MatD::zeros(n.value.rows, n.value.cols);
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

double Tape::fault(OpKind k) const {
    auto it = faults_.find(k);
    return it == faults_.end() ? 1.0 : it->second;
}

Var Tape::leaf(MatD value) { return push(OpKind::leaf, std::move(value), nullptr); }

Var Tape::matmul(Var a, Var b) {
    MatD out = lstr::matmul(val(a), val(b));
    return push(OpKind::matmul, std::move(out), [a, b](Tape& t, const Node& self) {
        const double f = t.fault(OpKind::matmul);
        accumulate(t.grad_mut(a), lstr::matmul(self.grad, lstr::transpose(t.val(b))), f);
        accumulate(t.grad_mut(b), lstr::matmul(lstr::transpose(t.val(a)), self.grad), f);
    });
}

Var Tape::transpose(Var a) {
    return push(OpKind::transpose, lstr::transpose(val(a)), [a](Tape& t, const Node& self) {
        accumulate(t.grad_mut(a), lstr::transpose(self.grad), t.fault(OpKind::transpose));
    });
}

Var Tape::add(Var a, Var b) {
    return push(OpKind::add, lstr::add(val(a), val(b)), [a, b](Tape& t, const Node& self) {
        const double f = t.fault(OpKind::add);
        accumulate(t.grad_mut(a), self.grad, f);
        accumulate(t.grad_mut(b), self.grad, f);
    });
}

Var Tape::scale(Var a, double s) {
    return push(OpKind::scale, lstr::scale(val(a), s), [a, s](Tape& t, const Node& self) {
        accumulate(t.grad_mut(a), lstr::scale(self.grad, s), t.fault(OpKind::scale));
    });
}

Var Tape::add_row(Var x, Var r) {
    return push(OpKind::add_row, lstr::add_row(val(x), val(r)), [x, r](Tape& t, const Node& self) {
        const double f = t.fault(OpKind::add_row);
        accumulate(t.grad_mut(x), self.grad, f);
        MatD rsum(1, self.grad.cols);
        for (int i = 0; i < self.grad.rows; ++i) {
            for (int j = 0; j < self.grad.cols; ++j) rsum(0, j) += self.grad(i, j);
        }
        accumulate(t.grad_mut(r), rsum, f);
    });
}

Var Tape::relu(Var x) {
    return push(OpKind::relu, lstr::relu(val(x)), [x](Tape& t, const Node& self) {
        const MatD& in = t.val(x);
        MatD dx(in.rows, in.cols);
        for (std::size_t i = 0; i < in.data.size(); ++i) {
            dx.data[i] = in.data[i] > 0.0 ? self.grad.data[i] : 0.0;
        }
        accumulate(t.grad_mut(x), dx, t.fault(OpKind::relu));
    });
}

Var Tape::layer_norm(Var x, Var gain, Var bias, double eps) {
    MatD out = lstr::layer_norm(val(x), val(gain), val(bias), eps);
    return push(OpKind::layer_norm, std::move(out), [x, gain, bias, eps](Tape& t, const Node& self) {
        const double f = t.fault(OpKind::layer_norm);
        const MatD& in = t.val(x);
        const MatD& g = t.val(gain);
        const int n = in.cols;
        MatD dx(in.rows, in.cols);
        MatD dg(1, n);
        MatD db(1, n);
        for (int i = 0; i < in.rows; ++i) {
            double mean = 0.0;
            for (int j = 0; j < n; ++j) mean += in(i, j);
            mean /= n;
            double var = 0.0;
            for (int j = 0; j < n; ++j) {
                const double d = in(i, j) - mean;
                var += d * d;
            }
            var /= n;
            const double inv = 1.0 / std::sqrt(var + eps);
            // y = (x - mean) * inv; out = y * g + b
            double mean_dy = 0.0;
            double mean_dyy = 0.0;
            for (int j = 0; j < n; ++j) {
                const double y = (in(i, j) - mean) * inv;
                const double dy = self.grad(i, j) * g(0, j);
                dg(0, j) += self.grad(i, j) * y;
                db(0, j) += self.grad(i, j);
                mean_dy += dy;
                mean_dyy += dy * y;
            }
            mean_dy /= n;
            mean_dyy /= n;
            for (int j = 0; j < n; ++j) {
                const double y = (in(i, j) - mean) * inv;
                const double dy = self.grad(i, j) * g(0, j);
                dx(i, j) = inv * (dy - mean_dy - y * mean_dyy);
            }
        }
        accumulate(t.grad_mut(x), dx, f);
        accumulate(t.grad_mut(gain), dg, f);
        accumulate(t.grad_mut(bias), db, f);
    });
}

Var Tape::softmax_rows(Var s, const AttentionMask* mask) {
    MatD out = lstr::softmax_rows(val(s), mask);
    return push(OpKind::softmax_rows, std::move(out), [s](Tape& t, const Node& self) {
        // ds_j = p_j * (dp_j - sum_k dp_k p_k); masked entries have p = 0.
        const MatD& p = self.value;
        MatD ds(p.rows, p.cols);
        for (int i = 0; i < p.rows; ++i) {
            double dot = 0.0;
            for (int j = 0; j < p.cols; ++j) dot += self.grad(i, j) * p(i, j);
            for (int j = 0; j < p.cols; ++j) ds(i, j) = p(i, j) * (self.grad(i, j) - dot);
        }
        accumulate(t.grad_mut(s), ds, t.fault(OpKind::softmax_rows));
    });
}

Var Tape::col_slice(Var x, int c0, int w) {
    return push(OpKind::col_slice, lstr::col_slice(val(x), c0, w),
                [x, c0, w](Tape& t, const Node& self) {
                    const double f = t.fault(OpKind::col_slice);
                    MatD& gx = t.grad_mut(x);
                    for (int i = 0; i < self.grad.rows; ++i) {
                        for (int j = 0; j < w; ++j) gx(i, c0 + j) += f * self.grad(i, j);
                    }
                });
}

Var Tape::col_concat(std::span<const Var> parts) {
    std::vector<MatD> vals;
    vals.reserve(parts.size());
    for (Var p : parts) vals.push_back(val(p));
    std::vector<Var> owned(parts.begin(), parts.end());
    MatD out = lstr::col_concat(std::span<const MatD>(vals));
    return push(OpKind::col_concat, std::move(out), [owned](Tape& t, const Node& self) {
        const double f = t.fault(OpKind::col_concat);
        int c = 0;
        for (Var p : owned) {
            MatD& gp = t.grad_mut(p);
            for (int i = 0; i < gp.rows; ++i) {
                for (int j = 0; j < gp.cols; ++j) gp(i, j) += f * self.grad(i, c + j);
            }
            c += gp.cols;
        }
    });
}

Var Tape::sum_all(Var x) {
    MatD out(1, 1);
    out(0, 0) = lstr::sum_all(val(x));
    return push(OpKind::sum_all, std::move(out), [x](Tape& t, const Node& self) {
        const double f = t.fault(OpKind::sum_all);
        MatD& gx = t.grad_mut(x);
        const double g = self.grad(0, 0);
        for (double& v : gx.data) v += f * g;
    });
}

Var Tape::softmax_xent(Var logits, std::vector<int> labels) {
    const MatD& l = val(logits);
    if (static_cast<int>(labels.size()) != l.rows) {
        throw std::invalid_argument("softmax_xent: " + std::to_string(labels.size()) +
                                    " labels for " + std::to_string(l.rows) + " rows");
    }
    for (int y : labels) {
        if (y < 0 || y >= l.cols) {
            throw std::invalid_argument("softmax_xent: label " + std::to_string(y) +
                                        " out of range [0, " + std::to_string(l.cols) + ")");
        }
    }
    MatD out(1, 1);
    double total = 0.0;
    for (int i = 0; i < l.rows; ++i) {
        double mx = l(i, 0);
        for (int j = 1; j < l.cols; ++j) mx = std::max(mx, l(i, j));
        double sum = 0.0;
        for (int j = 0; j < l.cols; ++j) sum += std::exp(l(i, j) - mx);
        total += mx + std::log(sum) - l(i, labels[static_cast<std::size_t>(i)]);
    }
    out(0, 0) = total;
    return push(OpKind::softmax_xent, std::move(out),
                [logits, labels = std::move(labels)](Tape& t, const Node& self) {
                    const double f = t.fault(OpKind::softmax_xent);
                    const MatD& l = t.val(logits);
                    const MatD p = lstr::softmax_rows(l);
                    MatD dl(l.rows, l.cols);
                    const double g = self.grad(0, 0);
                    for (int i = 0; i < l.rows; ++i) {
                        for (int j = 0; j < l.cols; ++j) {
                            const double onehot =
                                j == labels[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
                            dl(i, j) = g * (p(i, j) - onehot);
                        }
                    }
                    accumulate(t.grad_mut(logits), dl, f);
                });
}

void Tape::backward(Var root) {
    if (!root.valid() || root.id >= static_cast<std::int32_t>(nodes_.size())) {
        throw std::invalid_argument("backward: invalid root");
    }
    Node& r = nodes_[root.id];
    if (r.value.rows != 1 || r.value.cols != 1) {
        throw std::invalid_argument("backward: root must be a 1x1 scalar, got " +
                                    shape_str(r.value.rows, r.value.cols));
    }
    r.grad(0, 0) = 1.0;
    for (std::int32_t i = root.id; i >= 0; --i) {
        const Node& n = nodes_[i];
        if (n.back) n.back(*this, n);
    }
}

}  // namespace lstr
