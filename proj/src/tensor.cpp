#include "ca/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace ca {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConstMat = Eigen::Map<const RowMat>;

int64_t numel(const Shape& shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ')';
    return os.str();
}

void shape_fail(const char* op, const Shape& a, const Shape& b) {
    throw TensorError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

void shape_fail(const char* op, const Shape& a) {
    throw TensorError(std::string(op) + ": invalid shape " + shape_str(a));
}

// ---- Tensor ----------------------------------------------------------------

const Shape& Tensor::shape() const { return tape_->at(node_).shape; }
int64_t Tensor::size() const { return static_cast<int64_t>(tape_->at(node_).value.size()); }
std::span<const double> Tensor::values() const { return tape_->at(node_).value; }
std::span<const double> Tensor::grad() const { return tape_->at(node_).grad; }
bool Tensor::requires_grad() const { return tape_->at(node_).requires_grad; }

double Tensor::scalar() const {
    const auto& v = tape_->at(node_).value;
    if (v.size() != 1) throw TensorError("scalar: tensor has " + std::to_string(v.size()) + " elements");
    return v[0];
}

// ---- Tape ------------------------------------------------------------------

Tensor Tape::input(Shape shape, std::vector<double> data, bool requires_grad) {
    if (shape.empty()) shape_fail("input", shape);
    for (int d : shape)
        if (d <= 0) shape_fail("input", shape);
    if (numel(shape) != static_cast<int64_t>(data.size()))
        throw TensorError("input: data length " + std::to_string(data.size()) + " != numel" + shape_str(shape));
    return emplace(std::move(shape), std::move(data), requires_grad, nullptr);
}

Tensor Tape::constant_like(const Tensor& ref, double fill) {
    return input(ref.shape(), std::vector<double>(ref.size(), fill), false);
}

Tensor Tape::emplace(Shape shape, std::vector<double> value, bool requires_grad,
                     std::function<void(Tape&)> backprop) {
    Node node;
    node.shape = std::move(shape);
    node.value = std::move(value);
    node.requires_grad = requires_grad;
    node.backprop = requires_grad ? std::move(backprop) : nullptr;
    nodes_.push_back(std::move(node));
    return Tensor(this, static_cast<int>(nodes_.size()) - 1);
}

std::vector<double>& Tape::grad_buffer(int i) {
    Node& n = nodes_[i];
    if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
    return n.grad;
}

void Tape::backward(const Tensor& loss) {
    if (loss.tape() != this) throw TensorError("backward: loss from another tape");
    if (consumed_) throw TensorError("backward: tape already walked");
    if (loss.size() != 1) throw TensorError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    consumed_ = true;
    grad_buffer(loss.node())[0] = 1.0;
    for (int i = loss.node(); i >= 0; --i) {
        Node& n = nodes_[i];
        if (!n.requires_grad || !n.backprop || n.grad.empty()) continue;
        n.backprop(*this);
    }
}

// ---- broadcast machinery ----------------------------------------------------

namespace {

struct Bcast {
    Shape out;
    std::vector<int64_t> sa, sb;  // element strides aligned to out; 0 on broadcast axes
};

std::vector<int64_t> row_major_strides(const Shape& s) {
    std::vector<int64_t> st(s.size());
    int64_t acc = 1;
    for (int d = static_cast<int>(s.size()) - 1; d >= 0; --d) {
        st[d] = acc;
        acc *= s[d];
    }
    return st;
}

Bcast broadcast_plan(const char* op, const Shape& a, const Shape& b) {
    const int ra = static_cast<int>(a.size()), rb = static_cast<int>(b.size());
    const int r = std::max(ra, rb);
    Bcast p;
    p.out.resize(r);
    p.sa.assign(r, 0);
    p.sb.assign(r, 0);
    auto sta = row_major_strides(a);
    auto stb = row_major_strides(b);
    for (int d = r - 1; d >= 0; --d) {
        const int da = d - (r - ra), db = d - (r - rb);
        const int la = da >= 0 ? a[da] : 1;
        const int lb = db >= 0 ? b[db] : 1;
        if (la != lb && la != 1 && lb != 1) shape_fail(op, a, b);
        p.out[d] = std::max(la, lb);
        if (da >= 0 && la != 1) p.sa[d] = sta[da];
        if (db >= 0 && lb != 1) p.sb[d] = stb[db];
    }
    return p;
}

// Calls f(linear_out, offset_a, offset_b) for every output element.
template <typename F>
void for_each(const Bcast& p, F&& f) {
    const int r = static_cast<int>(p.out.size());
    const int64_t n = numel(p.out);
    std::vector<int> idx(r, 0);
    int64_t oa = 0, ob = 0;
    for (int64_t lin = 0;;) {
        f(lin, oa, ob);
        if (++lin == n) return;
        for (int d = r - 1; d >= 0; --d) {
            oa += p.sa[d];
            ob += p.sb[d];
            if (++idx[d] < p.out[d]) break;
            oa -= p.sa[d] * p.out[d];
            ob -= p.sb[d] * p.out[d];
            idx[d] = 0;
        }
    }
}

// Axis split for reductions/softmax: (outer, len, inner).
struct AxisSplit {
    int64_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_axis(const char* op, const Shape& s, int axis) {
    if (axis < 0 || axis >= static_cast<int>(s.size()))
        throw TensorError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " + shape_str(s));
    AxisSplit sp;
    for (int d = 0; d < axis; ++d) sp.outer *= s[d];
    sp.len = s[axis];
    for (int d = axis + 1; d < static_cast<int>(s.size()); ++d) sp.inner *= s[d];
    return sp;
}

Shape drop_axis(const Shape& s, int axis) {
    Shape out;
    out.reserve(s.size() - 1);
    for (int d = 0; d < static_cast<int>(s.size()); ++d)
        if (d != axis) out.push_back(s[d]);
    if (out.empty()) out.push_back(1);
    return out;
}

using BinFwd = double (*)(double, double);

Tensor binary_op(const char* op, const Tensor& a, const Tensor& b, BinFwd fwd,
                 void (*bwd)(Tape&, int, int, int, const Bcast&)) {
    if (a.tape() != b.tape()) throw TensorError(std::string(op) + ": tensors from different tapes");
    Tape& tape = *a.tape();
    Bcast p = broadcast_plan(op, a.shape(), b.shape());
    std::vector<double> out(numel(p.out));
    const auto av = a.values(), bv = b.values();
    if (a.shape() == b.shape()) {
        for (size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i], bv[i]);
    } else {
        for_each(p, [&](int64_t lin, int64_t oa, int64_t ob) { out[lin] = fwd(av[oa], bv[ob]); });
    }
    const bool rg = a.requires_grad() || b.requires_grad();
    const int na = a.node(), nb = b.node();
    Tensor outT = tape.emplace(p.out, std::move(out), rg, nullptr);
    if (rg) {
        const int no = outT.node();
        tape.at(no).backprop = [=, plan = std::move(p)](Tape& t) { bwd(t, no, na, nb, plan); };
    }
    return outT;
}

}  // namespace

// ---- elementwise binaries ---------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op(
        "add", a, b, [](double x, double y) { return x + y; },
        [](Tape& t, int no, int na, int nb, const Bcast& p) {
            const auto& g = t.at(no).grad;
            if (t.at(na).requires_grad) {
                auto& ga = t.grad_buffer(na);
                for_each(p, [&](int64_t lin, int64_t oa, int64_t) { ga[oa] += g[lin]; });
            }
            if (t.at(nb).requires_grad) {
                auto& gb = t.grad_buffer(nb);
                for_each(p, [&](int64_t lin, int64_t, int64_t ob) { gb[ob] += g[lin]; });
            }
        });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op(
        "sub", a, b, [](double x, double y) { return x - y; },
        [](Tape& t, int no, int na, int nb, const Bcast& p) {
            const auto& g = t.at(no).grad;
            if (t.at(na).requires_grad) {
                auto& ga = t.grad_buffer(na);
                for_each(p, [&](int64_t lin, int64_t oa, int64_t) { ga[oa] += g[lin]; });
            }
            if (t.at(nb).requires_grad) {
                auto& gb = t.grad_buffer(nb);
                for_each(p, [&](int64_t lin, int64_t, int64_t ob) { gb[ob] -= g[lin]; });
            }
        });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op(
        "mul", a, b, [](double x, double y) { return x * y; },
        [](Tape& t, int no, int na, int nb, const Bcast& p) {
            const auto& g = t.at(no).grad;
            const auto& av = t.at(na).value;
            const auto& bv = t.at(nb).value;
            if (t.at(na).requires_grad) {
                auto& ga = t.grad_buffer(na);
                for_each(p, [&](int64_t lin, int64_t oa, int64_t ob) { ga[oa] += g[lin] * bv[ob]; });
            }
            if (t.at(nb).requires_grad) {
                auto& gb = t.grad_buffer(nb);
                for_each(p, [&](int64_t lin, int64_t oa, int64_t ob) { gb[ob] += g[lin] * av[oa]; });
            }
        });
}

Tensor minimum(const Tensor& a, const Tensor& b) {
    return binary_op(
        "minimum", a, b, [](double x, double y) { return x <= y ? x : y; },
        [](Tape& t, int no, int na, int nb, const Bcast& p) {
            const auto& g = t.at(no).grad;
            const auto& av = t.at(na).value;
            const auto& bv = t.at(nb).value;
            const bool rga = t.at(na).requires_grad, rgb = t.at(nb).requires_grad;
            if (rga) t.grad_buffer(na);
            if (rgb) t.grad_buffer(nb);
            for_each(p, [&](int64_t lin, int64_t oa, int64_t ob) {
                if (av[oa] <= bv[ob]) {  // ties route to the first argument
                    if (rga) t.at(na).grad[oa] += g[lin];
                } else if (rgb) {
                    t.at(nb).grad[ob] += g[lin];
                }
            });
        });
}

// ---- elementwise unaries ----------------------------------------------------

namespace {

template <typename Fwd, typename MakeBack>
Tensor unary_op(const Tensor& a, Fwd fwd, MakeBack make_back) {
    Tape& tape = *a.tape();
    const auto av = a.values();
    std::vector<double> out(av.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i]);
    Tensor o = tape.emplace(a.shape(), std::move(out), a.requires_grad(), nullptr);
    if (a.requires_grad()) tape.at(o.node()).backprop = make_back(a.node(), o.node());
    return o;
}

}  // namespace

Tensor neg(const Tensor& a) {
    return unary_op(
        a, [](double x) { return -x; },
        [](int na, int no) {
            return [=](Tape& t) {
                const auto& g = t.at(no).grad;
                auto& ga = t.grad_buffer(na);
                for (size_t i = 0; i < g.size(); ++i) ga[i] -= g[i];
            };
        });
}

Tensor scale(const Tensor& a, double c) {
    return unary_op(
        a, [c](double x) { return c * x; },
        [c](int na, int no) {
            return [=](Tape& t) {
                const auto& g = t.at(no).grad;
                auto& ga = t.grad_buffer(na);
                for (size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
            };
        });
}

Tensor add_scalar(const Tensor& a, double c) {
    return unary_op(
        a, [c](double x) { return x + c; },
        [](int na, int no) {
            return [=](Tape& t) {
                const auto& g = t.at(no).grad;
                auto& ga = t.grad_buffer(na);
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            };
        });
}

Tensor clamp_min(const Tensor& a, double lo) {
    return unary_op(
        a, [lo](double x) { return x > lo ? x : lo; },
        [lo](int na, int no) {
            return [=](Tape& t) {
                const auto& g = t.at(no).grad;
                const auto& av = t.at(na).value;
                auto& ga = t.grad_buffer(na);
                for (size_t i = 0; i < g.size(); ++i)
                    if (av[i] > lo) ga[i] += g[i];
            };
        });
}

Tensor exp(const Tensor& a) {
    return unary_op(
        a, [](double x) { return std::exp(x); },
        [](int na, int no) {
            return [=](Tape& t) {
                const auto& g = t.at(no).grad;
                const auto& y = t.at(no).value;
                auto& ga = t.grad_buffer(na);
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
            };
        });
}

Tensor log(const Tensor& a) {
    return unary_op(
        a, [](double x) { return std::log(x); },
        [](int na, int no) {
            return [=](Tape& t) {
                const auto& g = t.at(no).grad;
                const auto& x = t.at(na).value;
                auto& ga = t.grad_buffer(na);
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / x[i];
            };
        });
}

Tensor tanh(const Tensor& a) {
    return unary_op(
        a, [](double x) { return std::tanh(x); },
        [](int na, int no) {
            return [=](Tape& t) {
                const auto& g = t.at(no).grad;
                const auto& y = t.at(no).value;
                auto& ga = t.grad_buffer(na);
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
            };
        });
}

Tensor sigmoid(const Tensor& a) {
    return unary_op(
        a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
        [](int na, int no) {
            return [=](Tape& t) {
                const auto& g = t.at(no).grad;
                const auto& y = t.at(no).value;
                auto& ga = t.grad_buffer(na);
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
            };
        });
}

// ---- matmul ------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.tape() != b.tape()) throw TensorError("matmul: tensors from different tapes");
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() < 2 || sb.size() < 2) shape_fail("matmul", sa, sb);
    const bool shared_rhs = sb.size() == 2;
    if (!shared_rhs) {
        if (sa.size() != sb.size()) shape_fail("matmul", sa, sb);
        for (size_t d = 0; d + 2 < sa.size(); ++d)
            if (sa[d] != sb[d]) shape_fail("matmul", sa, sb);
    }
    const int r = sa[sa.size() - 2], c = sa[sa.size() - 1];
    const int c2 = sb[sb.size() - 2], o = sb[sb.size() - 1];
    if (c != c2) shape_fail("matmul", sa, sb);
    int64_t batch = 1;
    for (size_t d = 0; d + 2 < sa.size(); ++d) batch *= sa[d];

    Shape out_shape(sa.begin(), sa.end() - 1);
    out_shape.push_back(o);
    std::vector<double> out(batch * r * o);
    const double* pa = a.values().data();
    const double* pb = b.values().data();
    for (int64_t i = 0; i < batch; ++i) {
        MapConstMat A(pa + i * r * c, r, c);
        MapConstMat B(shared_rhs ? pb : pb + i * c * o, c, o);
        MapMat Y(out.data() + i * r * o, r, o);
        Y.noalias() = A * B;
    }
    const bool rg = a.requires_grad() || b.requires_grad();
    Tensor outT = a.tape()->emplace(std::move(out_shape), std::move(out), rg, nullptr);
    if (rg) {
        const int na = a.node(), nb = b.node(), no = outT.node();
        a.tape()->at(no).backprop = [=](Tape& t) {
            const double* g = t.at(no).grad.data();
            const double* va = t.at(na).value.data();
            const double* vb = t.at(nb).value.data();
            if (t.at(na).requires_grad) {
                double* ga = t.grad_buffer(na).data();
                for (int64_t i = 0; i < batch; ++i) {
                    MapConstMat G(g + i * r * o, r, o);
                    MapConstMat B(shared_rhs ? vb : vb + i * c * o, c, o);
                    MapMat GA(ga + i * r * c, r, c);
                    GA.noalias() += G * B.transpose();
                }
            }
            if (t.at(nb).requires_grad) {
                double* gb = t.grad_buffer(nb).data();
                for (int64_t i = 0; i < batch; ++i) {
                    MapConstMat G(g + i * r * o, r, o);
                    MapConstMat A(va + i * r * c, r, c);
                    MapMat GB(shared_rhs ? gb : gb + i * c * o, c, o);
                    GB.noalias() += A.transpose() * G;
                }
            }
        };
    }
    return outT;
}

Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) shape_fail("transpose", a.shape());
    return permute(a, {1, 0});
}

Tensor permute(const Tensor& a, const std::vector<int>& axes) {
    const Shape& s = a.shape();
    const int r = a.rank();
    if (static_cast<int>(axes.size()) != r) shape_fail("permute", s);
    std::vector<bool> seen(r, false);
    for (int ax : axes) {
        if (ax < 0 || ax >= r || seen[ax]) shape_fail("permute", s);
        seen[ax] = true;
    }
    Shape out_shape(r);
    for (int d = 0; d < r; ++d) out_shape[d] = s[axes[d]];
    auto in_strides = row_major_strides(s);
    std::vector<int64_t> gather(r);  // stride in input per output axis
    for (int d = 0; d < r; ++d) gather[d] = in_strides[axes[d]];

    const auto av = a.values();
    std::vector<double> out(av.size());
    std::vector<int> idx(r, 0);
    int64_t src = 0;
    const int64_t n = static_cast<int64_t>(out.size());
    for (int64_t lin = 0;;) {
        out[lin] = av[src];
        if (++lin == n) break;
        for (int d = r - 1; d >= 0; --d) {
            src += gather[d];
            if (++idx[d] < out_shape[d]) break;
            src -= gather[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    Tensor o = a.tape()->emplace(std::move(out_shape), std::move(out), a.requires_grad(), nullptr);
    if (a.requires_grad()) {
        const int na = a.node(), no = o.node();
        const Shape oshape = o.shape();
        a.tape()->at(no).backprop = [=](Tape& t) {
            const auto& g = t.at(no).grad;
            auto& ga = t.grad_buffer(na);
            std::vector<int> ix(r, 0);
            int64_t srcoff = 0;
            for (int64_t lin = 0;;) {
                ga[srcoff] += g[lin];
                if (++lin == static_cast<int64_t>(g.size())) break;
                for (int d = r - 1; d >= 0; --d) {
                    srcoff += gather[d];
                    if (++ix[d] < oshape[d]) break;
                    srcoff -= gather[d] * oshape[d];
                    ix[d] = 0;
                }
            }
        };
    }
    return o;
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (numel(shape) != a.size()) shape_fail("reshape", a.shape(), shape);
    for (int d : shape)
        if (d <= 0) shape_fail("reshape", shape);
    std::vector<double> out(a.values().begin(), a.values().end());
    Tensor o = a.tape()->emplace(std::move(shape), std::move(out), a.requires_grad(), nullptr);
    if (a.requires_grad()) {
        const int na = a.node(), no = o.node();
        a.tape()->at(no).backprop = [=](Tape& t) {
            const auto& g = t.at(no).grad;
            auto& ga = t.grad_buffer(na);
            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        };
    }
    return o;
}

Tensor broadcast_to(const Tensor& a, const Shape& shape) {
    Bcast p = broadcast_plan("broadcast_to", a.shape(), shape);
    if (p.out != shape) shape_fail("broadcast_to", a.shape(), shape);
    const auto av = a.values();
    std::vector<double> out(numel(shape));
    for_each(p, [&](int64_t lin, int64_t oa, int64_t) { out[lin] = av[oa]; });
    Tensor o = a.tape()->emplace(shape, std::move(out), a.requires_grad(), nullptr);
    if (a.requires_grad()) {
        const int na = a.node(), no = o.node();
        a.tape()->at(no).backprop = [=, plan = std::move(p)](Tape& t) {
            const auto& g = t.at(no).grad;
            auto& ga = t.grad_buffer(na);
            for_each(plan, [&](int64_t lin, int64_t oa, int64_t) { ga[oa] += g[lin]; });
        };
    }
    return o;
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw TensorError("concat: no inputs");
    Tape& tape = *parts[0].tape();
    const Shape& s0 = parts[0].shape();
    if (axis < 0 || axis >= static_cast<int>(s0.size())) shape_fail("concat", s0);
    Shape out_shape = s0;
    int total = 0;
    bool rg = false;
    for (const Tensor& p : parts) {
        if (p.tape() != &tape) throw TensorError("concat: tensors from different tapes");
        const Shape& s = p.shape();
        if (s.size() != s0.size()) shape_fail("concat", s0, s);
        for (int d = 0; d < static_cast<int>(s.size()); ++d)
            if (d != axis && s[d] != s0[d]) shape_fail("concat", s0, s);
        total += s[axis];
        rg = rg || p.requires_grad();
    }
    out_shape[axis] = total;
    AxisSplit sp = split_axis("concat", out_shape, axis);
    std::vector<double> out(numel(out_shape));
    int64_t col = 0;
    for (const Tensor& p : parts) {
        const auto pv = p.values();
        const int64_t plen = p.shape()[axis];
        for (int64_t ou = 0; ou < sp.outer; ++ou)
            std::copy_n(pv.data() + ou * plen * sp.inner, plen * sp.inner,
                        out.data() + (ou * total + col) * sp.inner);
        col += plen;
    }
    Tensor o = tape.emplace(std::move(out_shape), std::move(out), rg, nullptr);
    if (rg) {
        std::vector<int> nodes;
        std::vector<int64_t> lens;
        for (const Tensor& p : parts) {
            nodes.push_back(p.node());
            lens.push_back(p.shape()[axis]);
        }
        const int no = o.node();
        tape.at(no).backprop = [=](Tape& t) {
            const auto& g = t.at(no).grad;
            int64_t c0 = 0;
            for (size_t pi = 0; pi < nodes.size(); ++pi) {
                if (t.at(nodes[pi]).requires_grad) {
                    auto& gp = t.grad_buffer(nodes[pi]);
                    for (int64_t ou = 0; ou < sp.outer; ++ou) {
                        const double* src = g.data() + (ou * total + c0) * sp.inner;
                        double* dst = gp.data() + ou * lens[pi] * sp.inner;
                        for (int64_t i = 0; i < lens[pi] * sp.inner; ++i) dst[i] += src[i];
                    }
                }
                c0 += lens[pi];
            }
        };
    }
    return o;
}

Tensor slice(const Tensor& a, int axis, int start, int len) {
    const Shape& s = a.shape();
    if (axis < 0 || axis >= static_cast<int>(s.size()) || start < 0 || len <= 0 || start + len > s[axis])
        throw TensorError("slice: bad range [" + std::to_string(start) + "," + std::to_string(start + len) +
                          ") on axis " + std::to_string(axis) + " of " + shape_str(s));
    AxisSplit sp = split_axis("slice", s, axis);
    Shape out_shape = s;
    out_shape[axis] = len;
    std::vector<double> out(numel(out_shape));
    const auto av = a.values();
    for (int64_t ou = 0; ou < sp.outer; ++ou)
        std::copy_n(av.data() + (ou * sp.len + start) * sp.inner, len * sp.inner,
                    out.data() + ou * len * sp.inner);
    Tensor o = a.tape()->emplace(std::move(out_shape), std::move(out), a.requires_grad(), nullptr);
    if (a.requires_grad()) {
        const int na = a.node(), no = o.node();
        a.tape()->at(no).backprop = [=](Tape& t) {
            const auto& g = t.at(no).grad;
            auto& ga = t.grad_buffer(na);
            for (int64_t ou = 0; ou < sp.outer; ++ou) {
                const double* src = g.data() + ou * len * sp.inner;
                double* dst = ga.data() + (ou * sp.len + start) * sp.inner;
                for (int64_t i = 0; i < len * sp.inner; ++i) dst[i] += src[i];
            }
        };
    }
    return o;
}

// ---- reductions ---------------------------------------------------------------

namespace {

Tensor reduce_axis(const char* op, const Tensor& a, int axis, double factor) {
    AxisSplit sp = split_axis(op, a.shape(), axis);
    Shape out_shape = drop_axis(a.shape(), axis);
    std::vector<double> out(numel(out_shape), 0.0);
    const auto av = a.values();
    for (int64_t ou = 0; ou < sp.outer; ++ou)
        for (int64_t l = 0; l < sp.len; ++l) {
            const double* src = av.data() + (ou * sp.len + l) * sp.inner;
            double* dst = out.data() + ou * sp.inner;
            for (int64_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
        }
    if (factor != 1.0)
        for (double& x : out) x *= factor;
    Tensor o = a.tape()->emplace(std::move(out_shape), std::move(out), a.requires_grad(), nullptr);
    if (a.requires_grad()) {
        const int na = a.node(), no = o.node();
        a.tape()->at(no).backprop = [=](Tape& t) {
            const auto& g = t.at(no).grad;
            auto& ga = t.grad_buffer(na);
            for (int64_t ou = 0; ou < sp.outer; ++ou)
                for (int64_t l = 0; l < sp.len; ++l) {
                    const double* src = g.data() + ou * sp.inner;
                    double* dst = ga.data() + (ou * sp.len + l) * sp.inner;
                    for (int64_t i = 0; i < sp.inner; ++i) dst[i] += factor * src[i];
                }
        };
    }
    return o;
}

}  // namespace

Tensor sum(const Tensor& a, int axis) { return reduce_axis("sum", a, axis, 1.0); }

Tensor mean(const Tensor& a, int axis) {
    AxisSplit sp = split_axis("mean", a.shape(), axis);
    return reduce_axis("mean", a, axis, 1.0 / static_cast<double>(sp.len));
}

Tensor sum_all(const Tensor& a) {
    Tensor flat = reshape(a, {static_cast<int>(a.size())});
    return sum(flat, 0);
}

Tensor mean_all(const Tensor& a) { return scale(sum_all(a), 1.0 / static_cast<double>(a.size())); }

Tensor min_along(const Tensor& a, int axis) {
    AxisSplit sp = split_axis("min_along", a.shape(), axis);
    Shape out_shape = drop_axis(a.shape(), axis);
    std::vector<double> out(numel(out_shape));
    std::vector<int64_t> argmin(out.size());
    const auto av = a.values();
    for (int64_t ou = 0; ou < sp.outer; ++ou)
        for (int64_t i = 0; i < sp.inner; ++i) {
            int64_t best = (ou * sp.len) * sp.inner + i;
            double bv = av[best];
            for (int64_t l = 1; l < sp.len; ++l) {
                const int64_t pos = (ou * sp.len + l) * sp.inner + i;
                if (av[pos] < bv) {  // strict: ties keep the lowest index
                    bv = av[pos];
                    best = pos;
                }
            }
            out[ou * sp.inner + i] = bv;
            argmin[ou * sp.inner + i] = best;
        }
    Tensor o = a.tape()->emplace(std::move(out_shape), std::move(out), a.requires_grad(), nullptr);
    if (a.requires_grad()) {
        const int na = a.node(), no = o.node();
        a.tape()->at(no).backprop = [=, arg = std::move(argmin)](Tape& t) {
            const auto& g = t.at(no).grad;
            auto& ga = t.grad_buffer(na);
            for (size_t i = 0; i < g.size(); ++i) ga[arg[i]] += g[i];
        };
    }
    return o;
}

Tensor softmax(const Tensor& a, int axis, double temperature) {
    if (temperature <= 0.0) throw TensorError("softmax: temperature must be positive");
    AxisSplit sp = split_axis("softmax", a.shape(), axis);
    const auto av = a.values();
    std::vector<double> out(av.size());
    const double inv_t = 1.0 / temperature;
    for (int64_t ou = 0; ou < sp.outer; ++ou)
        for (int64_t i = 0; i < sp.inner; ++i) {
            double mx = -std::numeric_limits<double>::infinity();
            for (int64_t l = 0; l < sp.len; ++l)
                mx = std::max(mx, av[(ou * sp.len + l) * sp.inner + i] * inv_t);
            double s = 0.0;
            for (int64_t l = 0; l < sp.len; ++l) {
                const int64_t pos = (ou * sp.len + l) * sp.inner + i;
                out[pos] = std::exp(av[pos] * inv_t - mx);
                s += out[pos];
            }
            const double inv_s = 1.0 / s;
            for (int64_t l = 0; l < sp.len; ++l) out[(ou * sp.len + l) * sp.inner + i] *= inv_s;
        }
    Tensor o = a.tape()->emplace(a.shape(), std::move(out), a.requires_grad(), nullptr);
    if (a.requires_grad()) {
        const int na = a.node(), no = o.node();
        a.tape()->at(no).backprop = [=](Tape& t) {
            const auto& g = t.at(no).grad;
            const auto& y = t.at(no).value;
            auto& ga = t.grad_buffer(na);
            for (int64_t ou = 0; ou < sp.outer; ++ou)
                for (int64_t i = 0; i < sp.inner; ++i) {
                    double dot = 0.0;
                    for (int64_t l = 0; l < sp.len; ++l) {
                        const int64_t pos = (ou * sp.len + l) * sp.inner + i;
                        dot += g[pos] * y[pos];
                    }
                    for (int64_t l = 0; l < sp.len; ++l) {
                        const int64_t pos = (ou * sp.len + l) * sp.inner + i;
                        ga[pos] += y[pos] * (g[pos] - dot) * inv_t;
                    }
                }
        };
    }
    return o;
}

Tensor masked_fill(const Tensor& a, const Tensor& mask, double fill) {
    if (a.tape() != mask.tape()) throw TensorError("masked_fill: tensors from different tapes");
    Bcast p = broadcast_plan("masked_fill", a.shape(), mask.shape());
    if (p.out != a.shape()) shape_fail("masked_fill", a.shape(), mask.shape());
    const auto av = a.values();
    const auto mv = mask.values();
    std::vector<double> out(av.size());
    for_each(p, [&](int64_t lin, int64_t oa, int64_t ob) { out[lin] = mv[ob] != 0.0 ? fill : av[oa]; });
    Tensor o = a.tape()->emplace(a.shape(), std::move(out), a.requires_grad(), nullptr);
    if (a.requires_grad()) {
        const int na = a.node(), no = o.node(), nm = mask.node();
        a.tape()->at(no).backprop = [=, plan = std::move(p)](Tape& t) {
            const auto& g = t.at(no).grad;
            const auto& mvv = t.at(nm).value;
            auto& ga = t.grad_buffer(na);
            for_each(plan, [&](int64_t lin, int64_t oa, int64_t ob) {
                if (mvv[ob] == 0.0) ga[oa] += g[lin];
            });
        };
    }
    return o;
}

std::vector<double> glorot_init(const Shape& shape, Rng& rng) {
    if (shape.empty()) shape_fail("glorot_init", shape);
    const double fan_in = static_cast<double>(shape.front());
    const double fan_out = static_cast<double>(shape.back());
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    return rng.uniform_vector(static_cast<size_t>(numel(shape)), -bound, bound);
}

}  // namespace ca
