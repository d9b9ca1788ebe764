#include "mlehr/nn/graph.hpp"

#include <cmath>

#include "mlehr/error.hpp"

namespace mlehr::nn {

template <class T>
Var Graph<T>::push(M value, std::function<void()> back) {
    nodes_.push_back(Node{std::move(value), M(), std::move(back)});
    return static_cast<Var>(nodes_.size() - 1);
}

template <class T>
typename Graph<T>::M& Graph<T>::g(Var v) {
    auto& n = nodes_[static_cast<size_t>(v)];
    if (n.grad.size() == 0) n.grad.setZero(n.value.rows(), n.value.cols());
    return n.grad;
}

template <class T>
Var Graph<T>::constant(M value) {
    return push(std::move(value));
}

template <class T>
Var Graph<T>::param(Param<T>& p) {
    Var out = push(p.value);
    nodes_.back().back = [this, out, &p] {
        if (p.grad.size() == 0) p.zero_grad();
        p.grad += nodes_[static_cast<size_t>(out)].grad;
    };
    return out;
}

template <class T>
Var Graph<T>::embed(Param<T>& table, const std::vector<std::int32_t>& rows) {
    M out(static_cast<Eigen::Index>(rows.size()), table.value.cols());
    for (size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] < 0 || rows[i] >= table.value.rows()) fail("UnknownToken", table.name + " row " + std::to_string(rows[i]));
        out.row(static_cast<Eigen::Index>(i)) = table.value.row(rows[i]);
    }
    Var o = push(std::move(out));
    nodes_.back().back = [this, o, &table, rows] {
        if (table.grad.size() == 0) table.zero_grad();
        const auto& gr = nodes_[static_cast<size_t>(o)].grad;
        for (size_t i = 0; i < rows.size(); ++i) table.grad.row(rows[i]) += gr.row(static_cast<Eigen::Index>(i));
    };
    return o;
}

template <class T>
Var Graph<T>::linear(Var x, Param<T>& w, Param<T>* b) {
    M out = value(x) * w.value;
    if (b) out.rowwise() += b->value.row(0);
    Var o = push(std::move(out));
    nodes_.back().back = [this, o, x, &w, b] {
        const auto& gr = nodes_[static_cast<size_t>(o)].grad;
        if (w.grad.size() == 0) w.zero_grad();
        w.grad.noalias() += value(x).transpose() * gr;
        if (b) {
            if (b->grad.size() == 0) b->zero_grad();
            b->grad.row(0) += gr.colwise().sum();
        }
        g(x).noalias() += gr * w.value.transpose();
    };
    return o;
}

template <class T>
Var Graph<T>::add(Var a, Var b) {
    if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols()) fail("ShapeMismatch", "add");
    Var o = push(value(a) + value(b));
    nodes_.back().back = [this, o, a, b] {
        const auto& gr = nodes_[static_cast<size_t>(o)].grad;
        g(a) += gr;
        g(b) += gr;
    };
    return o;
}

template <class T>
Var Graph<T>::layernorm(Var x, Param<T>& gamma, Param<T>& beta) {
    const M& xv = value(x);
    const auto n = xv.rows(), d = xv.cols();
    const T eps = static_cast<T>(1e-5);
    M xhat(n, d);
    Eigen::Matrix<T, Eigen::Dynamic, 1> inv_std(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        T mu = xv.row(i).mean();
        T var = (xv.row(i).array() - mu).square().mean();
        inv_std(i) = T(1) / std::sqrt(var + eps);
        xhat.row(i) = (xv.row(i).array() - mu) * inv_std(i);
    }
    M out = (xhat.array().rowwise() * gamma.value.row(0).array()).rowwise() + beta.value.row(0).array();
    Var o = push(std::move(out));
    nodes_.back().back = [this, o, x, &gamma, &beta, xhat = std::move(xhat), inv_std = std::move(inv_std)] {
        const auto& gr = nodes_[static_cast<size_t>(o)].grad;
        if (gamma.grad.size() == 0) gamma.zero_grad();
        if (beta.grad.size() == 0) beta.zero_grad();
        gamma.grad.row(0) += (gr.array() * xhat.array()).matrix().colwise().sum();
        beta.grad.row(0) += gr.colwise().sum();
        M dxhat = gr.array().rowwise() * gamma.value.row(0).array();
        auto& gx = g(x);
        const T dd = static_cast<T>(xhat.cols());
        for (Eigen::Index i = 0; i < xhat.rows(); ++i) {
            T m1 = dxhat.row(i).sum() / dd;
            T m2 = (dxhat.row(i).array() * xhat.row(i).array()).sum() / dd;
            gx.row(i).array() += inv_std(i) * (dxhat.row(i).array() - m1 - xhat.row(i).array() * m2);
        }
    };
    return o;
}

template <class T>
Var Graph<T>::gelu(Var x) {
    const T c = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
    const T k = static_cast<T>(0.044715);
    const M& xv = value(x);
    M th = (c * (xv.array() + k * xv.array().cube())).tanh().matrix();
    M out = (T(0.5) * xv.array() * (T(1) + th.array())).matrix();
    Var o = push(std::move(out));
    nodes_.back().back = [this, o, x, th = std::move(th), c, k] {
        const auto& gr = nodes_[static_cast<size_t>(o)].grad;
        const auto& xv = value(x);
        auto dth = (T(1) - th.array().square()) * c * (T(1) + T(3) * k * xv.array().square());
        g(x).array() += gr.array() * (T(0.5) * (T(1) + th.array()) + T(0.5) * xv.array() * dth);
    };
    return o;
}

template <class T>
Var Graph<T>::dropout(Var x, double p) {
    if (!training_ || p <= 0.0) return x;
    if (!rng_) fail("InvalidConfig", "dropout in training mode needs an rng");
    const M& xv = value(x);
    M mask(xv.rows(), xv.cols());
    const T scale = static_cast<T>(1.0 / (1.0 - p));
    // Two 32-bit draws per 64-bit output.
    const auto threshold = static_cast<std::uint64_t>(p * 4294967296.0);
    std::uint64_t bits = 0;
    for (Eigen::Index i = 0; i < mask.size(); ++i) {
        if (i % 2 == 0) bits = rng_->next();
        else bits >>= 32;
        mask.data()[i] = (bits & 0xffffffffULL) < threshold ? T(0) : scale;
    }
    Var o = push((xv.array() * mask.array()).matrix());
    nodes_.back().back = [this, o, x, mask = std::move(mask)] {
        g(x).array() += nodes_[static_cast<size_t>(o)].grad.array() * mask.array();
    };
    return o;
}

template <class T>
Var Graph<T>::attention(Var qkv, const Segments& segments, int heads) {
    using Strided = Eigen::Map<const M, 0, Eigen::OuterStride<>>;
    using StridedMut = Eigen::Map<M, 0, Eigen::OuterStride<>>;
    const M& in = value(qkv);
    if (in.cols() % 3 != 0) fail("ShapeMismatch", "attention input width must be 3*d");
    const int d = static_cast<int>(in.cols() / 3);
    if (heads <= 0 || d % heads != 0) fail("ShapeMismatch", "heads must divide d");
    const int dh = d / heads;
    const Eigen::Index W = in.cols();
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    M out(in.rows(), d);
    // Softmax probabilities per (segment, head), stored back to back.
    std::vector<T> probs;
    size_t total = 0;
    for (const auto& s : segments) total += static_cast<size_t>(s.length) * static_cast<size_t>(s.length) * static_cast<size_t>(heads);
    probs.resize(total);
    size_t off = 0;
    for (const auto& s : segments) {
        const int L = s.length;
        const T* base = in.data() + static_cast<Eigen::Index>(s.start) * W;
        for (int h = 0; h < heads; ++h) {
            Strided q(base + h * dh, L, dh, Eigen::OuterStride<>(W));
            Strided k(base + d + h * dh, L, dh, Eigen::OuterStride<>(W));
            Strided v(base + 2 * d + h * dh, L, dh, Eigen::OuterStride<>(W));
            Eigen::Map<M> p(probs.data() + off, L, L);
            p.noalias() = (q * k.transpose()) * scale;
            for (int i = 0; i < L; ++i) {
                auto row = p.row(i);
                row = (row.array() - row.maxCoeff()).exp();
                row /= row.sum();
            }
            StridedMut o(out.data() + static_cast<Eigen::Index>(s.start) * d + h * dh, L, dh, Eigen::OuterStride<>(d));
            o.noalias() = p * v;
            off += static_cast<size_t>(L) * static_cast<size_t>(L);
        }
    }
    Var o = push(std::move(out));
    nodes_.back().back = [this, o, qkv, segments, heads, d, dh, scale, probs = std::move(probs)] {
        const M& in = value(qkv);
        const M& go = nodes_[static_cast<size_t>(o)].grad;
        M& gi = g(qkv);
        const Eigen::Index W = in.cols();
        M dp, ds;
        size_t off = 0;
        for (const auto& s : segments) {
            const int L = s.length;
            const T* base = in.data() + static_cast<Eigen::Index>(s.start) * W;
            T* gbase = gi.data() + static_cast<Eigen::Index>(s.start) * W;
            for (int h = 0; h < heads; ++h) {
                Strided q(base + h * dh, L, dh, Eigen::OuterStride<>(W));
                Strided k(base + d + h * dh, L, dh, Eigen::OuterStride<>(W));
                Strided v(base + 2 * d + h * dh, L, dh, Eigen::OuterStride<>(W));
                StridedMut gq(gbase + h * dh, L, dh, Eigen::OuterStride<>(W));
                StridedMut gk(gbase + d + h * dh, L, dh, Eigen::OuterStride<>(W));
                StridedMut gv(gbase + 2 * d + h * dh, L, dh, Eigen::OuterStride<>(W));
                Strided gout(go.data() + static_cast<Eigen::Index>(s.start) * d + h * dh, L, dh, Eigen::OuterStride<>(d));
                Eigen::Map<const M> p(probs.data() + off, L, L);
                gv.noalias() += p.transpose() * gout;
                dp.noalias() = gout * v.transpose();
                auto dots = (dp.array() * p.array()).rowwise().sum();
                ds = (p.array() * (dp.array().colwise() - dots)) * scale;
                gq.noalias() += ds * k;
                gk.noalias() += ds.transpose() * q;
                off += static_cast<size_t>(L) * static_cast<size_t>(L);
            }
        }
    };
    return o;
}

template <class T>
Var Graph<T>::segment_mean(Var x, const Segments& segments) {
    const M& xv = value(x);
    M out(static_cast<Eigen::Index>(segments.size()), xv.cols());
    for (size_t s = 0; s < segments.size(); ++s) {
        if (segments[s].length <= 0) fail("EmptyInput", "empty segment in mean pooling");
        out.row(static_cast<Eigen::Index>(s)) =
            xv.middleRows(segments[s].start, segments[s].length).colwise().sum() / static_cast<T>(segments[s].length);
    }
    Var o = push(std::move(out));
    nodes_.back().back = [this, o, x, segments] {
        const auto& gr = nodes_[static_cast<size_t>(o)].grad;
        auto& gx = g(x);
        for (size_t s = 0; s < segments.size(); ++s) {
            auto row = gr.row(static_cast<Eigen::Index>(s)) / static_cast<T>(segments[s].length);
            for (int i = 0; i < segments[s].length; ++i) gx.row(segments[s].start + i) += row;
        }
    };
    return o;
}

template <class T>
Var Graph<T>::segment_sum(Var x, const Segments& segments) {
    const M& xv = value(x);
    M out = M::Zero(static_cast<Eigen::Index>(segments.size()), xv.cols());
    for (size_t s = 0; s < segments.size(); ++s)
        if (segments[s].length > 0)
            out.row(static_cast<Eigen::Index>(s)) = xv.middleRows(segments[s].start, segments[s].length).colwise().sum();
    Var o = push(std::move(out));
    nodes_.back().back = [this, o, x, segments] {
        const auto& gr = nodes_[static_cast<size_t>(o)].grad;
        auto& gx = g(x);
        for (size_t s = 0; s < segments.size(); ++s)
            for (int i = 0; i < segments[s].length; ++i) gx.row(segments[s].start + i) += gr.row(static_cast<Eigen::Index>(s));
    };
    return o;
}

template <class T>
Var Graph<T>::gather(Var x, const std::vector<int>& rows) {
    const M& xv = value(x);
    M out(static_cast<Eigen::Index>(rows.size()), xv.cols());
    for (size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = xv.row(rows[i]);
    Var o = push(std::move(out));
    nodes_.back().back = [this, o, x, rows] {
        const auto& gr = nodes_[static_cast<size_t>(o)].grad;
        auto& gx = g(x);
        for (size_t i = 0; i < rows.size(); ++i) gx.row(rows[i]) += gr.row(static_cast<Eigen::Index>(i));
    };
    return o;
}

template <class T>
Mat<T> head_softmax(const Mat<T>& logits, const std::vector<HeadSlice>& heads) {
    Mat<T> p(logits.rows(), logits.cols());
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        for (const auto& h : heads) {
            auto seg = logits.row(r).segment(h.offset, h.classes);
            T mx = seg.maxCoeff();
            auto e = (seg.array() - mx).exp();
            p.row(r).segment(h.offset, h.classes) = e / e.sum();
        }
    }
    return p;
}

template <class T>
Var Graph<T>::multitask_loss(Var logits, const std::vector<HeadSlice>& heads, const std::vector<std::vector<int>>& labels) {
    const M& lv = value(logits);
    if (static_cast<size_t>(lv.rows()) != labels.size()) fail("ShapeMismatch", "labels rows");
    M p = head_softmax(lv, heads);
    T loss = 0;
    size_t count = 0;
    for (size_t r = 0; r < labels.size(); ++r) {
        if (labels[r].size() != heads.size()) fail("ShapeMismatch", "labels per row");
        for (size_t k = 0; k < heads.size(); ++k) {
            int y = labels[r][k];
            if (y < 0) continue;
            if (y >= heads[k].classes) fail("InvalidLabel", "label " + std::to_string(y) + " out of range");
            loss -= std::log(std::max(p(static_cast<Eigen::Index>(r), heads[k].offset + y), std::numeric_limits<T>::min()));
            ++count;
        }
    }
    M out(1, 1);
    out(0, 0) = count ? loss / static_cast<T>(count) : T(0);
    Var o = push(std::move(out));
    nodes_.back().back = [this, o, logits, heads, labels, p = std::move(p), count] {
        if (!count) return;
        const T scale = nodes_[static_cast<size_t>(o)].grad(0, 0) / static_cast<T>(count);
        auto& gl = g(logits);
        for (size_t r = 0; r < labels.size(); ++r) {
            for (size_t k = 0; k < heads.size(); ++k) {
                int y = labels[r][k];
                if (y < 0) continue;
                const auto row = static_cast<Eigen::Index>(r);
                for (int c = 0; c < heads[k].classes; ++c) {
                    T target = c == y ? T(1) : T(0);
                    gl(row, heads[k].offset + c) += scale * (p(row, heads[k].offset + c) - target);
                }
            }
        }
    };
    return o;
}

template <class T>
void Graph<T>::backward(Var scalar) {
    auto& n = nodes_[static_cast<size_t>(scalar)];
    if (n.value.size() != 1) fail("ShapeMismatch", "backward needs a scalar node");
    g(scalar).setConstant(T(1));
    for (size_t i = static_cast<size_t>(scalar) + 1; i-- > 0;) {
        auto& node = nodes_[i];
        if (node.back && node.grad.size() != 0) node.back();
    }
}

template class Graph<float>;
template class Graph<double>;
template Mat<float> head_softmax(const Mat<float>&, const std::vector<HeadSlice>&);
template Mat<double> head_softmax(const Mat<double>&, const std::vector<HeadSlice>&);

}  // namespace mlehr::nn
