#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mlehr/util/rng.hpp"

namespace mlehr::nn {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
struct Param {
    std::string name;
    Mat<T> value;
    Mat<T> grad;
    // Adam moments
    Mat<T> m, v;

    void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

// Contiguous row ranges; one per event (tokens) or per stay (events).
struct Segment {
    int start = 0;
    int length = 0;
};
using Segments = std::vector<Segment>;

// Slice of the logit row that belongs to one task.
struct HeadSlice {
    int offset = 0;
    int classes = 2;
};

using Var = int;

// Define-by-run tape over row-major matrices. Parameters are referenced, not
// copied; their gradients accumulate into Param::grad on backward().
template <class T>
class Graph {
   public:
    using M = Mat<T>;

    explicit Graph(bool training = false, util::Rng* rng = nullptr) : training_(training), rng_(rng) {}

    Var constant(M value);
    Var param(Param<T>& p);  // whole parameter as a node
    Var embed(Param<T>& table, const std::vector<std::int32_t>& rows);
    Var linear(Var x, Param<T>& w, Param<T>* b);
    Var add(Var a, Var b);
    Var layernorm(Var x, Param<T>& gamma, Param<T>& beta);
    Var gelu(Var x);
    Var dropout(Var x, double p);
    // x holds [q | k | v] per row, each d wide; attention stays inside segments.
    Var attention(Var qkv, const Segments& segments, int heads);
    Var segment_mean(Var x, const Segments& segments);
    // Empty segments give zero rows.
    Var segment_sum(Var x, const Segments& segments);
    Var gather(Var x, const std::vector<int>& rows);
    // Mean cross-entropy over (row, task) pairs with label != -1; a 1x1 node.
    // Zero (with zero gradient) when every label is masked.
    Var multitask_loss(Var logits, const std::vector<HeadSlice>& heads, const std::vector<std::vector<int>>& labels);

    void backward(Var scalar);
    const M& value(Var v) const { return nodes_[static_cast<size_t>(v)].value; }
    const M& grad(Var v) const { return nodes_[static_cast<size_t>(v)].grad; }
    bool training() const { return training_; }
    size_t size() const { return nodes_.size(); }

   private:
    struct Node {
        M value;
        M grad;
        std::function<void()> back;
    };
    Var push(M value, std::function<void()> back = {});
    M& g(Var v);  // gradient buffer, zero-initialised on first use

    std::vector<Node> nodes_;
    bool training_;
    util::Rng* rng_;
};

// Row-wise softmax of each head slice.
template <class T>
Mat<T> head_softmax(const Mat<T>& logits, const std::vector<HeadSlice>& heads);

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace mlehr::nn
