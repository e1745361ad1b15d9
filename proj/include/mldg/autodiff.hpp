#pragma once

// Reverse-mode automatic differentiation over a dynamically built graph.
//
// Every backward rule is itself expressed as graph operations, so the
// gradient nodes returned by grad() with create_graph set can be
// differentiated again (Hessian-vector products, gradients of gradient
// norms, and so on). Values are computed eagerly whenever all parents of a
// node carry a value; graphs built on unbound placeholders are evaluated
// later through CompGraph::eval().

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mldg {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major buffer with a shape.
struct Tensor {
    Shape shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(Shape s, std::vector<double> d);
    static Tensor zeros(Shape s);
    static Tensor scalar(double v) { return Tensor({}, {v}); }

    std::size_t size() const { return data.size(); }
    double item() const;
    double& operator()(std::size_t r, std::size_t c) { return data[r * shape[1] + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * shape[1] + c]; }
};

enum class Op : std::uint8_t {
    Input,
    Constant,
    Affine,      // c1 * x + c0
    Tanh,
    Relu,
    Step,        // 1[x > 0], carries no gradient
    Exp,
    Log,
    Recip,
    Sqrt,
    Add,
    Sub,
    Mul,
    ScalarMul,   // s[] * a
    MatMul,
    Transpose,
    AddRowVec,   // A[m,n] + b[n]
    SumRows,     // A[m,n] -> [n]
    BroadcastRows,
    SumCols,     // A[m,n] -> [m]
    BroadcastCols,
    LogSoftmax,  // row-wise
    Sum,         // all -> []
    Fill,        // s[] -> shape
    Slice,       // flat window reshaped
    Embed,       // adjoint of Slice
    Gather,      // A[m,n], idx[m] -> [m]
    ScatterCols, // adjoint of Gather
};

const char* op_name(Op op);

class CompGraph;

/// Handle to a node in a CompGraph. Cheap to copy; only valid for the graph
/// that created it.
struct NodeRef {
    int id = -1;
    bool valid() const { return id >= 0; }
    friend bool operator==(NodeRef a, NodeRef b) { return a.id == b.id; }
};

struct Node {
    Node(Op o, Shape s, std::vector<int> p) : op(o), shape(std::move(s)), parents(std::move(p)) {}

    Op op;
    Shape shape;
    std::vector<int> parents;
    double c0 = 0.0;
    double c1 = 0.0;
    std::size_t offset = 0;
    std::shared_ptr<const std::vector<std::size_t>> index;
};

/// Append-only computation record. Node i only ever reads nodes j < i.
class CompGraph {
public:
    NodeRef input(Tensor value);
    NodeRef placeholder(Shape shape);
    NodeRef constant(Tensor value);
    NodeRef constant_scalar(double v) { return constant(Tensor::scalar(v)); }

    NodeRef affine(NodeRef x, double scale, double shift = 0.0);
    NodeRef tanh(NodeRef x);
    NodeRef relu(NodeRef x);
    NodeRef step(NodeRef x);
    NodeRef exp(NodeRef x);
    NodeRef log(NodeRef x);
    NodeRef recip(NodeRef x);
    NodeRef sqrt(NodeRef x);
    NodeRef add(NodeRef a, NodeRef b);
    NodeRef sub(NodeRef a, NodeRef b);
    NodeRef mul(NodeRef a, NodeRef b);
    NodeRef scalar_mul(NodeRef s, NodeRef a);
    NodeRef matmul(NodeRef a, NodeRef b);
    NodeRef transpose(NodeRef a);
    NodeRef add_row_vec(NodeRef a, NodeRef b);
    NodeRef sum_rows(NodeRef a);
    NodeRef broadcast_rows(NodeRef b, std::size_t rows);
    NodeRef sum_cols(NodeRef a);
    NodeRef broadcast_cols(NodeRef c, std::size_t cols);
    NodeRef log_softmax(NodeRef a);
    NodeRef sum(NodeRef a);
    NodeRef fill(NodeRef s, Shape shape);
    NodeRef slice(NodeRef a, std::size_t offset, Shape shape);
    NodeRef embed(NodeRef a, std::size_t offset, Shape shape);
    NodeRef gather(NodeRef a, std::vector<std::size_t> index);
    NodeRef scatter_cols(NodeRef v, std::shared_ptr<const std::vector<std::size_t>> index,
                         std::size_t cols);

    // Composites.
    NodeRef dot(NodeRef a, NodeRef b) { return sum(mul(a, b)); }
    NodeRef mean(NodeRef a);
    NodeRef square(NodeRef a) { return mul(a, a); }

    std::size_t size() const { return nodes_.size(); }
    const Node& node(NodeRef n) const;
    const Shape& shape(NodeRef n) const { return node(n).shape; }
    bool has_value(NodeRef n) const;
    const std::vector<double>& value(NodeRef n) const;
    Tensor tensor(NodeRef n) const;
    double item(NodeRef n) const;

    /// Re-evaluates every node in creation order. Bindings override input
    /// values; a placeholder without a binding is an error. The graph's own
    /// eager values are untouched.
    std::vector<std::vector<double>> eval(const std::map<int, Tensor>& bindings) const;

private:
    NodeRef push(Node n);
    std::vector<double> compute(const Node& n, std::span<const std::vector<double>* const> in) const;

    std::vector<Node> nodes_;
    std::vector<std::vector<double>> values_;
    std::vector<bool> has_value_;
};

/// d(scalar)/d(wrt[i]) as graph nodes. A wrt node the scalar does not depend
/// on gets an explicit zero gradient. With create_graph unset the returned
/// nodes are detached constants.
std::vector<NodeRef> grad(CompGraph& g, NodeRef scalar, std::span<const NodeRef> wrt,
                          bool create_graph = false);
NodeRef grad(CompGraph& g, NodeRef scalar, NodeRef wrt, bool create_graph = false);

/// Hessian of loss at params applied to v, without forming the Hessian.
std::vector<double> hvp(CompGraph& g, NodeRef loss, NodeRef params, std::span<const double> v);

/// Flat model weights plus the manifest describing how they are laid out.
class ParameterVector {
public:
    struct Entry {
        std::string name;
        Shape shape;
        std::size_t offset;
        friend bool operator==(const Entry&, const Entry&) = default;
    };

    ParameterVector() = default;
    void add(std::string name, Shape shape, std::span<const double> values);
    void add_zeros(std::string name, Shape shape);

    const std::vector<double>& data() const { return data_; }
    std::vector<double>& data() { return data_; }
    const std::vector<Entry>& manifest() const { return manifest_; }
    const Entry& entry(const std::string& name) const;
    std::size_t size() const { return data_.size(); }

    /// Copy with replaced values; the manifest is shared.
    ParameterVector with_data(std::vector<double> values) const;

    friend bool operator==(const ParameterVector&, const ParameterVector&) = default;

private:
    std::vector<double> data_;
    std::vector<Entry> manifest_;
};

}  // namespace mldg
