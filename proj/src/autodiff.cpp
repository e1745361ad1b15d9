#include "mldg/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace mldg {

std::size_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (numel(shape) != data.size())
        throw Error("tensor data length " + std::to_string(data.size()) + " does not match shape " +
                    shape_str(shape));
}

Tensor Tensor::zeros(Shape s) {
    const auto n = numel(s);
    return Tensor(std::move(s), std::vector<double>(n, 0.0));
}

double Tensor::item() const {
    if (data.size() != 1) throw Error("item() on tensor of shape " + shape_str(shape));
    return data[0];
}

const char* op_name(Op op) {
    switch (op) {
        case Op::Input: return "input";
        case Op::Constant: return "constant";
        case Op::Affine: return "affine";
        case Op::Tanh: return "tanh";
        case Op::Relu: return "relu";
        case Op::Step: return "step";
        case Op::Exp: return "exp";
        case Op::Log: return "log";
        case Op::Recip: return "recip";
        case Op::Sqrt: return "sqrt";
        case Op::Add: return "add";
        case Op::Sub: return "sub";
        case Op::Mul: return "mul";
        case Op::ScalarMul: return "scalar_mul";
        case Op::MatMul: return "matmul";
        case Op::Transpose: return "transpose";
        case Op::AddRowVec: return "add_row_vec";
        case Op::SumRows: return "sum_rows";
        case Op::BroadcastRows: return "broadcast_rows";
        case Op::SumCols: return "sum_cols";
        case Op::BroadcastCols: return "broadcast_cols";
        case Op::LogSoftmax: return "log_softmax";
        case Op::Sum: return "sum";
        case Op::Fill: return "fill";
        case Op::Slice: return "slice";
        case Op::Embed: return "embed";
        case Op::Gather: return "gather";
        case Op::ScatterCols: return "scatter_cols";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// Node construction

const Node& CompGraph::node(NodeRef n) const {
    if (n.id < 0 || static_cast<std::size_t>(n.id) >= nodes_.size())
        throw Error("node id " + std::to_string(n.id) + " does not belong to this graph");
    return nodes_[static_cast<std::size_t>(n.id)];
}

bool CompGraph::has_value(NodeRef n) const {
    node(n);
    return has_value_[static_cast<std::size_t>(n.id)];
}

const std::vector<double>& CompGraph::value(NodeRef n) const {
    if (!has_value(n))
        throw Error("node " + std::to_string(n.id) + " (" + op_name(node(n).op) +
                    ") has no value; bind its inputs and use eval()");
    return values_[static_cast<std::size_t>(n.id)];
}

Tensor CompGraph::tensor(NodeRef n) const { return Tensor(node(n).shape, value(n)); }

double CompGraph::item(NodeRef n) const {
    const auto& v = value(n);
    if (v.size() != 1) throw Error("item() on node of shape " + shape_str(node(n).shape));
    return v[0];
}

NodeRef CompGraph::push(Node n) {
    bool ready = n.op != Op::Input;
    for (int p : n.parents) ready = ready && has_value_[static_cast<std::size_t>(p)];
    std::vector<double> v;
    if (ready && n.op != Op::Constant) {
        std::vector<const std::vector<double>*> in;
        in.reserve(n.parents.size());
        for (int p : n.parents) in.push_back(&values_[static_cast<std::size_t>(p)]);
        v = compute(n, in);
    }
    nodes_.push_back(std::move(n));
    values_.push_back(std::move(v));
    has_value_.push_back(ready);
    return NodeRef{static_cast<int>(nodes_.size() - 1)};
}

NodeRef CompGraph::input(Tensor value) {
    Node n{Op::Input, value.shape, {}};
    nodes_.push_back(std::move(n));
    values_.push_back(std::move(value.data));
    has_value_.push_back(true);
    return NodeRef{static_cast<int>(nodes_.size() - 1)};
}

NodeRef CompGraph::placeholder(Shape shape) {
    nodes_.push_back(Node{Op::Input, std::move(shape), {}});
    values_.emplace_back();
    has_value_.push_back(false);
    return NodeRef{static_cast<int>(nodes_.size() - 1)};
}

NodeRef CompGraph::constant(Tensor value) {
    nodes_.push_back(Node{Op::Constant, value.shape, {}});
    values_.push_back(std::move(value.data));
    has_value_.push_back(true);
    return NodeRef{static_cast<int>(nodes_.size() - 1)};
}

namespace {

void require_same(const Shape& a, const Shape& b, const char* what) {
    if (a != b)
        throw Error(std::string(what) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

void require_rank(const Shape& a, std::size_t rank, const char* what) {
    if (a.size() != rank)
        throw Error(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                    shape_str(a));
}

}  // namespace

NodeRef CompGraph::affine(NodeRef x, double scale, double shift) {
    Node n{Op::Affine, shape(x), {x.id}};
    n.c1 = scale;
    n.c0 = shift;
    return push(std::move(n));
}

NodeRef CompGraph::tanh(NodeRef x) { return push(Node{Op::Tanh, shape(x), {x.id}}); }
NodeRef CompGraph::relu(NodeRef x) { return push(Node{Op::Relu, shape(x), {x.id}}); }
NodeRef CompGraph::step(NodeRef x) { return push(Node{Op::Step, shape(x), {x.id}}); }
NodeRef CompGraph::exp(NodeRef x) { return push(Node{Op::Exp, shape(x), {x.id}}); }
NodeRef CompGraph::log(NodeRef x) { return push(Node{Op::Log, shape(x), {x.id}}); }
NodeRef CompGraph::recip(NodeRef x) { return push(Node{Op::Recip, shape(x), {x.id}}); }
NodeRef CompGraph::sqrt(NodeRef x) { return push(Node{Op::Sqrt, shape(x), {x.id}}); }

NodeRef CompGraph::add(NodeRef a, NodeRef b) {
    require_same(shape(a), shape(b), "add");
    return push(Node{Op::Add, shape(a), {a.id, b.id}});
}

NodeRef CompGraph::sub(NodeRef a, NodeRef b) {
    require_same(shape(a), shape(b), "sub");
    return push(Node{Op::Sub, shape(a), {a.id, b.id}});
}

NodeRef CompGraph::mul(NodeRef a, NodeRef b) {
    require_same(shape(a), shape(b), "mul");
    return push(Node{Op::Mul, shape(a), {a.id, b.id}});
}

NodeRef CompGraph::scalar_mul(NodeRef s, NodeRef a) {
    if (numel(shape(s)) != 1 || !shape(s).empty()) throw Error("scalar_mul: first operand must be 0-d");
    return push(Node{Op::ScalarMul, shape(a), {s.id, a.id}});
}

NodeRef CompGraph::matmul(NodeRef a, NodeRef b) {
    const auto& sa = shape(a);
    const auto& sb = shape(b);
    require_rank(sa, 2, "matmul");
    require_rank(sb, 2, "matmul");
    if (sa[1] != sb[0])
        throw Error("matmul: inner dimensions differ " + shape_str(sa) + " x " + shape_str(sb));
    return push(Node{Op::MatMul, {sa[0], sb[1]}, {a.id, b.id}});
}

NodeRef CompGraph::transpose(NodeRef a) {
    const auto& s = shape(a);
    require_rank(s, 2, "transpose");
    return push(Node{Op::Transpose, {s[1], s[0]}, {a.id}});
}

NodeRef CompGraph::add_row_vec(NodeRef a, NodeRef b) {
    const auto& sa = shape(a);
    require_rank(sa, 2, "add_row_vec");
    require_same(shape(b), Shape{sa[1]}, "add_row_vec");
    return push(Node{Op::AddRowVec, sa, {a.id, b.id}});
}

NodeRef CompGraph::sum_rows(NodeRef a) {
    const auto& s = shape(a);
    require_rank(s, 2, "sum_rows");
    return push(Node{Op::SumRows, {s[1]}, {a.id}});
}

NodeRef CompGraph::broadcast_rows(NodeRef b, std::size_t rows) {
    const auto& s = shape(b);
    require_rank(s, 1, "broadcast_rows");
    return push(Node{Op::BroadcastRows, {rows, s[0]}, {b.id}});
}

NodeRef CompGraph::sum_cols(NodeRef a) {
    const auto& s = shape(a);
    require_rank(s, 2, "sum_cols");
    return push(Node{Op::SumCols, {s[0]}, {a.id}});
}

NodeRef CompGraph::broadcast_cols(NodeRef c, std::size_t cols) {
    const auto& s = shape(c);
    require_rank(s, 1, "broadcast_cols");
    return push(Node{Op::BroadcastCols, {s[0], cols}, {c.id}});
}

NodeRef CompGraph::log_softmax(NodeRef a) {
    require_rank(shape(a), 2, "log_softmax");
    return push(Node{Op::LogSoftmax, shape(a), {a.id}});
}

NodeRef CompGraph::sum(NodeRef a) { return push(Node{Op::Sum, {}, {a.id}}); }

NodeRef CompGraph::mean(NodeRef a) {
    const auto n = numel(shape(a));
    if (n == 0) throw Error("mean of empty tensor");
    return affine(sum(a), 1.0 / static_cast<double>(n));
}

NodeRef CompGraph::fill(NodeRef s, Shape shp) {
    if (!shape(s).empty()) throw Error("fill: source must be 0-d");
    return push(Node{Op::Fill, std::move(shp), {s.id}});
}

NodeRef CompGraph::slice(NodeRef a, std::size_t offset, Shape shp) {
    if (offset + numel(shp) > numel(shape(a)))
        throw Error("slice " + shape_str(shp) + " at offset " + std::to_string(offset) +
                    " exceeds source of " + std::to_string(numel(shape(a))) + " values");
    Node n{Op::Slice, std::move(shp), {a.id}};
    n.offset = offset;
    return push(std::move(n));
}

NodeRef CompGraph::embed(NodeRef a, std::size_t offset, Shape shp) {
    if (offset + numel(shape(a)) > numel(shp))
        throw Error("embed: window exceeds target " + shape_str(shp));
    Node n{Op::Embed, std::move(shp), {a.id}};
    n.offset = offset;
    return push(std::move(n));
}

NodeRef CompGraph::gather(NodeRef a, std::vector<std::size_t> index) {
    const auto& s = shape(a);
    require_rank(s, 2, "gather");
    if (index.size() != s[0])
        throw Error("gather: " + std::to_string(index.size()) + " indices for " +
                    std::to_string(s[0]) + " rows");
    for (auto i : index)
        if (i >= s[1]) throw Error("gather: column index " + std::to_string(i) + " out of range");
    Node n{Op::Gather, {s[0]}, {a.id}};
    n.index = std::make_shared<const std::vector<std::size_t>>(std::move(index));
    return push(std::move(n));
}

NodeRef CompGraph::scatter_cols(NodeRef v, std::shared_ptr<const std::vector<std::size_t>> index,
                                std::size_t cols) {
    const auto& s = shape(v);
    require_rank(s, 1, "scatter_cols");
    if (!index || index->size() != s[0]) throw Error("scatter_cols: index length mismatch");
    Node n{Op::ScatterCols, {s[0], cols}, {v.id}};
    n.index = std::move(index);
    return push(std::move(n));
}

// ---------------------------------------------------------------------------
// Forward kernels

std::vector<double> CompGraph::compute(const Node& n,
                                       std::span<const std::vector<double>* const> in) const {
    const auto out_size = numel(n.shape);
    std::vector<double> y(out_size, 0.0);
    auto unary = [&](auto f) {
        const auto& x = *in[0];
        for (std::size_t i = 0; i < out_size; ++i) y[i] = f(x[i]);
    };
    auto binary = [&](auto f) {
        const auto& a = *in[0];
        const auto& b = *in[1];
        for (std::size_t i = 0; i < out_size; ++i) y[i] = f(a[i], b[i]);
    };
    const auto pshape = [&](std::size_t k) -> const Shape& {
        return nodes_[static_cast<std::size_t>(n.parents[k])].shape;
    };

    switch (n.op) {
        case Op::Input:
        case Op::Constant: break;
        case Op::Affine: unary([&](double x) { return n.c1 * x + n.c0; }); break;
        case Op::Tanh: unary([](double x) { return std::tanh(x); }); break;
        case Op::Relu: unary([](double x) { return x > 0.0 ? x : 0.0; }); break;
        case Op::Step: unary([](double x) { return x > 0.0 ? 1.0 : 0.0; }); break;
        case Op::Exp: unary([](double x) { return std::exp(x); }); break;
        case Op::Log: unary([](double x) { return std::log(x); }); break;
        case Op::Recip: unary([](double x) { return 1.0 / x; }); break;
        case Op::Sqrt: unary([](double x) { return std::sqrt(x); }); break;
        case Op::Add: binary([](double a, double b) { return a + b; }); break;
        case Op::Sub: binary([](double a, double b) { return a - b; }); break;
        case Op::Mul: binary([](double a, double b) { return a * b; }); break;
        case Op::ScalarMul: {
            const double s = (*in[0])[0];
            const auto& a = *in[1];
            for (std::size_t i = 0; i < out_size; ++i) y[i] = s * a[i];
            break;
        }
        case Op::MatMul: {
            const auto& a = *in[0];
            const auto& b = *in[1];
            const auto m = pshape(0)[0], k = pshape(0)[1], cols = pshape(1)[1];
            for (std::size_t i = 0; i < m; ++i) {
                double* row = y.data() + i * cols;
                for (std::size_t p = 0; p < k; ++p) {
                    const double aip = a[i * k + p];
                    const double* brow = b.data() + p * cols;
                    for (std::size_t j = 0; j < cols; ++j) row[j] += aip * brow[j];
                }
            }
            break;
        }
        case Op::Transpose: {
            const auto& a = *in[0];
            const auto r = pshape(0)[0], c = pshape(0)[1];
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) y[j * r + i] = a[i * c + j];
            break;
        }
        case Op::AddRowVec: {
            const auto& a = *in[0];
            const auto& b = *in[1];
            const auto c = n.shape[1];
            for (std::size_t i = 0; i < out_size; ++i) y[i] = a[i] + b[i % c];
            break;
        }
        case Op::SumRows: {
            const auto& a = *in[0];
            const auto r = pshape(0)[0], c = pshape(0)[1];
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) y[j] += a[i * c + j];
            break;
        }
        case Op::BroadcastRows: {
            const auto& b = *in[0];
            const auto c = n.shape[1];
            for (std::size_t i = 0; i < out_size; ++i) y[i] = b[i % c];
            break;
        }
        case Op::SumCols: {
            const auto& a = *in[0];
            const auto r = pshape(0)[0], c = pshape(0)[1];
            for (std::size_t i = 0; i < r; ++i) {
                double acc = 0.0;
                for (std::size_t j = 0; j < c; ++j) acc += a[i * c + j];
                y[i] = acc;
            }
            break;
        }
        case Op::BroadcastCols: {
            const auto& v = *in[0];
            const auto c = n.shape[1];
            for (std::size_t i = 0; i < out_size; ++i) y[i] = v[i / c];
            break;
        }
        case Op::LogSoftmax: {
            const auto& a = *in[0];
            const auto r = n.shape[0], c = n.shape[1];
            for (std::size_t i = 0; i < r; ++i) {
                const double* row = a.data() + i * c;
                const double mx = *std::max_element(row, row + c);
                double z = 0.0;
                for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
                const double lse = mx + std::log(z);
                for (std::size_t j = 0; j < c; ++j) y[i * c + j] = row[j] - lse;
            }
            break;
        }
        case Op::Sum: {
            double acc = 0.0;
            for (double v : *in[0]) acc += v;
            y[0] = acc;
            break;
        }
        case Op::Fill: std::fill(y.begin(), y.end(), (*in[0])[0]); break;
        case Op::Slice: {
            const auto& a = *in[0];
            std::copy_n(a.begin() + static_cast<std::ptrdiff_t>(n.offset), out_size, y.begin());
            break;
        }
        case Op::Embed: {
            const auto& a = *in[0];
            std::copy(a.begin(), a.end(), y.begin() + static_cast<std::ptrdiff_t>(n.offset));
            break;
        }
        case Op::Gather: {
            const auto& a = *in[0];
            const auto c = pshape(0)[1];
            const auto& idx = *n.index;
            for (std::size_t i = 0; i < out_size; ++i) y[i] = a[i * c + idx[i]];
            break;
        }
        case Op::ScatterCols: {
            const auto& v = *in[0];
            const auto c = n.shape[1];
            const auto& idx = *n.index;
            for (std::size_t i = 0; i < v.size(); ++i) y[i * c + idx[i]] = v[i];
            break;
        }
    }
    return y;
}

std::vector<std::vector<double>> CompGraph::eval(const std::map<int, Tensor>& bindings) const {
    for (const auto& [id, t] : bindings) {
        const auto& n = node(NodeRef{id});
        if (n.op != Op::Input) throw Error("binding for non-input node " + std::to_string(id));
        if (t.shape != n.shape)
            throw Error("binding for node " + std::to_string(id) + ": shape mismatch " +
                        shape_str(t.shape) + " vs " + shape_str(n.shape));
    }
    std::vector<std::vector<double>> out(nodes_.size());
    std::vector<const std::vector<double>*> in;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        const auto& n = nodes_[i];
        if (n.op == Op::Input) {
            if (auto it = bindings.find(static_cast<int>(i)); it != bindings.end())
                out[i] = it->second.data;
            else if (has_value_[i])
                out[i] = values_[i];
            else
                throw Error("unbound input node " + std::to_string(i) + " of shape " +
                            shape_str(n.shape));
        } else if (n.op == Op::Constant) {
            out[i] = values_[i];
        } else {
            in.clear();
            for (int p : n.parents) in.push_back(&out[static_cast<std::size_t>(p)]);
            out[i] = compute(n, in);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reverse mode

namespace {

// Adjoint contributions of node `y` to each parent, built from graph ops so
// they stay differentiable. Entries for parents that need no gradient are
// left invalid.
void backward_rule(CompGraph& g, NodeRef y, NodeRef gy, const std::vector<bool>& needs,
                   std::vector<NodeRef>& out) {
    const Node n = g.node(y);  // copy: the node store grows below
    out.assign(n.parents.size(), NodeRef{});
    auto need = [&](std::size_t k) { return needs[static_cast<std::size_t>(n.parents[k])]; };
    auto par = [&](std::size_t k) { return NodeRef{n.parents[k]}; };

    switch (n.op) {
        case Op::Input:
        case Op::Constant:
        case Op::Step: break;
        case Op::Affine: out[0] = g.affine(gy, n.c1); break;
        case Op::Tanh: out[0] = g.mul(gy, g.affine(g.square(y), -1.0, 1.0)); break;
        case Op::Relu: out[0] = g.mul(gy, g.step(par(0))); break;
        case Op::Exp: out[0] = g.mul(gy, y); break;
        case Op::Log: out[0] = g.mul(gy, g.recip(par(0))); break;
        case Op::Recip: out[0] = g.mul(gy, g.affine(g.square(y), -1.0)); break;
        case Op::Sqrt: out[0] = g.mul(gy, g.affine(g.recip(y), 0.5)); break;
        case Op::Add:
            if (need(0)) out[0] = gy;
            if (need(1)) out[1] = gy;
            break;
        case Op::Sub:
            if (need(0)) out[0] = gy;
            if (need(1)) out[1] = g.affine(gy, -1.0);
            break;
        case Op::Mul:
            if (need(0)) out[0] = g.mul(gy, par(1));
            if (need(1)) out[1] = g.mul(gy, par(0));
            break;
        case Op::ScalarMul:
            if (need(0)) out[0] = g.dot(gy, par(1));
            if (need(1)) out[1] = g.scalar_mul(par(0), gy);
            break;
        case Op::MatMul:
            if (need(0)) out[0] = g.matmul(gy, g.transpose(par(1)));
            if (need(1)) out[1] = g.matmul(g.transpose(par(0)), gy);
            break;
        case Op::Transpose: out[0] = g.transpose(gy); break;
        case Op::AddRowVec:
            if (need(0)) out[0] = gy;
            if (need(1)) out[1] = g.sum_rows(gy);
            break;
        case Op::SumRows: out[0] = g.broadcast_rows(gy, g.shape(par(0))[0]); break;
        case Op::BroadcastRows: out[0] = g.sum_rows(gy); break;
        case Op::SumCols: out[0] = g.broadcast_cols(gy, g.shape(par(0))[1]); break;
        case Op::BroadcastCols: out[0] = g.sum_cols(gy); break;
        case Op::LogSoftmax: {
            const auto cols = n.shape[1];
            out[0] = g.sub(gy, g.mul(g.exp(y), g.broadcast_cols(g.sum_cols(gy), cols)));
            break;
        }
        case Op::Sum: out[0] = g.fill(gy, g.shape(par(0))); break;
        case Op::Fill: out[0] = g.sum(gy); break;
        case Op::Slice: out[0] = g.embed(gy, n.offset, g.shape(par(0))); break;
        case Op::Embed: out[0] = g.slice(gy, n.offset, g.shape(par(0))); break;
        case Op::Gather: out[0] = g.scatter_cols(gy, n.index, g.shape(par(0))[1]); break;
        case Op::ScatterCols: out[0] = g.gather(gy, *n.index); break;
    }
}

}  // namespace

std::vector<NodeRef> grad(CompGraph& g, NodeRef scalar, std::span<const NodeRef> wrt,
                          bool create_graph) {
    if (!g.shape(scalar).empty())
        throw Error("grad: output must be 0-dimensional, got " + shape_str(g.shape(scalar)));
    const auto top = static_cast<std::size_t>(scalar.id) + 1;

    // depends[i]: node i is a function of some wrt node.
    std::vector<bool> depends(top, false);
    std::size_t lo = top;
    for (auto w : wrt) {
        g.node(w);
        if (static_cast<std::size_t>(w.id) < top) {
            depends[static_cast<std::size_t>(w.id)] = true;
            lo = std::min(lo, static_cast<std::size_t>(w.id));
        }
    }
    for (std::size_t i = lo; i < top; ++i) {
        if (depends[i]) continue;
        for (int p : g.node(NodeRef{static_cast<int>(i)}).parents)
            if (depends[static_cast<std::size_t>(p)]) {
                depends[i] = true;
                break;
            }
    }

    // needs[i]: node i lies on a path from a wrt node to the output.
    std::vector<bool> needs(top, false);
    needs[top - 1] = depends[top - 1];
    for (std::size_t i = top; i-- > lo;) {
        if (!needs[i]) continue;
        for (int p : g.node(NodeRef{static_cast<int>(i)}).parents)
            if (depends[static_cast<std::size_t>(p)]) needs[static_cast<std::size_t>(p)] = true;
    }

    std::vector<NodeRef> adj(top);
    if (needs[top - 1]) adj[top - 1] = g.constant_scalar(1.0);
    std::vector<NodeRef> contrib;
    for (std::size_t i = top; i-- > lo;) {
        if (!needs[i] || !adj[i].valid()) continue;
        const NodeRef y{static_cast<int>(i)};
        backward_rule(g, y, adj[i], needs, contrib);
        const auto parents = g.node(y).parents;
        for (std::size_t k = 0; k < parents.size(); ++k) {
            const auto p = static_cast<std::size_t>(parents[k]);
            if (!needs[p] || !contrib[k].valid()) continue;
            adj[p] = adj[p].valid() ? g.add(adj[p], contrib[k]) : contrib[k];
        }
    }

    std::vector<NodeRef> result;
    result.reserve(wrt.size());
    for (auto w : wrt) {
        NodeRef r;
        if (static_cast<std::size_t>(w.id) < top) r = adj[static_cast<std::size_t>(w.id)];
        if (!r.valid()) {
            r = g.constant(Tensor::zeros(g.shape(w)));
        } else if (!create_graph && g.has_value(r)) {
            r = g.constant(g.tensor(r));
        }
        result.push_back(r);
    }
    return result;
}

NodeRef grad(CompGraph& g, NodeRef scalar, NodeRef wrt, bool create_graph) {
    return grad(g, scalar, std::span<const NodeRef>(&wrt, 1), create_graph)[0];
}

std::vector<double> hvp(CompGraph& g, NodeRef loss, NodeRef params, std::span<const double> v) {
    const auto n = numel(g.shape(params));
    if (v.size() != n)
        throw Error("hvp: vector of length " + std::to_string(v.size()) + " for " +
                    std::to_string(n) + " parameters");
    const auto gl = grad(g, loss, params, true);
    const auto vnode = g.constant(Tensor(g.shape(params), {v.begin(), v.end()}));
    const auto hv = grad(g, g.dot(gl, vnode), params, false);
    return g.value(hv);
}

// ---------------------------------------------------------------------------

void ParameterVector::add(std::string name, Shape shape, std::span<const double> values) {
    if (values.size() != numel(shape))
        throw Error("parameter '" + name + "': " + std::to_string(values.size()) +
                    " values for shape " + shape_str(shape));
    for (const auto& e : manifest_)
        if (e.name == name) throw Error("duplicate parameter name '" + name + "'");
    manifest_.push_back(Entry{std::move(name), std::move(shape), data_.size()});
    data_.insert(data_.end(), values.begin(), values.end());
}

void ParameterVector::add_zeros(std::string name, Shape shape) {
    std::vector<double> z(numel(shape), 0.0);
    add(std::move(name), std::move(shape), z);
}

const ParameterVector::Entry& ParameterVector::entry(const std::string& name) const {
    for (const auto& e : manifest_)
        if (e.name == name) return e;
    throw Error("no parameter named '" + name + "'");
}

ParameterVector ParameterVector::with_data(std::vector<double> values) const {
    if (values.size() != data_.size())
        throw Error("with_data: " + std::to_string(values.size()) + " values for " +
                    std::to_string(data_.size()) + " parameters");
    ParameterVector out = *this;
    out.data_ = std::move(values);
    return out;
}

}  // namespace mldg
