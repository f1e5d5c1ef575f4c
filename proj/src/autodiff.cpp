#include "leak/autodiff.hpp"

#include "leak/kernels.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>

namespace leak::autodiff {

namespace {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument(std::string(op) + ": shapes differ: " + shape_string(a) +
                                    " vs " + shape_string(b));
    }
}

void require_finite(const char* op, const Tensor& t) {
    if (!t.all_finite()) {
        throw std::runtime_error(std::string(op) + ": result contains NaN or Inf");
    }
}

// acc += g, elementwise over identical element counts.
void accumulate(Tensor& acc, const Tensor& g) {
    double* a = acc.data();
    const double* b = g.data();
    for (std::size_t i = 0; i < acc.numel(); ++i) a[i] += b[i];
}

NodePtr make_op(const char* op, Tensor value, std::vector<NodePtr> parents, BackwardFn fn) {
    require_finite(op, value);
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->parents = std::move(parents);
    n->op = op;
    for (const NodePtr& p : n->parents) {
        if (p->requires_grad) {
            n->requires_grad = true;
            break;
        }
    }
    if (n->requires_grad) n->backprop = std::move(fn);
    return n;
}

} // namespace

Tensor& GradStore::slot(const Node* node, const std::vector<std::size_t>& shape) {
    auto it = grads_.find(node);
    if (it == grads_.end()) it = grads_.emplace(node, Tensor(shape)).first;
    return it->second;
}

const Tensor* GradStore::find(const Node* node) const {
    auto it = grads_.find(node);
    return it == grads_.end() ? nullptr : &it->second;
}

NodePtr leaf(Tensor value) {
    require_finite("leaf", value);
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->op = "leaf";
    n->requires_grad = true;
    return n;
}

NodePtr constant(Tensor value) {
    require_finite("constant", value);
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->op = "constant";
    n->requires_grad = false;
    return n;
}

NodePtr add(const NodePtr& a, const NodePtr& b) {
    require_same_shape("add", a->value, b->value);
    Tensor out = a->value;
    accumulate(out, b->value);
    return make_op("add", std::move(out), {a, b}, [a, b](const Tensor& g, GradStore& gs) {
        if (a->requires_grad) accumulate(gs.slot(a.get(), a->value.shape()), g);
        if (b->requires_grad) accumulate(gs.slot(b.get(), b->value.shape()), g);
    });
}

NodePtr sub(const NodePtr& a, const NodePtr& b) {
    require_same_shape("sub", a->value, b->value);
    Tensor out = a->value;
    {
        double* o = out.data();
        const double* q = b->value.data();
        for (std::size_t i = 0; i < out.numel(); ++i) o[i] -= q[i];
    }
    return make_op("sub", std::move(out), {a, b}, [a, b](const Tensor& g, GradStore& gs) {
        if (a->requires_grad) accumulate(gs.slot(a.get(), a->value.shape()), g);
        if (b->requires_grad) {
            Tensor& slot = gs.slot(b.get(), b->value.shape());
            double* s = slot.data();
            const double* gg = g.data();
            for (std::size_t i = 0; i < slot.numel(); ++i) s[i] -= gg[i];
        }
    });
}

NodePtr mul(const NodePtr& a, const NodePtr& b) {
    require_same_shape("mul", a->value, b->value);
    Tensor out = a->value;
    {
        double* o = out.data();
        const double* q = b->value.data();
        for (std::size_t i = 0; i < out.numel(); ++i) o[i] *= q[i];
    }
    return make_op("mul", std::move(out), {a, b}, [a, b](const Tensor& g, GradStore& gs) {
        const double* gg = g.data();
        if (a->requires_grad) {
            Tensor& slot = gs.slot(a.get(), a->value.shape());
            double* s = slot.data();
            const double* bv = b->value.data();
            for (std::size_t i = 0; i < slot.numel(); ++i) s[i] += gg[i] * bv[i];
        }
        if (b->requires_grad) {
            Tensor& slot = gs.slot(b.get(), b->value.shape());
            double* s = slot.data();
            const double* av = a->value.data();
            for (std::size_t i = 0; i < slot.numel(); ++i) s[i] += gg[i] * av[i];
        }
    });
}

NodePtr div(const NodePtr& a, const NodePtr& b) {
    require_same_shape("div", a->value, b->value);
    Tensor out = a->value;
    {
        double* o = out.data();
        const double* q = b->value.data();
        for (std::size_t i = 0; i < out.numel(); ++i) o[i] /= q[i];
    }
    return make_op("div", std::move(out), {a, b}, [a, b](const Tensor& g, GradStore& gs) {
        const double* gg = g.data();
        const double* av = a->value.data();
        const double* bv = b->value.data();
        if (a->requires_grad) {
            Tensor& slot = gs.slot(a.get(), a->value.shape());
            double* s = slot.data();
            for (std::size_t i = 0; i < slot.numel(); ++i) s[i] += gg[i] / bv[i];
        }
        if (b->requires_grad) {
            Tensor& slot = gs.slot(b.get(), b->value.shape());
            double* s = slot.data();
            for (std::size_t i = 0; i < slot.numel(); ++i) s[i] -= gg[i] * av[i] / (bv[i] * bv[i]);
        }
    });
}

NodePtr matmul(const NodePtr& a, const NodePtr& b) {
    Tensor out = kernels::matmul(a->value, b->value);
    return make_op("matmul", std::move(out), {a, b}, [a, b](const Tensor& g, GradStore& gs) {
        if (a->requires_grad) {
            Tensor& slot = gs.slot(a.get(), a->value.shape());
            kernels::matmul_accumulate(g, false, b->value, true, slot);
        }
        if (b->requires_grad) {
            Tensor& slot = gs.slot(b.get(), b->value.shape());
            kernels::matmul_accumulate(a->value, true, g, false, slot);
        }
    });
}

NodePtr relu(const NodePtr& x) {
    Tensor out = kernels::relu(x->value);
    return make_op("relu", std::move(out), {x}, [x](const Tensor& g, GradStore& gs) {
        if (!x->requires_grad) return;
        Tensor& slot = gs.slot(x.get(), x->value.shape());
        double* s = slot.data();
        const double* gg = g.data();
        const double* xv = x->value.data();
        for (std::size_t i = 0; i < slot.numel(); ++i) {
            if (xv[i] > 0.0) s[i] += gg[i];
        }
    });
}

NodePtr softmax_rows(const NodePtr& z) {
    Tensor p = kernels::softmax_rows(z->value);
    // The Jacobian needs the output itself; capture a copy rather than the new
    // node to avoid a node -> lambda -> node ownership cycle.
    Tensor p_saved = p;
    return make_op("softmax", std::move(p), {z},
                   [z, p_saved = std::move(p_saved)](const Tensor& g, GradStore& gs) {
        if (!z->requires_grad) return;
        Tensor& slot = gs.slot(z.get(), z->value.shape());
        const std::size_t n = p_saved.rows(), m = p_saved.cols();
        for (std::size_t r = 0; r < n; ++r) {
            const double* pr = p_saved.data() + r * m;
            const double* gr = g.data() + r * m;
            double* sr = slot.data() + r * m;
            double dot = 0.0;
            for (std::size_t c = 0; c < m; ++c) dot += gr[c] * pr[c];
            for (std::size_t c = 0; c < m; ++c) sr[c] += pr[c] * (gr[c] - dot);
        }
    });
}

NodePtr log(const NodePtr& x, double floor) {
    if (!(floor > 0.0)) throw std::invalid_argument("log: floor must be positive");
    Tensor out = kernels::log_floored(x->value, floor);
    return make_op("log", std::move(out), {x}, [x, floor](const Tensor& g, GradStore& gs) {
        if (!x->requires_grad) return;
        Tensor& slot = gs.slot(x.get(), x->value.shape());
        double* s = slot.data();
        const double* gg = g.data();
        const double* xv = x->value.data();
        for (std::size_t i = 0; i < slot.numel(); ++i) {
            if (xv[i] > floor) s[i] += gg[i] / xv[i];
        }
    });
}

NodePtr abs(const NodePtr& x) {
    Tensor out = Tensor::zeros_like(x->value);
    {
        double* o = out.data();
        const double* xv = x->value.data();
        for (std::size_t i = 0; i < out.numel(); ++i) o[i] = std::fabs(xv[i]);
    }
    return make_op("abs", std::move(out), {x}, [x](const Tensor& g, GradStore& gs) {
        if (!x->requires_grad) return;
        Tensor& slot = gs.slot(x.get(), x->value.shape());
        double* s = slot.data();
        const double* gg = g.data();
        const double* xv = x->value.data();
        for (std::size_t i = 0; i < slot.numel(); ++i) {
            if (xv[i] > 0.0) s[i] += gg[i];
            else if (xv[i] < 0.0) s[i] -= gg[i];
            // sign(0) = 0: no contribution at the kink
        }
    });
}

NodePtr sum(const NodePtr& x) {
    double total = 0.0;
    for (double v : x->value.values()) total += v;
    return make_op("sum", Tensor::scalar(total), {x}, [x](const Tensor& g, GradStore& gs) {
        if (!x->requires_grad) return;
        Tensor& slot = gs.slot(x.get(), x->value.shape());
        double* s = slot.data();
        const double g0 = g[0];
        for (std::size_t i = 0; i < slot.numel(); ++i) s[i] += g0;
    });
}

NodePtr mean(const NodePtr& x) {
    if (x->value.numel() == 0) throw std::invalid_argument("mean: empty tensor");
    double total = 0.0;
    for (double v : x->value.values()) total += v;
    const double inv_n = 1.0 / static_cast<double>(x->value.numel());
    return make_op("mean", Tensor::scalar(total * inv_n), {x},
                   [x, inv_n](const Tensor& g, GradStore& gs) {
        if (!x->requires_grad) return;
        Tensor& slot = gs.slot(x.get(), x->value.shape());
        double* s = slot.data();
        const double g0 = g[0] * inv_n;
        for (std::size_t i = 0; i < slot.numel(); ++i) s[i] += g0;
    });
}

NodePtr scale(const NodePtr& x, double factor) {
    Tensor out = x->value;
    for (double& v : out.values()) v *= factor;
    return make_op("scale", std::move(out), {x}, [x, factor](const Tensor& g, GradStore& gs) {
        if (!x->requires_grad) return;
        Tensor& slot = gs.slot(x.get(), x->value.shape());
        double* s = slot.data();
        const double* gg = g.data();
        for (std::size_t i = 0; i < slot.numel(); ++i) s[i] += factor * gg[i];
    });
}

NodePtr reshape(const NodePtr& x, std::vector<std::size_t> shape) {
    std::size_t count = 1;
    for (std::size_t d : shape) count *= d;
    if (count != x->value.numel()) {
        throw std::invalid_argument("reshape: element count changes: " + shape_string(x->value) +
                                    " vs " + shape_string(shape));
    }
    Tensor out(std::move(shape), std::vector<double>(x->value.values().begin(), x->value.values().end()));
    return make_op("reshape", std::move(out), {x}, [x](const Tensor& g, GradStore& gs) {
        if (!x->requires_grad) return;
        accumulate(gs.slot(x.get(), x->value.shape()), g);
    });
}

Tensor Gradients::wrt(const NodePtr& node) const {
    if (const Tensor* t = store_.find(node.get())) return *t;
    return Tensor(node->value.shape());
}

bool Gradients::touched(const NodePtr& node) const {
    return store_.find(node.get()) != nullptr;
}

Gradients backward(const NodePtr& root) {
    if (!root) throw std::invalid_argument("backward: null root");
    if (root->value.numel() != 1) {
        throw std::invalid_argument("backward: root must be a scalar, got shape " +
                                    shape_string(root->value));
    }
    Gradients result;
    if (!root->requires_grad) return result;

    // Iterative post-order DFS over grad-requiring ancestors. The child
    // ordering of `parents` fixes the visit order, which fixes the
    // accumulation order, which makes gradients bit-reproducible.
    std::vector<const Node*> order;
    std::unordered_set<const Node*> visited;
    std::vector<std::pair<const Node*, std::size_t>> stack;
    visited.insert(root.get());
    stack.emplace_back(root.get(), 0);
    while (!stack.empty()) {
        auto& [node, next_parent] = stack.back();
        bool descended = false;
        while (next_parent < node->parents.size()) {
            const Node* parent = node->parents[next_parent++].get();
            if (parent->requires_grad && visited.insert(parent).second) {
                stack.emplace_back(parent, 0);
                descended = true;
                break;
            }
        }
        if (!descended && (stack.back().second >= stack.back().first->parents.size())) {
            order.push_back(stack.back().first);
            stack.pop_back();
        }
    }

    result.store_.slot(root.get(), root->value.shape())[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        const Node* node = *it;
        if (!node->backprop) continue;
        const Tensor* g = result.store_.find(node);
        if (!g) continue;
        node->backprop(*g, result.store_);
    }
    return result;
}

} // namespace leak::autodiff
