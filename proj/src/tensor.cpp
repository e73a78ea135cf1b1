#include "osteo/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace osteo {

namespace {

thread_local bool t_grad_enabled = true;
#ifdef NDEBUG
thread_local bool t_finite_checks = false;
#else
thread_local bool t_finite_checks = true;
#endif
std::atomic<std::uint64_t> g_sequence{0};

}  // namespace

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return shape.empty() ? 0 : n;
}

bool grad_enabled() { return t_grad_enabled; }
bool finite_checks_enabled() { return t_finite_checks; }
void set_finite_checks(bool enabled) { t_finite_checks = enabled; }
std::uint64_t next_node_sequence() { return g_sequence.fetch_add(1, std::memory_order_relaxed); }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

template <typename T>
void backward(Tensor<T>& root, const std::vector<T>* seed) {
    if (!root.requires_grad()) return;
    auto& g = root.grad_buffer();
    if (seed) {
        if (seed->size() != root.numel()) {
            throw DimensionError("backward seed has " + std::to_string(seed->size()) + " entries, root has " +
                                 std::to_string(root.numel()));
        }
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += (*seed)[i];
    } else {
        if (root.numel() != 1) throw DimensionError("backward without seed needs a scalar root");
        g[0] += T(1);
    }

    // Collect every tensor reachable through recorded nodes.
    std::vector<TensorImpl<T>*> order;
    std::unordered_set<TensorImpl<T>*> seen;
    std::vector<TensorImpl<T>*> stack{root.impl()};
    seen.insert(root.impl());
    while (!stack.empty()) {
        auto* cur = stack.back();
        stack.pop_back();
        if (!cur->node) continue;
        order.push_back(cur);
        for (const auto& in : cur->node->inputs) {
            auto* p = in.impl();
            if (p->requires_grad && seen.insert(p).second) stack.push_back(p);
        }
    }
    std::sort(order.begin(), order.end(),
              [](const TensorImpl<T>* a, const TensorImpl<T>* b) { return a->node->sequence > b->node->sequence; });
    for (auto* t : order) {
        if (t->grad.empty()) continue;
        t->node->backward(*t);
    }
}

template <typename T>
void check_finite(const Tensor<T>& t, const char* where) {
    if (!t_finite_checks) return;
    for (std::size_t i = 0; i < t.numel(); ++i) {
        if (!std::isfinite(t[i])) {
            throw NumericError(std::string("non-finite value in ") + where + " output at flat index " +
                               std::to_string(i));
        }
    }
}

template void backward<float>(Tensor<float>&, const std::vector<float>*);
template void backward<double>(Tensor<double>&, const std::vector<double>*);
template void check_finite<float>(const Tensor<float>&, const char*);
template void check_finite<double>(const Tensor<double>&, const char*);

}  // namespace osteo
