#include "saltseg/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace saltseg {

namespace {

void check_binary(const Array& labels, const char* op) {
    for (Index i = 0; i < labels.size(); ++i) {
        if (labels[i] != 0.0 && labels[i] != 1.0) {
            throw ArgumentError(std::string(op) + ": labels must be 0 or 1, got " +
                                std::to_string(labels[i]) + " at index " + std::to_string(i));
        }
    }
}

double stable_sigmoid(double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
}

}  // namespace

Tensor bce_with_logits(const Tensor& logits, const Tensor& targets) {
    if (logits.shape() != targets.shape()) {
        throw DimensionError("bce_with_logits: shape mismatch " + shape_str(logits.shape()) + " vs " +
                             shape_str(targets.shape()));
    }
    check_binary(targets.data(), "bce_with_logits");
    const Index n = logits.numel();
    const Array& z = logits.data();
    const Array& y = targets.data();

    double acc = 0.0;
    for (Index i = 0; i < n; ++i) {
        acc += std::log1p(std::exp(-std::fabs(z[i]))) + std::max(z[i], 0.0) - z[i] * y[i];
    }
    Array out(1);
    out[0] = acc / static_cast<double>(n);

    const bool rg = grad_enabled() && logits.requires_grad();
    Tensor out_t = Tensor::from_data(std::move(out), {1}, rg);
    out_t.node()->op = "bce_with_logits";
    if (rg) {
        Array dz(n);
        const double inv = 1.0 / static_cast<double>(n);
        for (Index i = 0; i < n; ++i) dz[i] = (stable_sigmoid(z[i]) - y[i]) * inv;
        out_t.node()->parents = {logits};
        out_t.node()->backward_fn = [logits, dz = std::move(dz)](const Array& gout) {
            Array g = dz * gout[0];
            logits.accumulate_grad(g);
        };
    }
    return out_t;
}

Array lovasz_grad(const Array& gt_sorted) {
    check_binary(gt_sorted, "lovasz_grad");
    const Index n = gt_sorted.size();
    Array g = Array::Zero(n);
    double p = 0.0;
    for (Index i = 0; i < n; ++i) p += gt_sorted[i];
    if (p == 0.0) return g;

    double cum_gt = 0.0, cum_not = 0.0;
    double prev_jacc = 0.0;
    for (Index k = 0; k < n; ++k) {
        cum_gt += gt_sorted[k];
        cum_not += 1.0 - gt_sorted[k];
        const double intersection = p - cum_gt;
        const double uni = p + cum_not;
        const double jacc = 1.0 - intersection / uni;
        g[k] = k == 0 ? jacc : jacc - prev_jacc;
        prev_jacc = jacc;
    }
    return g;
}

Tensor lovasz_hinge(const Tensor& logits, const Tensor& labels) {
    if (logits.numel() != labels.numel()) {
        throw DimensionError("lovasz_hinge: element count mismatch " + shape_str(logits.shape()) + " vs " +
                             shape_str(labels.shape()));
    }
    if (logits.numel() < 1) throw ArgumentError("lovasz_hinge: empty input");
    check_binary(labels.data(), "lovasz_hinge");

    const Index n = logits.numel();
    const Array& z = logits.data();
    const Array& y = labels.data();

    Array signs(n), errors(n);
    for (Index i = 0; i < n; ++i) {
        signs[i] = 2.0 * y[i] - 1.0;
        errors[i] = 1.0 - z[i] * signs[i];
    }

    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(),
                     [&errors](Index a, Index b) { return errors[a] > errors[b]; });

    Array gt_sorted(n);
    for (Index r = 0; r < n; ++r) gt_sorted[r] = y[order[static_cast<std::size_t>(r)]];
    const Array ext_grad = lovasz_grad(gt_sorted);

    double loss = 0.0;
    for (Index r = 0; r < n; ++r) {
        const double e = errors[order[static_cast<std::size_t>(r)]];
        loss += std::max(0.0, e) * ext_grad[r];
    }
    Array out(1);
    out[0] = loss;

    // d(loss)/dz_j = -sign_j * g_rank(j) * [error_j > 0]
    Array dz = Array::Zero(n);
    for (Index r = 0; r < n; ++r) {
        const Index j = order[static_cast<std::size_t>(r)];
        if (errors[j] > 0.0) dz[j] = -signs[j] * ext_grad[r];
    }

    std::vector<Tensor> parents{logits};
    const bool rg = grad_enabled() && logits.requires_grad();
    Tensor out_t = Tensor::from_data(std::move(out), {1}, rg);
    auto* node = out_t.node();
    node->op = "lovasz_hinge";
    if (rg) {
        node->parents = std::move(parents);
        node->backward_fn = [logits, dz = std::move(dz)](const Array& gout) {
            Array g = dz * gout[0];
            logits.accumulate_grad(g);
        };
    }
    return out_t;
}

Tensor combined_loss(const Tensor& logits, const Tensor& targets, double w_bce, double w_lovasz) {
    if (w_bce < 0.0 || w_lovasz < 0.0) {
        throw ArgumentError("combined_loss: weights must be non-negative");
    }
    Tensor flat_logits = reshape(logits, {logits.numel()});
    Tensor flat_targets = reshape(targets, {targets.numel()});
    Tensor total = scalar_mul(bce_with_logits(flat_logits, flat_targets), w_bce);
    return add(total, scalar_mul(lovasz_hinge(flat_logits, flat_targets), w_lovasz));
}

}  // namespace saltseg
