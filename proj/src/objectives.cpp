#include "tripro/objectives.hpp"

#include "tripro/errors.hpp"

#include <set>

namespace tripro::model {

namespace {

using torch::autograd::AutogradContext;
using torch::autograd::tensor_list;

void require_finite(const torch::Tensor& t, const char* what) {
    if (!torch::isfinite(t).all().item<bool>()) throw InputError(std::string(what) + " contains NaN or Inf");
}

struct ContrastiveFn : public torch::autograd::Function<ContrastiveFn> {
    static torch::Tensor forward(AutogradContext* ctx, torch::Tensor a, torch::Tensor b, torch::Tensor tau) {
        auto s = torch::matmul(a, b.t()) / tau;
        auto loss = -(s.diagonal() - torch::logsumexp(s, 1)).mean();
        ctx->save_for_backward({a, b, tau, s});
        return loss;
    }

    static tensor_list backward(AutogradContext* ctx, tensor_list grads) {
        const auto saved = ctx->get_saved_variables();
        const auto &a = saved[0], &b = saved[1], &tau = saved[2], &s = saved[3];
        const auto n = a.size(0);
        // dL/dS = (softmax(S) - I) / B
        auto g = (s.softmax(1) - torch::eye(n, s.options())) / static_cast<double>(n) * grads[0];
        auto da = torch::matmul(g, b) / tau;
        auto db = torch::matmul(g.t(), a) / tau;
        auto dtau = (-(g * s).sum() / tau).reshape(tau.sizes());
        return {da, db, dtau};
    }
};

struct IdLossFn : public torch::autograd::Function<IdLossFn> {
    static torch::Tensor forward(AutogradContext* ctx, torch::Tensor logits, torch::Tensor target) {
        auto logp = logits.log_softmax(1);
        auto loss = -(target * logp).sum(1).mean();
        ctx->save_for_backward({logp, target});
        return loss;
    }

    static tensor_list backward(AutogradContext* ctx, tensor_list grads) {
        const auto saved = ctx->get_saved_variables();
        const auto n = saved[0].size(0);
        auto g = (saved[0].exp() - saved[1]) / static_cast<double>(n) * grads[0];
        return {g, torch::Tensor()};
    }
};

struct TripletFn : public torch::autograd::Function<TripletFn> {
    static torch::Tensor forward(AutogradContext* ctx, torch::Tensor x, torch::Tensor pos, torch::Tensor neg,
                                 double margin) {
        auto dp = (x - x.index_select(0, pos)).pow(2).sum(1);
        auto dn = (x - x.index_select(0, neg)).pow(2).sum(1);
        auto hinge = dp - dn + margin;
        auto active = hinge > 0;
        ctx->save_for_backward({x, pos, neg, active});
        return hinge.clamp_min(0).mean();
    }

    static tensor_list backward(AutogradContext* ctx, tensor_list grads) {
        const auto saved = ctx->get_saved_variables();
        const auto &x = saved[0], &pos = saved[1], &neg = saved[2], &active = saved[3];
        const auto n = x.size(0);
        auto w = active.to(x.scalar_type()).unsqueeze(1) * (grads[0] / static_cast<double>(n));
        auto up = 2.0 * (x - x.index_select(0, pos)) * w;
        auto un = 2.0 * (x - x.index_select(0, neg)) * w;
        auto g = up - un;
        g = g.index_add(0, pos, -up);
        g = g.index_add(0, neg, un);
        return {g, torch::Tensor(), torch::Tensor(), torch::Tensor()};
    }
};

} // namespace

torch::Tensor contrastive(const torch::Tensor& a, const torch::Tensor& b, const torch::Tensor& tau) {
    if (a.dim() != 2 || a.sizes() != b.sizes()) throw InputError("contrastive: expected two B x D matrices");
    if (a.size(0) < 1) throw InputError("contrastive: empty batch");
    require_finite(a, "contrastive input");
    require_finite(b, "contrastive input");
    require_finite(tau, "temperature");
    if (tau.numel() != 1 || tau.item<double>() <= 0.0) throw InputError("temperature must be a positive scalar");
    return ContrastiveFn::apply(a, b, tau);
}

torch::Tensor id_loss(const torch::Tensor& logits, const std::vector<int>& labels, double smoothing) {
    if (logits.dim() != 2 || logits.size(0) != static_cast<int64_t>(labels.size()) || labels.empty())
        throw InputError("id_loss: logits must be B x Y with B labels");
    if (smoothing < 0.0 || smoothing >= 1.0) throw ConfigError("label smoothing must be in [0, 1)");
    require_finite(logits, "id_loss logits");
    const auto y = logits.size(1);
    auto target = torch::full_like(logits, smoothing / static_cast<double>(y));
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 1 || labels[i] > y)
            throw InputError("id_loss: label " + std::to_string(labels[i]) + " outside [1, " + std::to_string(y) +
                             "]");
        target[static_cast<int64_t>(i)][labels[i] - 1] += 1.0 - smoothing;
    }
    return IdLossFn::apply(logits, target);
}

torch::Tensor triplet_loss(const torch::Tensor& features, const std::vector<int>& labels, double margin) {
    const auto n = static_cast<int64_t>(labels.size());
    if (features.dim() != 2 || features.size(0) != n) throw InputError("triplet_loss: features must be B x D");
    if (margin < 0.0) throw ConfigError("triplet margin must be >= 0");
    if (std::set<int>(labels.begin(), labels.end()).size() < 2)
        throw InputError("triplet mining needs at least two identities in the batch");
    require_finite(features, "triplet features");

    std::vector<int64_t> pos(static_cast<std::size_t>(n)), neg(static_cast<std::size_t>(n));
    {
        torch::NoGradGuard guard;
        auto d = (features.unsqueeze(1) - features.unsqueeze(0)).pow(2).sum(2).to(torch::kDouble);
        auto acc = d.accessor<double, 2>();
        for (int64_t i = 0; i < n; ++i) {
            int64_t p = i, q = -1;
            for (int64_t j = 0; j < n; ++j) {
                if (j == i) continue;
                if (labels[static_cast<std::size_t>(j)] == labels[static_cast<std::size_t>(i)]) {
                    if (p == i || acc[i][j] > acc[i][p]) p = j;
                } else if (q < 0 || acc[i][j] < acc[i][q]) {
                    q = j;
                }
            }
            pos[static_cast<std::size_t>(i)] = p;
            neg[static_cast<std::size_t>(i)] = q;
        }
    }
    return TripletFn::apply(features, torch::tensor(pos, torch::kLong), torch::tensor(neg, torch::kLong), margin);
}

} // namespace tripro::model
