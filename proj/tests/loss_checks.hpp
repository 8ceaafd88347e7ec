#pragma once

// Loss checks shared by the unit tests and the acceptance run: oracle
// comparisons and central finite differences, all in double precision.

#include "oracles.hpp"

#include "tripro/objectives.hpp"

#include <torch/torch.h>

#include <functional>
#include <random>
#include <string>

namespace loss_checks {

inline oracle::Matrix to_matrix(const torch::Tensor& t) {
    const auto c = t.to(torch::kDouble).contiguous();
    oracle::Matrix m(static_cast<std::size_t>(c.size(0)), std::vector<double>(static_cast<std::size_t>(c.size(1))));
    auto acc = c.accessor<double, 2>();
    for (int64_t i = 0; i < c.size(0); ++i)
        for (int64_t j = 0; j < c.size(1); ++j) m[i][j] = acc[i][j];
    return m;
}

inline torch::Tensor normalized(torch::Tensor t) { return t / t.norm(2, 1, true); }

/// Largest relative error between the analytic gradient and central differences
/// over every input of f.
inline double gradient_error(const std::function<torch::Tensor(const std::vector<torch::Tensor>&)>& f,
                             std::vector<torch::Tensor> inputs, double h = 1e-6) {
    for (auto& x : inputs) x = x.detach().clone().to(torch::kDouble).set_requires_grad(true);
    f(inputs).backward();
    double worst = 0.0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        const auto analytic = inputs[k].grad().clone();
        auto numeric = torch::zeros_like(analytic);
        auto flat = numeric.view(-1);
        torch::NoGradGuard guard;
        auto x = inputs[k].detach().view(-1);
        for (int64_t i = 0; i < x.numel(); ++i) {
            const double orig = x[i].item<double>();
            std::vector<torch::Tensor> probe;
            for (auto& in : inputs) probe.push_back(in.detach());
            x[i] = orig + h;
            const double up = f(probe).item<double>();
            x[i] = orig - h;
            const double down = f(probe).item<double>();
            x[i] = orig;
            flat[i] = (up - down) / (2.0 * h);
        }
        const double scale = std::max({analytic.norm().item<double>(), numeric.norm().item<double>(), 1e-8});
        worst = std::max(worst, (analytic - numeric).norm().item<double>() / scale);
    }
    return worst;
}

struct Outcome {
    double worst_oracle_error = 0.0;
    double worst_gradient_error = 0.0;
};

inline torch::Tensor rand_matrix(std::mt19937_64& g, int64_t rows, int64_t cols) {
    std::normal_distribution<double> n;
    auto t = torch::empty({rows, cols}, torch::kDouble);
    auto acc = t.accessor<double, 2>();
    for (int64_t i = 0; i < rows; ++i)
        for (int64_t j = 0; j < cols; ++j) acc[i][j] = n(g);
    return t;
}

/// Random batches with at least two identities and a repeated one, like PK sampling.
inline std::vector<int> rand_labels(std::mt19937_64& g, int b) {
    std::vector<int> labels(static_cast<std::size_t>(b));
    const int ids = std::uniform_int_distribution<int>(2, std::max(2, b / 2))(g);
    for (int i = 0; i < b; ++i) labels[i] = 1 + i % ids;
    std::shuffle(labels.begin(), labels.end(), g);
    return labels;
}

/// `instances` random cases of one loss; "v2t", "t2v", "id" or "triplet".
inline Outcome run(const std::string& loss, int instances, std::uint64_t seed) {
    namespace m = tripro::model;
    std::mt19937_64 g(seed);
    Outcome out;
    for (int n = 0; n < instances; ++n) {
        const int b = std::uniform_int_distribution<int>(2, 8)(g);
        const int d = std::uniform_int_distribution<int>(2, 16)(g);
        double oracle_value = 0.0, value = 0.0, grad = 0.0;
        if (loss == "v2t" || loss == "t2v") {
            const auto v = normalized(rand_matrix(g, b, d)), t = normalized(rand_matrix(g, b, d));
            const double tau = std::uniform_real_distribution<double>(0.05, 1.0)(g);
            const auto tau_t = torch::tensor(tau, torch::kDouble);
            const bool v2t = loss == "v2t";
            value = (v2t ? m::contrastive_v2t(v, t, tau_t) : m::contrastive_t2v(t, v, tau_t)).item<double>();
            oracle_value = v2t ? oracle::contrastive(to_matrix(v), to_matrix(t), tau)
                               : oracle::contrastive(to_matrix(t), to_matrix(v), tau);
            grad = gradient_error(
                [v2t](const std::vector<torch::Tensor>& x) {
                    return v2t ? m::contrastive_v2t(x[0], x[1], x[2]) : m::contrastive_t2v(x[1], x[0], x[2]);
                },
                {v, t, tau_t});
        } else if (loss == "id") {
            const int y = std::uniform_int_distribution<int>(2, 10)(g);
            const auto logits = rand_matrix(g, b, y) * 2.0;
            std::vector<int> labels;
            for (int i = 0; i < b; ++i) labels.push_back(std::uniform_int_distribution<int>(1, y)(g));
            const double eps = n % 2 ? 0.1 : 0.0;
            value = m::id_loss(logits, labels, eps).item<double>();
            oracle_value = oracle::cross_entropy(to_matrix(logits), labels, eps);
            grad = gradient_error([&](const std::vector<torch::Tensor>& x) { return m::id_loss(x[0], labels, eps); },
                                  {logits});
        } else {
            const auto f = rand_matrix(g, b, d);
            const auto labels = rand_labels(g, b);
            // a margin near the typical distance gap keeps some hinges active and some not
            const double margin = std::uniform_real_distribution<double>(0.0, 2.0 * d)(g);
            value = m::triplet_loss(f, labels, margin).item<double>();
            oracle_value = oracle::triplet(to_matrix(f), labels, margin);
            grad = gradient_error(
                [&](const std::vector<torch::Tensor>& x) { return m::triplet_loss(x[0], labels, margin); }, {f});
        }
        out.worst_oracle_error = std::max(out.worst_oracle_error, std::abs(value - oracle_value));
        out.worst_gradient_error = std::max(out.worst_gradient_error, grad);
    }
    return out;
}

} // namespace loss_checks
