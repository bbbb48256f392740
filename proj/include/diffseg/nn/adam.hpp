#pragma once

#include <cmath>
#include <vector>

#include "diffseg/nn/ops.hpp"

namespace diffseg::nn {

// Adam with bias correction over a set of registered parameters. Each param
// carries its own first/second moment matrices; the optimizer only tracks the
// shared step count.
struct adam {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long t = 0;

    explicit adam(double learning_rate = 1e-4) : lr(learning_rate) {}

    void step(const std::vector<param*>& params) {
        ++t;
        double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
        double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
        for (param* p : params) {
            p->m = beta1 * p->m + (1.0 - beta1) * p->g;
            p->v = beta2 * p->v + (1.0 - beta2) * p->g.cwiseProduct(p->g);
            for (long i = 0; i < p->w.size(); ++i) {
                double mhat = p->m.data()[i] / bc1;
                double vhat = p->v.data()[i] / bc2;
                p->w.data()[i] -= lr * mhat / (std::sqrt(vhat) + eps);
            }
        }
    }

    static void zero_grad(const std::vector<param*>& params) {
        for (param* p : params) p->zero_grad();
    }
};

}  // namespace diffseg::nn
