#pragma once

// Central finite-difference oracle. Evaluates f at x +- h*e_i per
// coordinate; numerical noise is the caller's concern.

#include <functional>

#include "cslab/tensor.hpp"

namespace cslab {

inline Tensor finite_difference_grad(const std::function<double(const Tensor&)>& f,
                                     const Tensor& x, double h) {
    if (h <= 0.0) throw domain_error("finite difference step must be positive");
    Tensor g = Tensor::zeros(x.shape);
    Tensor probe = x;
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        double orig = probe.data[i];
        probe.data[i] = orig + h;
        double fp = f(probe);
        probe.data[i] = orig - h;
        double fm = f(probe);
        probe.data[i] = orig;
        g.data[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

} // namespace cslab
