#pragma once

// Central finite-difference gradient checking. The numeric side re-evaluates
// the primitive at 64-bit (the tensor library is templated on its scalar), so
// the oracle is tight enough to judge 32-bit reverse-mode gradients at the
// spec'd step without drowning in float rounding. It only needs forward
// evaluations and therefore stays independent of the tape's backward rules.

#include <cmath>
#include <map>
#include <string>

#include "draftlab/tensor.hpp"

namespace gradcheck {

struct Result {
    double max_elem_rel = 0.0;
    double aggregate_rel = 0.0;
};

// fn must be callable with Tape<TA>& and Tape<double>&, returning the output
// tensor of the primitive under test. The check compares the analytic
// gradient of loss = sum(fn(...) * cotangent) against central differences of
// the 64-bit forward.
template <typename TA, typename Fn>
Result run_projected(std::map<std::string, draftlab::Tensor<TA>>& params, Fn&& fn,
                     const draftlab::Tensor<TA>& cotangent, double step,
                     double elem_floor = 0.1) {
    using draftlab::Tape;
    using draftlab::Tensor;

    Tape<TA> tape;
    for (auto& [id, t] : params) tape.register_param(id, t);
    Tensor<TA> out = fn(tape);
    Tensor<TA> loss = sum_all(mul(out, cotangent, &tape), &tape);
    auto grads = tape.backward(loss);

    std::map<std::string, Tensor<double>> dparams;
    for (auto& [id, t] : params) {
        Tensor<double> d(t.shape());
        for (int64_t i = 0; i < t.numel(); ++i) d.data()[i] = static_cast<double>(t.data()[i]);
        dparams.emplace(id, std::move(d));
    }
    Tape<double> dtape;
    for (auto& [id, t] : dparams) dtape.register_param(id, t);

    auto eval = [&]() -> double {
        dtape.begin_pass();
        Tensor<double> o = fn(dtape);
        double acc = 0.0;
        for (int64_t i = 0; i < o.numel(); ++i) {
            acc += o.data()[i] * static_cast<double>(cotangent.data()[i]);
        }
        return acc;
    };

    Result res;
    double diff_sq = 0.0, ref_sq = 0.0;
    for (auto& [id, t] : dparams) {
        const auto& g = grads.at(id);
        for (int64_t i = 0; i < t.numel(); ++i) {
            const double saved = t.data()[i];
            t.data()[i] = saved + step;
            const double up = eval();
            t.data()[i] = saved - step;
            const double down = eval();
            t.data()[i] = saved;
            const double fd = (up - down) / (2.0 * step);
            const double ad = static_cast<double>(g.data()[i]);
            const double err = std::fabs(ad - fd);
            res.max_elem_rel = std::max(res.max_elem_rel, err / std::max(std::fabs(fd), elem_floor));
            diff_sq += err * err;
            ref_sq += fd * fd;
        }
    }
    res.aggregate_rel = std::sqrt(diff_sq) / std::max(std::sqrt(ref_sq), 1e-300);
    return res;
}

// Scalar-loss convenience wrapper: fn returns a scalar tensor already.
template <typename TA, typename Fn>
Result run(std::map<std::string, draftlab::Tensor<TA>>& params, Fn&& fn, double step,
           double elem_floor = 0.1) {
    draftlab::Tensor<TA> one = draftlab::Tensor<TA>::scalar(TA(1));
    return run_projected(params, std::forward<Fn>(fn), one, step, elem_floor);
}

}  // namespace gradcheck
