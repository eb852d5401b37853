#include "kgfuse/optim.hpp"

#include <cmath>

#include "kgfuse/common.hpp"

namespace kgfuse {

void TrainHyper::validate() const {
    if (learning_rate <= 0.0) throw Error("hyper: learning_rate must be positive");
    if (batch_size <= 0) throw Error("hyper: batch_size must be positive");
    if (weight_decay < 0.0) throw Error("hyper: weight_decay must be non-negative");
    if (!(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0))
        throw Error("hyper: betas must lie in (0, 1)");
    if (eps <= 0.0) throw Error("hyper: eps must be positive");
    if (warmup_proportion < 0.0 || warmup_proportion >= 1.0)
        throw Error("hyper: warmup_proportion must lie in [0, 1)");
    if (margin <= 0.0) throw Error("hyper: margin must be positive");
    if (epochs < 0) throw Error("hyper: epochs must be non-negative");
}

AdamW::AdamW(const TrainHyper& hyper, long total_steps) : hyper_(hyper), total_steps_(total_steps) {
    hyper.validate();
    if (total_steps <= 0) throw Error("optimizer: total_steps must be positive");
    warmup_steps_ =
        std::max<long>(1, std::lround(hyper.warmup_proportion * static_cast<double>(total_steps)));
}

double AdamW::current_lr() const {
    const long t = t_ + 1;
    if (t < warmup_steps_)
        return hyper_.learning_rate * static_cast<double>(t) / static_cast<double>(warmup_steps_);
    return hyper_.learning_rate;
}

void AdamW::step(const ParamRefs& params, const std::map<std::string, Mat>& grads) {
    const double lr = current_lr();
    ++t_;
    const double bc1 = 1.0 - std::pow(hyper_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(hyper_.beta2, static_cast<double>(t_));
    for (auto& [name, p] : params) {
        auto it = grads.find(name);
        if (it == grads.end()) throw Error("optimizer: missing gradient for '" + name + "'");
        const Mat& g = it->second;
        if (g.rows() != p->rows() || g.cols() != p->cols())
            throw Error("optimizer: gradient shape mismatch for '" + name + "'");
        auto slot_it = slots_.find(name);
        if (slot_it == slots_.end()) {
            Slot s{Mat::Zero(p->rows(), p->cols()), Mat::Zero(p->rows(), p->cols())};
            slot_it = slots_.emplace(name, std::move(s)).first;
        }
        Slot& s = slot_it->second;
        s.m = hyper_.beta1 * s.m + (1.0 - hyper_.beta1) * g;
        s.v = (hyper_.beta2 * s.v.array() + (1.0 - hyper_.beta2) * g.array().square()).matrix();
        const Mat mhat = s.m / bc1;
        const Mat vhat = s.v / bc2;
        *p -= (lr * mhat.array() / (vhat.array().sqrt() + hyper_.eps)).matrix();
        if (hyper_.weight_decay > 0.0 && p->rows() > 1)
            *p -= lr * hyper_.weight_decay * (*p);
    }
}

}  // namespace kgfuse
