#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "kgfuse/model.hpp"

namespace kgfuse {

struct TrainHyper {
    double learning_rate = 1e-5;
    int batch_size = 32;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.99;
    double eps = 1e-8;
    double warmup_proportion = 0.05;
    double margin = 1.0;
    int epochs = 1;
    uint64_t seed = 0;

    void validate() const;
};

// Adam with decoupled weight decay and linear warmup into a constant rate.
// Decay applies to weight matrices only (rows > 1), not biases or norms.
class AdamW {
  public:
    AdamW(const TrainHyper& hyper, long total_steps);

    // grads must hold an entry for every named parameter.
    void step(const ParamRefs& params, const std::map<std::string, Mat>& grads);

    long steps_taken() const { return t_; }
    double current_lr() const;  // rate the next step will use

  private:
    struct Slot {
        Mat m, v;
    };
    TrainHyper hyper_;
    long total_steps_ = 0;
    long warmup_steps_ = 0;
    long t_ = 0;
    std::map<std::string, Slot> slots_;
};

}  // namespace kgfuse
