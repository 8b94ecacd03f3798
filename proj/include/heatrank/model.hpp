#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "heatrank/tensor.hpp"

namespace heatrank {

// Weight layout [out_ch, in_ch, k, k]; stride is always 1, spatial
// downsampling is done by pooling layers.
struct Conv2d {
    int in_ch = 0, out_ch = 0, ksize = 3, pad = 1;
    Tensor w;
    std::vector<double> b;
};

struct Dense {
    int in_dim = 0, out_dim = 0;
    Tensor w;  // [out_dim, in_dim]
    std::vector<double> b;
};

struct BatchNorm {
    int channels = 0;
    std::vector<double> gamma, beta, running_mean, running_var;
    double eps = 1e-5;
    double momentum = 0.1;  // running = (1-momentum)*running + momentum*batch
};

struct ReLU {};
struct MaxPool2 {};       // 2x2, stride 2; requires even spatial dims
struct GlobalAvgPool {};  // [N,C,H,W] -> [N,C]
struct Flatten {};        // [N,C,H,W] -> [N,C*H*W]

using Layer = std::variant<Conv2d, Dense, BatchNorm, ReLU, MaxPool2, GlobalAvgPool, Flatten>;

struct Model {
    int in_ch = 3, in_h = 64, in_w = 64;
    int classes = 2;
    bool canonized = false;  // true once no BatchNorm layer remains
    std::vector<Layer> layers;

    bool has_batchnorm() const;
    // Index of the last Conv2d layer; -1 if none.
    int last_conv_index() const;
};

// The fixed classifier stack used throughout: three conv+BN+ReLU blocks with
// 2x2 max-pooling after the first two, global average pooling, one dense
// head. Weights are He-uniform from the seed; BN starts at identity.
Model make_micro_cnn(uint64_t seed, int in_ch = 3, int in_h = 64, int in_w = 64, int classes = 2);

enum class ReluGrad { standard, deconv, guided };
enum class BnMode { inference, train };

// Everything the backward passes need: the input of every layer, plus the
// network output. inputs[i] feeds layers[i]; inputs[layers.size()] = logits.
struct ForwardTrace {
    std::vector<Tensor> inputs;
    std::vector<std::vector<int>> pool_argmax;  // flat plane index per pooled output element
    std::vector<std::vector<double>> bn_mean, bn_var;  // batch stats (train mode only)
    Tensor logits;  // [N, classes]
    Tensor probs;   // [N, classes]
};

// batch is [N,C,H,W]; a [C,H,W] tensor is accepted as a batch of one.
ForwardTrace forward(const Model& m, const Tensor& batch, BnMode mode = BnMode::inference);

// Probabilities for a single [C,H,W] image.
std::vector<double> predict_probs(const Model& m, const Tensor& image);

// Probability of the target class for a stack of [C,H,W] images,
// forwarded in chunks to bound memory.
std::vector<double> batched_target_probs(const Model& m, const std::vector<Tensor>& images,
                                         int target, int chunk = 64);

// Gradients of sum_n logits[n, targets[n]] w.r.t. every layer input.
// Returned vector is parallel to trace.inputs (without the final logits
// entry); element 0 is the gradient w.r.t. the network input.
std::vector<Tensor> backward_trace(const Model& m, const ForwardTrace& trace,
                                   const std::vector<int>& targets, ReluGrad mode);

// d logits[target] / d input for one [C,H,W] image. The mode selects how
// ReLU routes the signal (plain gate, deconv, or guided).
Tensor input_gradient(const Model& m, const Tensor& image, int target,
                      ReluGrad mode = ReluGrad::standard);

// Per-layer parameter gradients; slots unused by a layer kind stay empty.
struct LayerGrads {
    Tensor w;
    std::vector<double> b, gamma, beta;
};

struct TrainBackward {
    double loss = 0.0;  // mean cross-entropy over the batch
    std::vector<LayerGrads> grads;
};

// Cross-entropy backward through a train-mode trace. labels are class ids.
TrainBackward backward_train(const Model& m, const ForwardTrace& trace,
                             const std::vector<int>& labels);

// Folds every BatchNorm into the preceding Conv2d or Dense layer and drops
// it. Throws InvalidArgument (naming the layer index) when a BatchNorm does
// not directly follow a layer with weights.
Model merge_batchnorm(const Model& m);

}  // namespace heatrank
