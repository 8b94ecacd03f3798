#pragma once

#include <cstdint>
#include <vector>

#include "heatrank/dataset.hpp"
#include "heatrank/model.hpp"

namespace heatrank {

struct TrainConfig {
    int epochs = 40;
    int batch_size = 32;
    double lr = 0.05;
    // Multiplied into the learning rate after every epoch; 1 disables.
    double lr_decay = 1.0;
    double momentum = 0.9;
    double weight_decay = 0.0;
    uint64_t seed = 0;
    // Stop after the epoch whose validation accuracy reaches this; set
    // above 1 to disable.
    double early_stop_val_acc = 0.995;
    // Return the weights of the best validation epoch (earliest on ties)
    // instead of the last one. No effect without a validation set.
    bool keep_best = true;
};

struct TrainReport {
    int epochs_run = 0;
    // 1-based epoch whose weights the model carries on return.
    int best_epoch = 0;
    double final_train_loss = 0.0;
    double train_acc = 0.0, val_acc = 0.0;
    std::vector<double> epoch_losses;
    std::vector<double> epoch_val_acc;
};

// Momentum SGD over cross-entropy; BatchNorm uses batch statistics during
// training and updates its running stats per step. Deterministic given the
// seed. Throws TrainingError when the loss turns non-finite.
TrainReport train(Model& m, const SampleSet& train_set, const SampleSet& val_set,
                  const TrainConfig& cfg);

double accuracy(const Model& m, const SampleSet& set);

}  // namespace heatrank
