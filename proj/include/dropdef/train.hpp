#ifndef DROPDEF_TRAIN_HPP
#define DROPDEF_TRAIN_HPP

#include "dropdef/corpus.hpp"
#include "dropdef/model.hpp"

namespace dropdef {

/// Mini-batch gradient descent with momentum on a fixed schedule.
struct TrainConfig {
    int epochs = 40;
    int batch_size = 8;
    double learning_rate = 0.002;
    double momentum = 0.9;
    double clip_norm = 20.0;     // global gradient-norm clip, <= 0 disables
    int holdout_every = 10;      // every k-th utterance is held out, 0 disables
    std::uint64_t seed = 1;
};

struct TrainReport {
    double initial_holdout_loss = 0.0;
    double final_holdout_loss = 0.0;
    std::vector<double> epoch_train_loss;
    int steps = 0;
};

struct TrainingExample {
    Matrix features;
    std::vector<int> labels;
};

std::vector<TrainingExample> prepare_examples(const AcousticModel& model,
                                              const std::vector<Utterance>& corpus);

/// Sets per-band mean / inverse std from the pooled frames.
void fit_feature_normalization(AcousticModel& model, const std::vector<TrainingExample>& examples);

/// Mean CTC loss (dropout off) over the examples.
double mean_ctc_loss(const AcousticModel& model, const std::vector<TrainingExample>& examples);

/// Trains with dropout at model.train_dropout_rate. Throws NumericalError on
/// a non-finite loss or parameter.
AcousticModel train(AcousticModel model, const std::vector<Utterance>& corpus, const TrainConfig& config,
                    TrainReport* report = nullptr);

}  // namespace dropdef

#endif
