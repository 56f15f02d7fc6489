#include "dropdef/train.hpp"
#include "dropdef/rng.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace dropdef {

std::vector<TrainingExample> prepare_examples(const AcousticModel& model,
                                              const std::vector<Utterance>& corpus) {
    std::vector<TrainingExample> out;
    out.reserve(corpus.size());
    for (const auto& u : corpus) {
        if (!model.alphabet.contains(u.text))
            throw std::invalid_argument("train: transcript of " + u.id + " uses symbols outside the alphabet");
        out.push_back({featurize(u.audio, model.frontend), model.alphabet.encode(u.text)});
    }
    return out;
}

void fit_feature_normalization(AcousticModel& model, const std::vector<TrainingExample>& examples) {
    const int bands = model.frontend.mel_bands;
    Vector sum = Vector::Zero(bands);
    Vector sq = Vector::Zero(bands);
    double frames = 0.0;
    for (const auto& e : examples) {
        sum += e.features.colwise().sum().transpose();
        sq += e.features.cwiseAbs2().colwise().sum().transpose();
        frames += static_cast<double>(e.features.rows());
    }
    if (frames == 0.0) throw std::invalid_argument("fit_feature_normalization: no frames");
    model.feature_mean = sum / frames;
    const Vector var = (sq / frames - model.feature_mean.cwiseAbs2()).cwiseMax(1e-8);
    model.feature_inv_std = var.cwiseSqrt().cwiseInverse();
}

double mean_ctc_loss(const AcousticModel& model, const std::vector<TrainingExample>& examples) {
    if (examples.empty()) return 0.0;
    double total = 0.0;
    for (const auto& e : examples) total += ctc_loss(forward(model, e.features), e.labels).loss;
    return total / static_cast<double>(examples.size());
}

AcousticModel train(AcousticModel model, const std::vector<Utterance>& corpus, const TrainConfig& config,
                    TrainReport* report) {
    if (corpus.empty()) throw std::invalid_argument("train: empty corpus");
    if (config.batch_size < 1 || config.epochs < 0) throw std::invalid_argument("train: invalid schedule");
    const auto examples = prepare_examples(model, corpus);

    std::vector<TrainingExample> fit, held;
    for (std::size_t i = 0; i < examples.size(); ++i) {
        if (config.holdout_every > 0 && examples.size() > 1 &&
            i % static_cast<std::size_t>(config.holdout_every) == static_cast<std::size_t>(config.holdout_every) - 1)
            held.push_back(examples[i]);
        else
            fit.push_back(examples[i]);
    }
    if (held.empty()) held = fit;

    TrainReport local;
    local.initial_holdout_loss = mean_ctc_loss(model, held);

    Parameters velocity = model.params.zeros_like();
    std::vector<std::size_t> order(fit.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        Rng shuffle_rng(mix_seed(config.seed, static_cast<std::uint64_t>(epoch)), 3);
        shuffle_rng.shuffle(order.begin(), order.end());
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
            Parameters grad = model.params.zeros_like();
            for (std::size_t b = start; b < stop; ++b) {
                const auto& ex = fit[order[b]];
                const DropoutSpec dropout{model.train_dropout_rate,
                                          mix_seed(config.seed, (static_cast<std::uint64_t>(epoch) << 32) | order[b]),
                                          DropoutScope::dense_only};
                const auto trace = forward_traced(model, ex.features, dropout);
                const auto ctc = ctc_loss(trace.posteriors, ex.labels);
                if (!std::isfinite(ctc.loss)) {
                    std::ostringstream msg;
                    msg << "train: non-finite loss at epoch " << epoch << ", example " << order[b];
                    throw NumericalError(msg.str());
                }
                epoch_loss += ctc.loss;
                grad.axpy(1.0, *backward(model, trace, ctc.grad_logits, true, false).params);
            }
            grad.scale(1.0 / static_cast<double>(stop - start));
            const double norm = std::sqrt(grad.squared_norm());
            if (!std::isfinite(norm)) throw NumericalError("train: non-finite gradient at epoch " + std::to_string(epoch));
            if (config.clip_norm > 0.0 && norm > config.clip_norm) grad.scale(config.clip_norm / norm);
            velocity.scale(config.momentum);
            velocity.axpy(-config.learning_rate, grad);
            model.params.axpy(1.0, velocity);
            ++local.steps;
        }
        if (!model.params.all_finite()) throw NumericalError("train: parameters diverged at epoch " + std::to_string(epoch));
        local.epoch_train_loss.push_back(epoch_loss / static_cast<double>(fit.size()));
    }
    local.final_holdout_loss = mean_ctc_loss(model, held);
    if (report) *report = std::move(local);
    return model;
}

}  // namespace dropdef
