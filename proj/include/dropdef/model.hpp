#ifndef DROPDEF_MODEL_HPP
#define DROPDEF_MODEL_HPP

#include "dropdef/ctc.hpp"
#include "dropdef/features.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

namespace dropdef {

/// Which layers receive dropout. The recurrent layer's internal weights never do.
enum class DropoutScope {
    dense_only,           // outputs of the hidden dense layers
    dense_and_recurrent,  // additionally the recurrent layer's output sequence
};

/// One dropout realization: same (spec, input) always yields the same masks.
struct DropoutSpec {
    double rate = 0.0;
    std::uint64_t seed = 0;
    DropoutScope scope = DropoutScope::dense_only;
};

/// Keep-mask value for a unit: 0 if dropped, 1/(1-p) if kept (inverted
/// dropout, so the dropout-off network needs no rescaling).
double dropout_keep_scale(const DropoutSpec& spec, int layer, Eigen::Index frame, Eigen::Index unit);

struct DenseLayer {
    Matrix weight;  // out x in
    Vector bias;
};

struct RecurrentLayer {
    Matrix input_weight;      // width x in
    Matrix recurrent_weight;  // width x width
    Vector bias;
};

/// Trainable parameters. Also used as the gradient container.
struct Parameters {
    std::vector<DenseLayer> hidden;
    std::optional<RecurrentLayer> recurrent;
    DenseLayer output;

    [[nodiscard]] Parameters zeros_like() const;
    void axpy(double a, const Parameters& other);  // this += a * other
    void scale(double a);
    [[nodiscard]] double squared_norm() const;
    [[nodiscard]] bool all_finite() const;
    [[nodiscard]] Eigen::Index count() const;
};

struct ModelGeometry {
    int context = 3;  // frames of context on each side
    int hidden_layers = 3;
    int hidden_width = 128;
    int recurrent_width = 0;  // 0 disables the recurrent layer
};

struct AcousticModel {
    Alphabet alphabet;
    FrontendConfig frontend;
    ModelGeometry geometry;
    double train_dropout_rate = 0.05;
    Vector feature_mean;     // per mel band
    Vector feature_inv_std;  // per mel band
    Parameters params;

    [[nodiscard]] int input_width() const {
        return (2 * geometry.context + 1) * frontend.mel_bands;
    }
};

/// He-uniform initialisation; identity feature normalisation.
AcousticModel init_model(const Alphabet& alphabet, const FrontendConfig& frontend,
                         const ModelGeometry& geometry, double train_dropout_rate,
                         std::uint64_t seed);

/// Intermediate activations kept for the backward pass.
struct ForwardTrace {
    Matrix input;                 // T x input_width (normalised, context-stacked)
    std::vector<Matrix> pre;      // per hidden layer, T x width
    std::vector<Matrix> out;      // per hidden layer after ReLU and mask
    std::vector<Matrix> masks;    // empty matrices when dropout is off
    Matrix recurrent_state;       // T x recurrent_width (post tanh, pre mask)
    Matrix recurrent_mask;
    Matrix logits;
    CtcPosteriors posteriors;
};

ForwardTrace forward_traced(const AcousticModel& model, const Matrix& features,
                            const std::optional<DropoutSpec>& dropout);

inline CtcPosteriors forward(const AcousticModel& model, const Matrix& features,
                             const std::optional<DropoutSpec>& dropout = std::nullopt) {
    return forward_traced(model, features, dropout).posteriors;
}

struct BackwardResult {
    std::optional<Parameters> params;
    std::optional<Matrix> features;  // d/d log-mel features
};

BackwardResult backward(const AcousticModel& model, const ForwardTrace& trace,
                        const Matrix& grad_logits, bool want_params, bool want_features);

/// Featurise + forward + greedy decode.
Transcript transcribe(const AcousticModel& model, const Waveform& x,
                      const std::optional<DropoutSpec>& dropout = std::nullopt);

/// I dropout realizations of one input; realization i uses seed ^ i.
struct RealizationSet {
    std::vector<Transcript> transcripts;
    std::vector<CtcPosteriors> posteriors;  // filled only when requested
    double rate = 0.0;
    std::uint64_t seed = 0;
    [[nodiscard]] int size() const { return static_cast<int>(transcripts.size()); }
};

RealizationSet realize(const AcousticModel& model, const Waveform& x, double rate, int count, std::uint64_t seed,
                       DropoutScope scope = DropoutScope::dense_only, bool keep_posteriors = false);

void save_model(const AcousticModel& model, const std::filesystem::path& path);
AcousticModel load_model(const std::filesystem::path& path);

}  // namespace dropdef

#endif
