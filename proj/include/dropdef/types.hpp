#ifndef DROPDEF_TYPES_HPP
#define DROPDEF_TYPES_HPP

#include <Eigen/Dense>

#include <complex>
#include <stdexcept>
#include <string>

namespace dropdef {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using ComplexMatrix = Eigen::Matrix<std::complex<double>, Eigen::Dynamic, Eigen::Dynamic>;
using ComplexVector = Eigen::Matrix<std::complex<double>, Eigen::Dynamic, 1>;

/// Mono audio at a fixed sample rate. Samples are nominally in [-1, 1];
/// intermediate results (x + delta during an attack) may exceed that range
/// and are only saturated when written to disk.
template <typename Scalar>
struct BasicWaveform {
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> samples;
    int sample_rate = 16000;

    BasicWaveform() = default;
    BasicWaveform(Eigen::Matrix<Scalar, Eigen::Dynamic, 1> s, int rate)
        : samples(std::move(s)), sample_rate(rate) {}

    [[nodiscard]] Eigen::Index size() const { return samples.size(); }
    [[nodiscard]] bool empty() const { return samples.size() == 0; }
    [[nodiscard]] double duration() const {
        return static_cast<double>(samples.size()) / sample_rate;
    }
};

using Waveform = BasicWaveform<double>;

// Error taxonomy. Everything derives from the standard hierarchy so callers
// that only care about "something failed" can catch std::exception.

struct InputTooShort : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace dropdef

#endif
