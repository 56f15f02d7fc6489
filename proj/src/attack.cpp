#include "dropdef/attack.hpp"
#include "dropdef/rng.hpp"
#include "dropdef/wav.hpp"

#include <cassert>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace dropdef {

namespace {

constexpr std::uint64_t dropout_stream = 0xD7;
constexpr std::uint64_t check_stream = 0xC4EC;

struct Adam {
    explicit Adam(Eigen::Index n) : m(Vector::Zero(n)), v(Vector::Zero(n)) {}

    void step(Vector& x, const Vector& g, double lr) {
        ++t;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g.cwiseAbs2();
        const double c1 = 1.0 - std::pow(b1, t);
        const double c2 = 1.0 - std::pow(b2, t);
        x.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
    }

    Vector m, v;
    int t = 0;
    double b1 = 0.9, b2 = 0.999, eps = 1e-8;
};

struct Term {
    double loss;
    Vector grad;  // d loss / d waveform fed to the network
    Transcript decode;
};

Term ctc_term(const AcousticModel& model, const FeatureTrace& ft, std::span<const int> labels,
              const std::optional<DropoutSpec>& dropout) {
    const ForwardTrace tr = forward_traced(model, ft.features, dropout);
    const CtcResult ctc = ctc_loss(tr.posteriors, labels);
    const BackwardResult b = backward(model, tr, ctc.grad_logits, false, true);
    return {ctc.loss, featurize_backward(ft, *b.features, model.frontend), greedy_decode(tr.posteriors, model.alphabet)};
}

Waveform perturbed(const Waveform& x, const Vector& delta) {
    return {x.samples + delta, x.sample_rate};
}

DropoutSpec attack_dropout(const AttackConfig& c, std::uint64_t iteration) {
    const std::uint64_t seed = c.fresh_dropout_mask ? mix_seed(c.seed ^ dropout_stream, iteration)
                                                    : mix_seed(c.seed ^ dropout_stream, 0);
    return {c.dropout_rate, seed, c.dropout_scope};
}

// Keeps |delta_i| strictly inside the amplitude bound so the dB check holds
// after rounding, and keeps x + delta within full scale.
void project(Vector& delta, const Vector& x, double bound) {
    const double b = bound * (1.0 - 1e-12);
    for (Eigen::Index i = 0; i < delta.size(); ++i) {
        double d = std::clamp(delta[i], -b, b);
        d = std::clamp(d, -1.0 - x[i], 1.0 - x[i]);
        delta[i] = d;
    }
}

double db_gap(const Waveform& x, const Vector& delta) {
    const double peak = delta.size() ? delta.cwiseAbs().maxCoeff() : 0.0;
    if (peak == 0.0) return std::numeric_limits<double>::infinity();
    return peak_db(x) - 20.0 * std::log10(peak);
}

bool target_reached(const ObjectiveValue& v, const AttackConfig& c) {
    if (v.plain != c.target) return false;
    if (c.beta > 0.0 && v.dropout && *v.dropout != c.target) return false;
    if (c.beta > 0.0 && v.denoised && *v.denoised != c.target) return false;
    return true;
}

// The 16-bit audio that will be written for x + delta must decode too, so
// the flags measured on disk agree with the ones seen during the search.
bool survives_quantization(const AcousticModel& model, const Waveform& x, const Vector& delta, const AttackConfig& c,
                           AttackType type, std::uint64_t iteration) {
    const Vector q = (x.samples + delta).unaryExpr([](double s) { return quantize_sample(s) / 32767.0; });
    const Waveform adv{q, x.sample_rate};
    if (transcribe(model, adv) != c.target) return false;
    if (c.beta > 0.0 && type == AttackType::dr && transcribe(model, adv, attack_dropout(c, iteration)) != c.target)
        return false;
    if (c.beta > 0.0 && type == AttackType::nrr && transcribe(model, denoise(adv, c.denoiser)) != c.target)
        return false;
    return true;
}

void check_input(const AcousticModel& model, const Waveform& x, const AttackConfig& config) {
    validate(config);
    if (x.sample_rate != model.frontend.sample_rate)
        throw std::invalid_argument("attack: waveform sample rate differs from the model frontend");
    if (!model.alphabet.contains(config.target))
        throw std::invalid_argument("attack: target uses symbols outside the model alphabet");
}

AttackResult finish(const AcousticModel& model, const Waveform& x, const AttackConfig& config, Vector delta,
                    int iterations, double tau) {
    AttackResult r;
    r.delta = std::move(delta);
    r.iterations_used = iterations;
    const SuccessFlags flags = evaluate_success(model, perturbed(x, r.delta), config);
    r.success_plain = flags.plain;
    r.success_dropout = flags.dropout;
    r.success_denoised = flags.denoised;
    r.final_db_gap = db_gap(x, r.delta);
    r.tau_final_db = tau;
    return r;
}

// Shared loop of the bounded attacks: minimise, widen the margin after
// every success, return the last successful delta.
AttackResult bounded_attack(const AcousticModel& model, const Waveform& x, const AttackConfig& config,
                            AttackType type) {
    check_input(model, x, config);
    const double ref_db = peak_db(x);
    double tau = config.tau_initial_db;
    double bound = amplitude_bound(ref_db, tau);

    Vector delta = Vector::Zero(x.size());
    Adam adam(x.size());
    std::optional<Vector> best;
    double best_tau = tau;
    const int streak_needed = type == AttackType::dr && config.beta > 0.0 ? config.dropout_success_streak : 1;
    int streak = 0;
    int it = 0;
    for (; it <= config.max_iterations; ++it) {
        const ObjectiveValue v = attack_objective(model, x, delta, config, type, static_cast<std::uint64_t>(it));
        if (!std::isfinite(v.loss) || !v.grad.allFinite())
            throw NumericalError("attack: non-finite loss or gradient at iteration " + std::to_string(it));
        const bool reached = target_reached(v, config) &&
                             survives_quantization(model, x, delta, config, type, static_cast<std::uint64_t>(it));
        streak = reached ? streak + 1 : 0;
        if (streak >= streak_needed) {
            streak = 0;
            best = delta;
            best_tau = tau;
            // Nothing left to shrink once the unperturbed input already decodes to the target.
            if (delta.isZero(0.0)) break;
            tau += config.tau_step_db;
            bound = amplitude_bound(ref_db, tau);
            project(delta, x.samples, bound);
        }
        if (it == config.max_iterations) break;
        adam.step(delta, v.grad, config.learning_rate);
        project(delta, x.samples, bound);
        assert(delta.cwiseAbs().maxCoeff() <= bound);
    }
    if (best) return finish(model, x, config, std::move(*best), it, best_tau);
    return finish(model, x, config, std::move(delta), it, tau);
}

}  // namespace

std::string_view to_string(AttackType type) {
    switch (type) {
        case AttackType::cw: return "cw";
        case AttackType::dr: return "dr";
        case AttackType::nrr: return "nrr";
        case AttackType::ia: return "ia";
    }
    return "?";
}

AttackType parse_attack_type(std::string_view name) {
    for (AttackType t : {AttackType::cw, AttackType::dr, AttackType::nrr, AttackType::ia})
        if (to_string(t) == name) return t;
    throw std::invalid_argument("unknown attack type '" + std::string(name) + "'");
}

void validate(const AttackConfig& c) {
    auto need = [](bool ok, const char* what) {
        if (!ok) throw std::invalid_argument(std::string("attack config: ") + what);
    };
    need(c.tau_initial_db >= 0.0 && c.tau_step_db >= 0.0, "tau must be non-negative");
    need(c.beta >= 0.0, "beta must be non-negative");
    need(c.alpha_initial >= 0.0 && c.alpha_growth >= 1.0, "alpha must be non-negative, growth >= 1");
    need(c.dropout_rate >= 0.0 && c.dropout_rate < 1.0, "dropout rate must lie in [0, 1)");
    need(c.max_iterations >= 0 && c.ia_refine_iterations >= 0, "iteration budgets must be non-negative");
    need(c.success_realizations >= 1 && c.dropout_success_streak >= 1, "success counts must be positive");
    need(c.alpha_interval >= 1, "alpha_interval must be positive");
    need(c.ia_stage2_decay > 0.0 && c.ia_stage2_decay <= 1.0, "ia_stage2_decay must lie in (0, 1]");
    need(c.learning_rate > 0.0 && c.ia_stage1_learning_rate > 0.0 && c.ia_stage2_learning_rate > 0.0,
         "learning rates must be positive");
}

ObjectiveValue attack_objective(const AcousticModel& model, const Waveform& x, const Vector& delta,
                                const AttackConfig& config, AttackType type, std::uint64_t iteration, double alpha,
                                const MaskingThreshold* theta) {
    if (delta.size() != x.size()) throw ShapeError("attack_objective: delta length differs from x");
    const auto labels = model.alphabet.encode(config.target);
    const Waveform adv = perturbed(x, delta);
    const FeatureTrace ft = featurize_traced(adv, model.frontend);

    Term plain = ctc_term(model, ft, labels, std::nullopt);
    ObjectiveValue out;
    out.loss = plain.loss;
    out.grad = std::move(plain.grad);
    out.plain = std::move(plain.decode);

    switch (type) {
        case AttackType::cw: break;
        case AttackType::dr: {
            Term t = ctc_term(model, ft, labels, attack_dropout(config, iteration));
            out.loss += config.beta * t.loss;
            out.grad += config.beta * t.grad;
            out.dropout = std::move(t.decode);
            break;
        }
        case AttackType::nrr: {
            // The noise profile is re-estimated from x + delta, so the gradient
            // also flows through the estimate.
            const Waveform clean = denoise(adv, config.denoiser);
            Term t = ctc_term(model, featurize_traced(clean, model.frontend), labels, std::nullopt);
            out.loss += config.beta * t.loss;
            out.grad += config.beta * denoise_backward(adv, t.grad, config.denoiser);
            out.denoised = std::move(t.decode);
            break;
        }
        case AttackType::ia: {
            if (!theta) throw std::invalid_argument("attack_objective: ia needs a masking threshold");
            const Waveform d{delta, x.sample_rate};
            const PsdEstimate p = psd(d, config.masking_stft, config.masking);
            out.masking_penalty = masking_penalty(p, *theta);
            if (alpha > 0.0) {
                out.loss += alpha * out.masking_penalty;
                out.grad += alpha * psd_backward(d, masking_penalty_grad(p, *theta), config.masking_stft, config.masking);
            }
            break;
        }
    }
    return out;
}

AttackResult cw_attack(const AcousticModel& model, const Waveform& x, const AttackConfig& config) {
    return bounded_attack(model, x, config, AttackType::cw);
}

AttackResult dr_attack(const AcousticModel& model, const Waveform& x, const AttackConfig& config) {
    return bounded_attack(model, x, config, AttackType::dr);
}

AttackResult nrr_attack(const AcousticModel& model, const Waveform& x, const AttackConfig& config) {
    return bounded_attack(model, x, config, AttackType::nrr);
}

AttackResult ia_attack(const AcousticModel& model, const Waveform& x, const AttackConfig& config) {
    check_input(model, x, config);
    const double tau = config.tau_initial_db;
    const double bound = amplitude_bound(peak_db(x), tau);
    const MaskingThreshold theta = masking_threshold(x, config.masking_stft, config.masking);

    Vector delta = Vector::Zero(x.size());
    int it = 0;
    bool reached = false;
    {
        Adam adam(x.size());
        for (; it <= config.max_iterations; ++it) {
            const ObjectiveValue v = attack_objective(model, x, delta, config, AttackType::ia, it, 0.0, &theta);
            if (!std::isfinite(v.loss)) throw NumericalError("ia_attack: non-finite loss in stage 1");
            if (v.plain == config.target && survives_quantization(model, x, delta, config, AttackType::ia, 0)) {
                reached = true;
                break;
            }
            if (it == config.max_iterations) break;
            adam.step(delta, v.grad, config.ia_stage1_learning_rate);
            project(delta, x.samples, bound);
        }
    }
    const double stage1_penalty = masking_penalty(psd(Waveform{delta, x.sample_rate}, config.masking_stft, config.masking), theta);
    if (!reached) {
        AttackResult r = finish(model, x, config, std::move(delta), it, tau);
        r.masking_penalty_final = r.masking_penalty_stage1 = stage1_penalty;
        return r;
    }

    // Stage 2: trade loudness against the masking threshold, keeping the
    // quietest iterate that still decodes to the target.
    Vector best = delta;
    double best_penalty = stage1_penalty;
    double alpha = config.alpha_initial;
    Adam adam(x.size());
    const int stage1_iterations = it;
    for (int k = 0; k < config.ia_refine_iterations; ++k) {
        const ObjectiveValue v = attack_objective(model, x, delta, config, AttackType::ia,
                                                  static_cast<std::uint64_t>(stage1_iterations + k), alpha, &theta);
        if (!std::isfinite(v.loss) || !v.grad.allFinite()) throw NumericalError("ia_attack: non-finite loss in stage 2");
        const bool ok = v.plain == config.target;
        if (ok && v.masking_penalty < best_penalty && survives_quantization(model, x, delta, config, AttackType::ia, 0)) {
            best = delta;
            best_penalty = v.masking_penalty;
        }
        if ((k + 1) % config.alpha_interval == 0) alpha = ok ? alpha * config.alpha_growth : alpha / config.alpha_growth;
        const double progress = static_cast<double>(k) / static_cast<double>(config.ia_refine_iterations);
        adam.step(delta, v.grad, config.ia_stage2_learning_rate * std::pow(config.ia_stage2_decay, progress));
        project(delta, x.samples, bound);
        ++it;
    }
    // The final iterate gets a last check so stage 2 never ends unevaluated.
    const ObjectiveValue last = attack_objective(model, x, delta, config, AttackType::ia, 0, 0.0, &theta);
    if (last.plain == config.target && last.masking_penalty < best_penalty &&
        survives_quantization(model, x, delta, config, AttackType::ia, 0)) {
        best = delta;
        best_penalty = last.masking_penalty;
    }

    AttackResult r = finish(model, x, config, std::move(best), it, tau);
    r.masking_penalty_stage1 = stage1_penalty;
    r.masking_penalty_final = best_penalty;
    return r;
}

AttackResult run_attack(AttackType type, const AcousticModel& model, const Waveform& x, const AttackConfig& config) {
    switch (type) {
        case AttackType::cw: return cw_attack(model, x, config);
        case AttackType::dr: return dr_attack(model, x, config);
        case AttackType::nrr: return nrr_attack(model, x, config);
        case AttackType::ia: return ia_attack(model, x, config);
    }
    throw std::invalid_argument("run_attack: unknown type");
}

SuccessFlags evaluate_success(const AcousticModel& model, const Waveform& adversarial, const AttackConfig& config) {
    SuccessFlags f;
    const Matrix features = featurize(adversarial, model.frontend);
    f.plain = greedy_decode(forward(model, features), model.alphabet) == config.target;
    int hits = 0;
    for (int r = 0; r < config.success_realizations; ++r) {
        const DropoutSpec spec{config.dropout_rate, mix_seed(config.seed ^ check_stream, static_cast<std::uint64_t>(r)),
                               config.dropout_scope};
        if (greedy_decode(forward(model, features, spec), model.alphabet) == config.target) ++hits;
    }
    f.dropout = 2 * hits > config.success_realizations;
    f.denoised = transcribe(model, denoise(adversarial, config.denoiser)) == config.target;
    return f;
}

}  // namespace dropdef
