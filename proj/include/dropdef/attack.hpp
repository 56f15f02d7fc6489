#ifndef DROPDEF_ATTACK_HPP
#define DROPDEF_ATTACK_HPP

#include "dropdef/denoise.hpp"
#include "dropdef/masking.hpp"
#include "dropdef/model.hpp"

#include <cstdint>
#include <optional>
#include <string_view>

namespace dropdef {

enum class AttackType { cw, dr, nrr, ia };

std::string_view to_string(AttackType type);
AttackType parse_attack_type(std::string_view name);  // throws std::invalid_argument

/// Learning rates are in float sample units (full scale = 1).
struct AttackConfig {
    Transcript target = "ok";
    int max_iterations = 1000;
    std::uint64_t seed = 1;

    // Distortion bound dB(delta) <= dB(x) - tau, widened by tau_step_db after each success.
    double tau_initial_db = 10.0;
    double tau_step_db = 2.0;

    double learning_rate = 2e-3;  // cw, dr, nrr

    // Auxiliary loss weight for dr and nrr.
    double beta = 1.0;

    // Dropout used by the dr loss term and by the success_dropout check.
    double dropout_rate = 0.05;
    DropoutScope dropout_scope = DropoutScope::dense_only;
    bool fresh_dropout_mask = true;  // false: one fixed mask for the whole run
    int success_realizations = 15;   // majority vote for success_dropout
    // dr: consecutive iterations (each with a fresh mask) that must reach the
    // target before the margin widens.
    int dropout_success_streak = 5;

    SpectralSubtractConfig denoiser{};

    // Imperceptible attack. Stage 1 runs at most max_iterations at the first rate,
    // stage 2 runs ia_refine_iterations at the second.
    double ia_stage1_learning_rate = 2e-3;
    double ia_stage2_learning_rate = 2e-3;
    int ia_refine_iterations = 3000;
    double ia_stage2_decay = 0.01;  // stage-2 rate decays geometrically to this fraction
    double alpha_initial = 0.05;
    double alpha_growth = 1.2;
    int alpha_interval = 20;
    MaskingConfig masking{};
    StftGeometry masking_stft{};
};

/// Throws std::invalid_argument on out-of-range fields.
void validate(const AttackConfig& config);

struct AttackResult {
    Vector delta;
    int iterations_used = 0;
    bool success_plain = false;     // x + delta decodes to the target, dropout off
    bool success_dropout = false;   // majority of fresh dropout realizations decode to the target
    bool success_denoised = false;  // denoise(x + delta) decodes to the target
    double final_db_gap = 0.0;      // dB(x) - dB(delta), +inf for delta = 0
    double tau_final_db = 0.0;      // margin the returned delta satisfies
    double masking_penalty_final = 0.0;
    double masking_penalty_stage1 = 0.0;  // ia only
};

/// Loss, gradient w.r.t. delta and the decodes seen at one iterate.
struct ObjectiveValue {
    double loss = 0.0;
    Vector grad;
    Transcript plain;
    std::optional<Transcript> dropout;   // dr
    std::optional<Transcript> denoised;  // nrr
    double masking_penalty = 0.0;        // ia, unweighted
};

/// The optimised objective at x + delta. `iteration` selects the dropout
/// mask of the dr term; `theta` is required for ia (alpha may be 0).
ObjectiveValue attack_objective(const AcousticModel& model, const Waveform& x, const Vector& delta,
                                const AttackConfig& config, AttackType type, std::uint64_t iteration,
                                double alpha = 0.0, const MaskingThreshold* theta = nullptr);

AttackResult cw_attack(const AcousticModel& model, const Waveform& x, const AttackConfig& config);
AttackResult dr_attack(const AcousticModel& model, const Waveform& x, const AttackConfig& config);
AttackResult nrr_attack(const AcousticModel& model, const Waveform& x, const AttackConfig& config);
AttackResult ia_attack(const AcousticModel& model, const Waveform& x, const AttackConfig& config);

AttackResult run_attack(AttackType type, const AcousticModel& model, const Waveform& x, const AttackConfig& config);

/// Recomputes the three success flags for a given perturbed waveform.
struct SuccessFlags {
    bool plain = false;
    bool dropout = false;
    bool denoised = false;
};
SuccessFlags evaluate_success(const AcousticModel& model, const Waveform& adversarial, const AttackConfig& config);

}  // namespace dropdef

#endif
