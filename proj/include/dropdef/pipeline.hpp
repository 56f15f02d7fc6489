#ifndef DROPDEF_PIPELINE_HPP
#define DROPDEF_PIPELINE_HPP

#include "dropdef/attack.hpp"
#include "dropdef/corpus.hpp"
#include "dropdef/detector.hpp"
#include "dropdef/train.hpp"

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace dropdef {

struct DefenseConfig {
    double rate = 0.1;
    int realizations = 50;
    DropoutScope scope = DropoutScope::dense_only;
    MomentKind moments = MomentKind::raw;
};

struct DetectorConfig {
    std::string train_attack = "dr";
    SvmOptions svm{};
    int tree_depth = 4;
    bool include_failed = false;
};

/// Everything one experiment directory is built from. Stage seeds are all
/// derived from `seed`.
struct ExperimentConfig {
    std::uint64_t seed = 1;

    SynthConfig synth{};
    int train_utterances = 100;
    int eval_utterances = 20;

    ModelGeometry geometry{};
    double train_dropout_rate = 0.05;
    TrainConfig training{};

    AttackConfig attack{};
    DefenseConfig defense{};
    DetectorConfig detector{};
    std::vector<AttackType> attacks{AttackType::cw, AttackType::dr, AttackType::nrr, AttackType::ia};
};

/// Canonical JSON text (sorted keys); equal configs give equal text.
std::string dump_config(const ExperimentConfig& config);

/// Parses a JSON document layered over the defaults, then `a.b=value`
/// overrides. Unknown keys and invalid values throw std::invalid_argument.
ExperimentConfig parse_config(const std::string& json_text, const std::vector<std::string>& overrides = {});

ExperimentConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

/// 64-bit FNV-1a, printed as 16 hex digits.
std::string fnv1a_hex(std::string_view text);

enum class Stage { corpus, asr, attack, defend, detect, report };

/// Hash of the config sections a stage's output depends on.
std::string stage_hash(const ExperimentConfig& config, Stage stage);

/// An upstream artifact a stage needs does not exist.
struct MissingArtifact : std::runtime_error {
    MissingArtifact(const std::filesystem::path& path, const std::string& producer)
        : std::runtime_error("missing " + path.string() + "; run `" + producer + "` first") {}
};

/// Experiment directory layout.
struct Layout {
    std::filesystem::path root;

    [[nodiscard]] std::filesystem::path corpus_manifest(const std::string& split) const;
    [[nodiscard]] std::filesystem::path model() const;
    [[nodiscard]] std::filesystem::path attack_dir(AttackType type) const;
    [[nodiscard]] std::filesystem::path attack_manifest(AttackType type) const;
    [[nodiscard]] std::filesystem::path features(FeatureMode mode, const std::string& source) const;
    [[nodiscard]] std::filesystem::path detector(FeatureMode mode, ClassifierKind kind) const;
    [[nodiscard]] std::filesystem::path detector_eval(FeatureMode mode, ClassifierKind kind) const;
    [[nodiscard]] std::filesystem::path report() const;
    [[nodiscard]] std::filesystem::path histogram() const;
};

std::filesystem::path provenance_path(const std::filesystem::path& artifact);

struct Experiment {
    Layout layout;
    ExperimentConfig config;
    bool force = false;
    std::ostream* log = nullptr;  // progress and warnings; null silences them
};

enum class StageStatus { built, skipped };

/// Attack manifest row plus, when the attack actually ran, the in-memory result.
struct AttackRecord {
    std::string id;
    std::filesystem::path wav_in;
    std::filesystem::path wav_out;
    AttackType type = AttackType::cw;
    SuccessFlags flags;  // measured on the written 16-bit audio
    double db_gap = 0.0;
    int iterations = 0;
    std::optional<AttackResult> result;
};

std::vector<AttackRecord> read_attack_manifest(const std::filesystem::path& path);

StageStatus run_synth_corpus(const Experiment& e);
StageStatus run_train_asr(const Experiment& e);
StageStatus run_attack_stage(const Experiment& e, AttackType type, std::vector<AttackRecord>* records = nullptr);
StageStatus run_defend(const Experiment& e);
StageStatus run_detect(const Experiment& e, ClassifierKind kind, FeatureMode mode);
StageStatus run_report(const Experiment& e);
StageStatus run_hist(const Experiment& e);

/// Features of one waveform under the configured defense; seeded by sample id.
std::pair<FeatureVector, FeatureVector> defend_waveform(const AcousticModel& model, const Waveform& x,
                                                        const std::string& sample_id, const ExperimentConfig& config);

}  // namespace dropdef

#endif
