#ifndef DROPDEF_DETECTOR_HPP
#define DROPDEF_DETECTOR_HPP

#include "dropdef/uncertainty.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace dropdef {

enum class Label { original = 0, adversarial = 1 };

/// One defended input. Adversarial ids are "<original id>@<attack>".
struct LabeledFeature {
    std::string sample_id;
    Label label = Label::original;
    FeatureVector features;
    bool attack_succeeded = true;  // adversarial only; failed forgeries are filtered by default

    [[nodiscard]] std::string original_id() const;
    [[nodiscard]] std::string attack() const;  // "original" for clean inputs
};

std::string adversarial_id(const std::string& original, const std::string& attack);

/// Feature CSV: sample_id,label,m1,m2,m3,m4,u2,entropy,h0..h19 (entropy and
/// histogram empty in probability mode).
void write_features_csv(std::ostream& out, const std::vector<LabeledFeature>& rows);
std::vector<LabeledFeature> read_features_csv(std::istream& in);

/// 70/30 split by original sample; an original and all its attacked versions
/// land on the same side. Train gets floor(0.7 * originals) groups.
std::pair<std::vector<LabeledFeature>, std::vector<LabeledFeature>>
split_70_30(const std::vector<LabeledFeature>& samples, std::uint64_t seed);

enum class ClassifierKind { stump, svm4, svmf, tree };

std::string_view to_string(ClassifierKind kind);           // ds, svm4, svmf, tree
ClassifierKind parse_classifier(std::string_view name);   // throws std::invalid_argument

/// Inputs a classifier sees: u2 for the stump, m1..m4 for svm4 and the tree,
/// the normalised histogram for svmf.
std::vector<double> classifier_inputs(const FeatureVector& f, ClassifierKind kind);

struct StumpModel {
    double threshold = 0.0;
    double polarity = 1.0;  // +1: larger u2 means adversarial
};

struct LinearSvmModel {
    Vector weights;
    double bias = 0.0;
    Vector mean;
    Vector scale;  // per-feature standard deviation (1 for constant features)
    double c = 1.0;
};

struct TreeNode {
    int feature = -1;  // -1 for leaves
    double threshold = 0.0;  // x[feature] <= threshold goes left
    int left = -1;
    int right = -1;
    double p_adversarial = 0.0;
    int samples = 0;
    int depth = 0;
};

struct TreeModel {
    std::vector<TreeNode> nodes;  // nodes[0] is the root
    int max_depth = 4;

    [[nodiscard]] int depth() const;
    [[nodiscard]] const TreeNode& leaf(const std::vector<double>& x) const;
};

struct SvmOptions {
    double c = 1.0;
    double tolerance = 1e-6;
    int max_iterations = 1000000;
};

StumpModel train_stump(const std::vector<double>& u2, const std::vector<Label>& labels);

/// Minimises 0.5 |w|^2 + c * mean(hinge) on standardised inputs (SMO on the dual).
LinearSvmModel train_svm(const std::vector<std::vector<double>>& x, const std::vector<Label>& labels,
                         const SvmOptions& options = {});

/// Primal objective of a trained SVM on raw inputs.
double svm_objective(const LinearSvmModel& model, const std::vector<std::vector<double>>& x,
                     const std::vector<Label>& labels);

TreeModel train_tree(const std::vector<std::vector<double>>& x, const std::vector<Label>& labels, int max_depth = 4);

double score(const StumpModel& m, double u2);
double score(const LinearSvmModel& m, const std::vector<double>& x);
double score(const TreeModel& m, const std::vector<double>& x);

struct Detector {
    ClassifierKind kind = ClassifierKind::stump;
    FeatureMode mode = FeatureMode::character;
    std::variant<StumpModel, LinearSvmModel, TreeModel> model;

    /// Larger means more likely adversarial.
    [[nodiscard]] double score(const FeatureVector& f) const;
    [[nodiscard]] Label predict(const FeatureVector& f) const;
};

/// Throws std::invalid_argument for one-class data or svmf in probability mode.
Detector train_detector(ClassifierKind kind, FeatureMode mode, const std::vector<LabeledFeature>& train,
                        const SvmOptions& svm = {}, int tree_depth = 4);

void save_detector(const Detector& d, const std::filesystem::path& path);
Detector load_detector(const std::filesystem::path& path);

/// Probability that a random adversarial score exceeds a random original one, ties count half.
double auc(const std::vector<double>& scores, const std::vector<Label>& labels);

struct EvalReport {
    double accuracy = 0.0;  // percent
    double auc = 0.5;
    int true_positive = 0;
    int false_positive = 0;
    int true_negative = 0;
    int false_negative = 0;

    [[nodiscard]] int total() const { return true_positive + false_positive + true_negative + false_negative; }
};

EvalReport evaluate(const Detector& d, const std::vector<LabeledFeature>& test);

/// Originals plus adversarial samples of one attack; failed forgeries are
/// dropped unless `include_failed`.
std::vector<LabeledFeature> select_attack(const std::vector<LabeledFeature>& samples, const std::string& attack,
                                          bool include_failed = false);

}  // namespace dropdef

#endif
