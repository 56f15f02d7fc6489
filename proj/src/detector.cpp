#include "dropdef/detector.hpp"
#include "dropdef/rng.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace dropdef {

namespace {

constexpr char id_separator = '@';

void require_both_classes(const std::vector<Label>& labels, const char* who) {
    const bool any_orig = std::find(labels.begin(), labels.end(), Label::original) != labels.end();
    const bool any_adv = std::find(labels.begin(), labels.end(), Label::adversarial) != labels.end();
    if (!any_orig || !any_adv) throw std::invalid_argument(std::string(who) + ": training data must contain both classes");
}

double sign_of(Label l) { return l == Label::adversarial ? 1.0 : -1.0; }

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

std::string format_double(double v) {
    std::ostringstream s;
    s << std::setprecision(17) << v;
    return s.str();
}

double gini(double adversarial, double total) {
    if (total == 0.0) return 0.0;
    const double p = adversarial / total;
    return 2.0 * p * (1.0 - p);
}

int build_tree(TreeModel& tree, const std::vector<std::vector<double>>& x, const std::vector<Label>& y,
               const std::vector<std::size_t>& idx, int depth) {
    TreeNode node;
    node.depth = depth;
    node.samples = static_cast<int>(idx.size());
    double adv = 0.0;
    for (std::size_t i : idx) adv += y[i] == Label::adversarial ? 1.0 : 0.0;
    const double n = static_cast<double>(idx.size());
    node.p_adversarial = n > 0.0 ? adv / n : 0.0;
    const int id = static_cast<int>(tree.nodes.size());
    tree.nodes.push_back(node);

    const double parent = gini(adv, n);
    if (depth >= tree.max_depth || parent == 0.0) return id;

    // Exhaustive search; ties keep the lowest feature, then the smallest threshold.
    int best_feature = -1;
    double best_threshold = 0.0;
    double best_gain = 1e-12;
    const std::size_t features = x[idx.front()].size();
    for (std::size_t f = 0; f < features; ++f) {
        std::vector<std::pair<double, Label>> col;
        col.reserve(idx.size());
        for (std::size_t i : idx) col.emplace_back(x[i][f], y[i]);
        std::sort(col.begin(), col.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
        double left_n = 0.0, left_adv = 0.0;
        for (std::size_t k = 0; k + 1 < col.size(); ++k) {
            left_n += 1.0;
            left_adv += col[k].second == Label::adversarial ? 1.0 : 0.0;
            if (col[k].first == col[k + 1].first) continue;
            const double right_n = n - left_n;
            const double weighted = (left_n * gini(left_adv, left_n) + right_n * gini(adv - left_adv, right_n)) / n;
            const double gain = parent - weighted;
            if (gain > best_gain + 1e-12) {
                best_gain = gain;
                best_feature = static_cast<int>(f);
                best_threshold = 0.5 * (col[k].first + col[k + 1].first);
            }
        }
    }
    if (best_feature < 0) return id;

    std::vector<std::size_t> left, right;
    for (std::size_t i : idx) (x[i][static_cast<std::size_t>(best_feature)] <= best_threshold ? left : right).push_back(i);
    const int l = build_tree(tree, x, y, left, depth + 1);
    const int r = build_tree(tree, x, y, right, depth + 1);
    tree.nodes[static_cast<std::size_t>(id)].feature = best_feature;
    tree.nodes[static_cast<std::size_t>(id)].threshold = best_threshold;
    tree.nodes[static_cast<std::size_t>(id)].left = l;
    tree.nodes[static_cast<std::size_t>(id)].right = r;
    return id;
}

Vector to_vector(const std::vector<double>& v) {
    return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace

// ---------------------------------------------------------------- samples

std::string LabeledFeature::original_id() const {
    const auto at = sample_id.find(id_separator);
    return at == std::string::npos ? sample_id : sample_id.substr(0, at);
}

std::string LabeledFeature::attack() const {
    const auto at = sample_id.find(id_separator);
    return at == std::string::npos ? "original" : sample_id.substr(at + 1);
}

std::string adversarial_id(const std::string& original, const std::string& attack) {
    return original + id_separator + attack;
}

void write_features_csv(std::ostream& out, const std::vector<LabeledFeature>& rows) {
    out << "sample_id,label,m1,m2,m3,m4,u2,entropy";
    for (int z = 0; z < histogram_bins; ++z) out << ",h" << z;
    out << '\n';
    for (const auto& r : rows) {
        out << r.sample_id << ',' << (r.label == Label::adversarial ? "adversarial" : "original");
        for (double m : r.features.m) out << ',' << format_double(m);
        out << ',' << format_double(r.features.u2) << ',';
        if (r.features.entropy) out << format_double(*r.features.entropy);
        for (int z = 0; z < histogram_bins; ++z) {
            out << ',';
            if (r.features.histogram) out << format_double((*r.features.histogram)[static_cast<std::size_t>(z)]);
        }
        out << '\n';
    }
}

std::vector<LabeledFeature> read_features_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line.rfind("sample_id,label,m1", 0) != 0)
        throw FormatError("feature CSV: missing or unexpected header");
    std::vector<LabeledFeature> rows;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto cells = split_csv_line(line);
        if (cells.size() != 8 + histogram_bins)
            throw FormatError("feature CSV line " + std::to_string(line_no) + ": expected " +
                              std::to_string(8 + histogram_bins) + " fields");
        LabeledFeature r;
        r.sample_id = cells[0];
        if (cells[1] == "adversarial") r.label = Label::adversarial;
        else if (cells[1] == "original") r.label = Label::original;
        else throw FormatError("feature CSV line " + std::to_string(line_no) + ": bad label '" + cells[1] + "'");
        try {
            for (int k = 0; k < 4; ++k) r.features.m[static_cast<std::size_t>(k)] = std::stod(cells[static_cast<std::size_t>(2 + k)]);
            r.features.u2 = std::stod(cells[6]);
            if (!cells[7].empty()) r.features.entropy = std::stod(cells[7]);
            if (!cells[8].empty()) {
                std::array<double, histogram_bins> h{};
                for (int z = 0; z < histogram_bins; ++z) h[static_cast<std::size_t>(z)] = std::stod(cells[static_cast<std::size_t>(8 + z)]);
                r.features.histogram = h;
            }
        } catch (const std::logic_error&) {
            throw FormatError("feature CSV line " + std::to_string(line_no) + ": non-numeric field");
        }
        rows.push_back(std::move(r));
    }
    return rows;
}

std::pair<std::vector<LabeledFeature>, std::vector<LabeledFeature>>
split_70_30(const std::vector<LabeledFeature>& samples, std::uint64_t seed) {
    if (samples.size() < 10) throw std::invalid_argument("split_70_30: need at least 10 samples");
    std::vector<std::string> groups;
    for (const auto& s : samples) groups.push_back(s.original_id());
    std::sort(groups.begin(), groups.end());
    groups.erase(std::unique(groups.begin(), groups.end()), groups.end());
    Rng rng(seed, 0x5B1);
    rng.shuffle(groups.begin(), groups.end());
    const std::size_t n_train = groups.size() * 7 / 10;
    std::map<std::string, bool> in_train;
    for (std::size_t i = 0; i < groups.size(); ++i) in_train[groups[i]] = i < n_train;

    std::pair<std::vector<LabeledFeature>, std::vector<LabeledFeature>> out;
    for (const auto& s : samples) (in_train[s.original_id()] ? out.first : out.second).push_back(s);
    return out;
}

// ---------------------------------------------------------------- classifiers

std::string_view to_string(ClassifierKind kind) {
    switch (kind) {
        case ClassifierKind::stump: return "ds";
        case ClassifierKind::svm4: return "svm4";
        case ClassifierKind::svmf: return "svmf";
        case ClassifierKind::tree: return "tree";
    }
    return "?";
}

ClassifierKind parse_classifier(std::string_view name) {
    for (auto k : {ClassifierKind::stump, ClassifierKind::svm4, ClassifierKind::svmf, ClassifierKind::tree})
        if (to_string(k) == name) return k;
    throw std::invalid_argument("unknown classifier '" + std::string(name) + "' (expected ds, svm4, svmf or tree)");
}

std::vector<double> classifier_inputs(const FeatureVector& f, ClassifierKind kind) {
    switch (kind) {
        case ClassifierKind::stump: return {f.u2};
        case ClassifierKind::svm4:
        case ClassifierKind::tree: return f.moments4();
        case ClassifierKind::svmf:
            if (!f.histogram) throw std::invalid_argument("svmf needs the character-mode histogram");
            return {f.histogram->begin(), f.histogram->end()};
    }
    return {};
}

StumpModel train_stump(const std::vector<double>& u2, const std::vector<Label>& labels) {
    if (u2.size() != labels.size()) throw ShapeError("train_stump: value and label counts differ");
    require_both_classes(labels, "train_stump");
    std::vector<double> sorted = u2;
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    std::vector<double> candidates{sorted.front() - 1.0};
    for (std::size_t i = 0; i + 1 < sorted.size(); ++i) candidates.push_back(0.5 * (sorted[i] + sorted[i + 1]));
    candidates.push_back(sorted.back() + 1.0);

    StumpModel best;
    int best_correct = -1;
    for (double t : candidates)
        for (double polarity : {1.0, -1.0}) {
            int correct = 0;
            for (std::size_t i = 0; i < u2.size(); ++i) {
                const bool adv = polarity * (u2[i] - t) > 0.0;
                correct += adv == (labels[i] == Label::adversarial);
            }
            if (correct > best_correct) {
                best_correct = correct;
                best = {t, polarity};
            }
        }
    return best;
}

LinearSvmModel train_svm(const std::vector<std::vector<double>>& x, const std::vector<Label>& labels,
                         const SvmOptions& options) {
    if (x.size() != labels.size() || x.empty()) throw ShapeError("train_svm: need one label per non-empty row");
    require_both_classes(labels, "train_svm");
    if (!(options.c > 0.0)) throw std::invalid_argument("train_svm: c must be positive");
    const auto n = static_cast<Eigen::Index>(x.size());
    const auto d = static_cast<Eigen::Index>(x.front().size());

    Matrix raw(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (static_cast<Eigen::Index>(x[static_cast<std::size_t>(i)].size()) != d) throw ShapeError("train_svm: ragged rows");
        raw.row(i) = to_vector(x[static_cast<std::size_t>(i)]).transpose();
    }
    LinearSvmModel m;
    m.c = options.c;
    m.mean = raw.colwise().mean().transpose();
    const Matrix centred = raw.rowwise() - m.mean.transpose();
    m.scale = (centred.cwiseAbs2().colwise().mean().transpose()).cwiseSqrt();
    for (Eigen::Index k = 0; k < d; ++k)
        if (!(m.scale[k] > 1e-12)) m.scale[k] = 1.0;
    const Matrix z = centred * m.scale.cwiseInverse().asDiagonal();

    Vector y(n);
    for (Eigen::Index i = 0; i < n; ++i) y[i] = sign_of(labels[static_cast<std::size_t>(i)]);
    const Matrix q = (y.asDiagonal() * (z * z.transpose())) * y.asDiagonal();
    const double upper = options.c / static_cast<double>(n);  // mean hinge: per-sample box c / n

    Vector alpha = Vector::Zero(n);
    Vector grad = -Vector::Ones(n);
    auto in_up = [&](Eigen::Index t) { return (y[t] > 0 && alpha[t] < upper) || (y[t] < 0 && alpha[t] > 0); };
    auto in_low = [&](Eigen::Index t) { return (y[t] < 0 && alpha[t] < upper) || (y[t] > 0 && alpha[t] > 0); };

    for (int iter = 0; iter < options.max_iterations; ++iter) {
        // Maximal violating pair.
        Eigen::Index i = -1, j = -1;
        double g_max = -std::numeric_limits<double>::infinity();
        double g_min = std::numeric_limits<double>::infinity();
        for (Eigen::Index t = 0; t < n; ++t) {
            const double v = -y[t] * grad[t];
            if (in_up(t) && v > g_max) g_max = v, i = t;
            if (in_low(t) && v < g_min) g_min = v, j = t;
        }
        if (i < 0 || j < 0 || g_max - g_min < options.tolerance) break;

        const double ai = alpha[i], aj = alpha[j];
        if (y[i] != y[j]) {
            double quad = q(i, i) + q(j, j) + 2.0 * q(i, j);
            if (quad <= 0.0) quad = 1e-12;
            const double delta = (-grad[i] - grad[j]) / quad;
            const double diff = ai - aj;
            alpha[i] += delta;
            alpha[j] += delta;
            if (diff > 0.0) {
                if (alpha[j] < 0.0) alpha[j] = 0.0, alpha[i] = diff;
            } else if (alpha[i] < 0.0) {
                alpha[i] = 0.0, alpha[j] = -diff;
            }
            if (diff > 0.0) {
                if (alpha[i] > upper) alpha[i] = upper, alpha[j] = upper - diff;
            } else if (alpha[j] > upper) {
                alpha[j] = upper, alpha[i] = upper + diff;
            }
        } else {
            double quad = q(i, i) + q(j, j) - 2.0 * q(i, j);
            if (quad <= 0.0) quad = 1e-12;
            const double delta = (grad[i] - grad[j]) / quad;
            const double sum = ai + aj;
            alpha[i] -= delta;
            alpha[j] += delta;
            if (sum > upper) {
                if (alpha[i] > upper) alpha[i] = upper, alpha[j] = sum - upper;
                if (alpha[j] > upper) alpha[j] = upper, alpha[i] = sum - upper;
            } else {
                if (alpha[j] < 0.0) alpha[j] = 0.0, alpha[i] = sum;
                if (alpha[i] < 0.0) alpha[i] = 0.0, alpha[j] = sum;
            }
        }
        grad += q.col(i) * (alpha[i] - ai) + q.col(j) * (alpha[j] - aj);
    }

    // Offset from the free support vectors, or the midpoint of the feasible interval.
    double ub = std::numeric_limits<double>::infinity(), lb = -ub, free_sum = 0.0;
    int free_count = 0;
    for (Eigen::Index t = 0; t < n; ++t) {
        const double yg = y[t] * grad[t];
        if (alpha[t] >= upper) {
            if (y[t] < 0) ub = std::min(ub, yg);
            else lb = std::max(lb, yg);
        } else if (alpha[t] <= 0.0) {
            if (y[t] > 0) ub = std::min(ub, yg);
            else lb = std::max(lb, yg);
        } else {
            ++free_count;
            free_sum += yg;
        }
    }
    const double rho = free_count > 0 ? free_sum / free_count : 0.5 * (ub + lb);
    const Vector w = z.transpose() * alpha.cwiseProduct(y);
    m.weights = w;
    m.bias = -rho;
    return m;
}

double svm_objective(const LinearSvmModel& model, const std::vector<std::vector<double>>& x,
                     const std::vector<Label>& labels) {
    double hinge = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) hinge += std::max(0.0, 1.0 - sign_of(labels[i]) * score(model, x[i]));
    return 0.5 * model.weights.squaredNorm() + model.c * hinge / static_cast<double>(x.size());
}

int TreeModel::depth() const {
    int d = 0;
    for (const auto& n : nodes) d = std::max(d, n.depth);
    return d;
}

const TreeNode& TreeModel::leaf(const std::vector<double>& x) const {
    if (nodes.empty()) throw std::logic_error("TreeModel: empty tree");
    const TreeNode* n = &nodes.front();
    while (n->feature >= 0) n = &nodes[static_cast<std::size_t>(x.at(static_cast<std::size_t>(n->feature)) <= n->threshold ? n->left : n->right)];
    return *n;
}

TreeModel train_tree(const std::vector<std::vector<double>>& x, const std::vector<Label>& labels, int max_depth) {
    if (x.size() != labels.size() || x.empty()) throw ShapeError("train_tree: need one label per non-empty row");
    if (max_depth < 0) throw std::invalid_argument("train_tree: negative depth");
    require_both_classes(labels, "train_tree");
    TreeModel t;
    t.max_depth = max_depth;
    std::vector<std::size_t> idx(x.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    build_tree(t, x, labels, idx, 0);
    return t;
}

double score(const StumpModel& m, double u2) { return m.polarity * (u2 - m.threshold); }

double score(const LinearSvmModel& m, const std::vector<double>& x) {
    const Vector v = to_vector(x);
    if (v.size() != m.weights.size()) throw ShapeError("svm score: feature count mismatch");
    return m.weights.dot((v - m.mean).cwiseQuotient(m.scale)) + m.bias;
}

double score(const TreeModel& m, const std::vector<double>& x) { return m.leaf(x).p_adversarial; }

double Detector::score(const FeatureVector& f) const {
    const auto in = classifier_inputs(f, kind);
    return std::visit(
        [&](const auto& m) -> double {
            using M = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<M, StumpModel>) return dropdef::score(m, in.front());
            else return dropdef::score(m, in);
        },
        model);
}

Label Detector::predict(const FeatureVector& f) const {
    const double s = score(f);
    const bool adv = kind == ClassifierKind::tree ? s > 0.5 : s > 0.0;
    return adv ? Label::adversarial : Label::original;
}

Detector train_detector(ClassifierKind kind, FeatureMode mode, const std::vector<LabeledFeature>& train,
                        const SvmOptions& svm, int tree_depth) {
    if (kind == ClassifierKind::svmf && mode == FeatureMode::probability)
        throw std::invalid_argument("svmf is only defined for character-mode features");
    std::vector<std::vector<double>> x;
    std::vector<Label> y;
    for (const auto& s : train) {
        x.push_back(classifier_inputs(s.features, kind));
        y.push_back(s.label);
    }
    Detector d;
    d.kind = kind;
    d.mode = mode;
    switch (kind) {
        case ClassifierKind::stump: {
            std::vector<double> u2;
            for (const auto& r : x) u2.push_back(r.front());
            d.model = train_stump(u2, y);
            break;
        }
        case ClassifierKind::svm4:
        case ClassifierKind::svmf: d.model = train_svm(x, y, svm); break;
        case ClassifierKind::tree: d.model = train_tree(x, y, tree_depth); break;
    }
    return d;
}

// ---------------------------------------------------------------- persistence

void save_detector(const Detector& d, const std::filesystem::path& path) {
    nlohmann::json j;
    j["format"] = "dropdef-detector";
    j["version"] = 1;
    j["classifier"] = std::string(to_string(d.kind));
    j["mode"] = std::string(to_string(d.mode));
    std::visit(
        [&](const auto& m) {
            using M = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<M, StumpModel>) {
                j["threshold"] = m.threshold;
                j["polarity"] = m.polarity;
            } else if constexpr (std::is_same_v<M, LinearSvmModel>) {
                j["weights"] = to_std(m.weights);
                j["bias"] = m.bias;
                j["mean"] = to_std(m.mean);
                j["scale"] = to_std(m.scale);
                j["c"] = m.c;
            } else {
                j["max_depth"] = m.max_depth;
                auto& nodes = j["nodes"] = nlohmann::json::array();
                for (const auto& n : m.nodes)
                    nodes.push_back({{"feature", n.feature}, {"threshold", n.threshold}, {"left", n.left},
                                     {"right", n.right}, {"p_adversarial", n.p_adversarial},
                                     {"samples", n.samples}, {"depth", n.depth}});
            }
        },
        d.model);
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << std::setprecision(17) << j.dump(1) << '\n';
}

Detector load_detector(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    nlohmann::json j;
    try {
        in >> j;
        if (j.at("format") != "dropdef-detector" || j.at("version") != 1)
            throw FormatError(path.string() + ": not a version-1 detector file");
        Detector d;
        d.kind = parse_classifier(j.at("classifier").get<std::string>());
        d.mode = parse_feature_mode(j.at("mode").get<std::string>());
        switch (d.kind) {
            case ClassifierKind::stump: d.model = StumpModel{j.at("threshold"), j.at("polarity")}; break;
            case ClassifierKind::svm4:
            case ClassifierKind::svmf: {
                LinearSvmModel m;
                m.weights = to_vector(j.at("weights").get<std::vector<double>>());
                m.bias = j.at("bias");
                m.mean = to_vector(j.at("mean").get<std::vector<double>>());
                m.scale = to_vector(j.at("scale").get<std::vector<double>>());
                m.c = j.at("c");
                d.model = std::move(m);
                break;
            }
            case ClassifierKind::tree: {
                TreeModel m;
                m.max_depth = j.at("max_depth");
                for (const auto& n : j.at("nodes"))
                    m.nodes.push_back({n.at("feature"), n.at("threshold"), n.at("left"), n.at("right"),
                                       n.at("p_adversarial"), n.at("samples"), n.at("depth")});
                d.model = std::move(m);
                break;
            }
        }
        return d;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------- evaluation

double auc(const std::vector<double>& scores, const std::vector<Label>& labels) {
    if (scores.size() != labels.size()) throw ShapeError("auc: score and label counts differ");
    std::vector<double> pos, neg;
    for (std::size_t i = 0; i < scores.size(); ++i) (labels[i] == Label::adversarial ? pos : neg).push_back(scores[i]);
    if (pos.empty() || neg.empty()) throw std::invalid_argument("auc: both classes are required");
    std::sort(neg.begin(), neg.end());
    double wins = 0.0;
    for (double s : pos) {
        const auto lo = std::lower_bound(neg.begin(), neg.end(), s);
        const auto hi = std::upper_bound(lo, neg.end(), s);
        wins += static_cast<double>(lo - neg.begin()) + 0.5 * static_cast<double>(hi - lo);
    }
    return wins / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

EvalReport evaluate(const Detector& d, const std::vector<LabeledFeature>& test) {
    if (test.empty()) throw std::invalid_argument("evaluate: empty test set");
    EvalReport r;
    std::vector<double> scores;
    std::vector<Label> labels;
    for (const auto& s : test) {
        const Label p = d.predict(s.features);
        const bool adv = s.label == Label::adversarial;
        if (p == Label::adversarial) (adv ? r.true_positive : r.false_positive)++;
        else (adv ? r.false_negative : r.true_negative)++;
        scores.push_back(d.score(s.features));
        labels.push_back(s.label);
    }
    r.accuracy = 100.0 * (r.true_positive + r.true_negative) / static_cast<double>(r.total());
    const bool both = std::count(labels.begin(), labels.end(), Label::adversarial) > 0 &&
                      std::count(labels.begin(), labels.end(), Label::original) > 0;
    r.auc = both ? auc(scores, labels) : std::numeric_limits<double>::quiet_NaN();
    return r;
}

std::vector<LabeledFeature> select_attack(const std::vector<LabeledFeature>& samples, const std::string& attack,
                                          bool include_failed) {
    std::vector<LabeledFeature> out;
    for (const auto& s : samples) {
        if (s.label == Label::original) out.push_back(s);
        else if (s.attack() == attack && (include_failed || s.attack_succeeded)) out.push_back(s);
    }
    return out;
}

}  // namespace dropdef
