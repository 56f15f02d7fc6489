#include "dropdef/detector.hpp"

#include "doctest.h"
#include "support.hpp"

#include <algorithm>
#include <filesystem>
#include <numeric>
#include <set>
#include <sstream>

using namespace dropdef;
using dropdef::testing::relative_error;

namespace {

std::vector<Label> labels_of(std::initializer_list<int> v) {
    std::vector<Label> out;
    for (int x : v) out.push_back(x ? Label::adversarial : Label::original);
    return out;
}

FeatureVector feature(double m1, double m2, double m3, double m4, double u2, bool with_hist = true) {
    FeatureVector f;
    f.m = {m1, m2, m3, m4};
    f.u2 = u2;
    if (with_hist) {
        std::array<double, histogram_bins> h{};
        h[0] = 1.0 - std::min(1.0, m1 / 4.0);
        h[3] = 1.0 - h[0];
        f.histogram = h;
        f.entropy = 0.1 * m1;
    }
    return f;
}

// Dataset where adversarial samples have larger moments, with some overlap.
std::vector<LabeledFeature> synthetic_samples(int originals, std::uint64_t seed, const std::string& attack = "dr") {
    Rng rng(seed);
    std::vector<LabeledFeature> out;
    for (int i = 0; i < originals; ++i) {
        const std::string id = "utt" + std::to_string(1000 + i);
        const double a = std::abs(0.3 + 0.3 * rng.normal());
        const double b = std::abs(1.2 + 0.5 * rng.normal());
        out.push_back({id, Label::original, feature(a, a * a + 0.1, a * a * a, a * a * a * a, a * a + 0.1), true});
        out.push_back({adversarial_id(id, attack), Label::adversarial,
                       feature(b, b * b + 0.5, b * b * b, b * b * b * b, b * b + 0.5), true});
    }
    return out;
}

// Exhaustive search for the best Gini split of a node, written independently of the library.
struct Split {
    int feature = -1;
    double threshold = 0.0;
};

double gini_of(const std::vector<std::size_t>& idx, const std::vector<Label>& y) {
    if (idx.empty()) return 0.0;
    double adv = 0.0;
    for (auto i : idx) adv += y[i] == Label::adversarial;
    const double p = adv / static_cast<double>(idx.size());
    return 1.0 - p * p - (1.0 - p) * (1.0 - p);
}

Split best_split(const std::vector<std::vector<double>>& x, const std::vector<Label>& y,
                 const std::vector<std::size_t>& idx) {
    Split best;
    const double parent = gini_of(idx, y);
    double best_gain = 0.0;
    for (int f = 0; f < static_cast<int>(x[0].size()); ++f) {
        std::set<double> values;
        for (auto i : idx) values.insert(x[i][static_cast<std::size_t>(f)]);
        std::vector<double> v(values.begin(), values.end());
        for (std::size_t k = 0; k + 1 < v.size(); ++k) {
            const double thr = 0.5 * (v[k] + v[k + 1]);
            std::vector<std::size_t> l, r;
            for (auto i : idx) (x[i][static_cast<std::size_t>(f)] <= thr ? l : r).push_back(i);
            const double n = static_cast<double>(idx.size());
            const double gain = parent - (static_cast<double>(l.size()) * gini_of(l, y) +
                                          static_cast<double>(r.size()) * gini_of(r, y)) / n;
            if (gain > best_gain + 1e-9) {
                best_gain = gain;
                best = {f, thr};
            }
        }
    }
    return best;
}

void check_tree_against_oracle(const TreeModel& tree, int node, const std::vector<std::vector<double>>& x,
                               const std::vector<Label>& y, const std::vector<std::size_t>& idx, int depth,
                               int max_depth) {
    const auto& n = tree.nodes[static_cast<std::size_t>(node)];
    CHECK(n.samples == static_cast<int>(idx.size()));
    const Split s = depth < max_depth ? best_split(x, y, idx) : Split{};
    REQUIRE(n.feature == s.feature);
    if (s.feature < 0) return;
    CHECK(n.threshold == doctest::Approx(s.threshold));
    std::vector<std::size_t> l, r;
    for (auto i : idx) (x[i][static_cast<std::size_t>(s.feature)] <= s.threshold ? l : r).push_back(i);
    check_tree_against_oracle(tree, n.left, x, y, l, depth + 1, max_depth);
    check_tree_against_oracle(tree, n.right, x, y, r, depth + 1, max_depth);
}

// Standardised linear SVM primal by projected-free subgradient descent; returns the best objective seen.
double subgradient_svm_objective(const std::vector<std::vector<double>>& x, const std::vector<Label>& y, double c) {
    const auto n = x.size();
    const auto d = x[0].size();
    std::vector<double> mean(d, 0.0), sd(d, 0.0);
    for (const auto& row : x)
        for (std::size_t j = 0; j < d; ++j) mean[j] += row[j] / static_cast<double>(n);
    for (const auto& row : x)
        for (std::size_t j = 0; j < d; ++j) sd[j] += (row[j] - mean[j]) * (row[j] - mean[j]) / static_cast<double>(n);
    for (auto& s : sd) s = s > 0.0 ? std::sqrt(s) : 1.0;
    std::vector<std::vector<double>> z(n, std::vector<double>(d));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) z[i][j] = (x[i][j] - mean[j]) / sd[j];

    auto objective = [&](const std::vector<double>& w, double b) {
        double hinge = 0.0, reg = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double s = b;
            for (std::size_t j = 0; j < d; ++j) s += w[j] * z[i][j];
            hinge += std::max(0.0, 1.0 - (y[i] == Label::adversarial ? 1.0 : -1.0) * s);
        }
        for (double v : w) reg += v * v;
        return 0.5 * reg + c * hinge / static_cast<double>(n);
    };

    std::vector<double> w(d, 0.0);
    double b = 0.0;
    double best = objective(w, b);
    for (int t = 1; t <= 400000; ++t) {
        std::vector<double> gw = w;
        double gb = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double yi = y[i] == Label::adversarial ? 1.0 : -1.0;
            double s = b;
            for (std::size_t j = 0; j < d; ++j) s += w[j] * z[i][j];
            if (yi * s < 1.0) {
                for (std::size_t j = 0; j < d; ++j) gw[j] -= c * yi * z[i][j] / static_cast<double>(n);
                gb -= c * yi / static_cast<double>(n);
            }
        }
        const double eta = 0.5 / std::sqrt(static_cast<double>(t));
        for (std::size_t j = 0; j < d; ++j) w[j] -= eta * gw[j];
        b -= eta * gb;
        best = std::min(best, objective(w, b));
    }
    return best;
}

double pairwise_auc(const std::vector<double>& s, const std::vector<Label>& y) {
    double wins = 0.0, pairs = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t j = 0; j < s.size(); ++j)
            if (y[i] == Label::adversarial && y[j] == Label::original) {
                pairs += 1.0;
                wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
            }
    return wins / pairs;
}

double train_accuracy(const StumpModel& m, const std::vector<double>& u2, const std::vector<Label>& y) {
    int correct = 0;
    for (std::size_t i = 0; i < u2.size(); ++i) correct += (score(m, u2[i]) > 0.0) == (y[i] == Label::adversarial);
    return static_cast<double>(correct) / static_cast<double>(u2.size());
}

}  // namespace

TEST_CASE("sample ids carry the original and the attack") {
    const LabeledFeature a{adversarial_id("utt0003", "nrr"), Label::adversarial, {}, true};
    CHECK(a.sample_id == "utt0003@nrr");
    CHECK(a.original_id() == "utt0003");
    CHECK(a.attack() == "nrr");
    const LabeledFeature o{"utt0003", Label::original, {}, true};
    CHECK(o.original_id() == "utt0003");
    CHECK(o.attack() == "original");
}

TEST_CASE("split_70_30 examples") {
    std::vector<LabeledFeature> originals;
    for (int i = 0; i < 500; ++i) originals.push_back({"s" + std::to_string(i), Label::original, {}, true});
    const auto [train500, test500] = split_70_30(originals, 4);
    CHECK(train500.size() == 350);
    CHECK(test500.size() == 150);

    const std::vector<LabeledFeature> ten(originals.begin(), originals.begin() + 10);
    const auto [train10, test10] = split_70_30(ten, 4);
    CHECK(train10.size() == 7);
    CHECK(test10.size() == 3);

    const auto again = split_70_30(originals, 4);
    CHECK(std::equal(train500.begin(), train500.end(), again.first.begin(),
                     [](const auto& a, const auto& b) { return a.sample_id == b.sample_id; }));

    CHECK_THROWS_AS(split_70_30(std::vector<LabeledFeature>(originals.begin(), originals.begin() + 9), 1),
                    std::invalid_argument);
}

TEST_CASE("split_70_30 keeps every original with its attacks") {
    auto samples = synthetic_samples(40, 2);
    for (int i = 0; i < 40; i += 3)
        samples.push_back({adversarial_id("utt" + std::to_string(1000 + i), "cw"), Label::adversarial, {}, true});
    const auto [train, test] = split_70_30(samples, 9);
    CHECK(train.size() + test.size() == samples.size());
    std::set<std::string> train_groups, test_groups;
    for (const auto& s : train) train_groups.insert(s.original_id());
    for (const auto& s : test) test_groups.insert(s.original_id());
    CHECK(train_groups.size() == 28);
    CHECK(test_groups.size() == 12);
    for (const auto& g : train_groups) CHECK(test_groups.count(g) == 0);
}

TEST_CASE("train_stump examples") {
    const auto sep = train_stump({0, 0, 5, 6}, labels_of({0, 0, 1, 1}));
    CHECK(sep.threshold == doctest::Approx(2.5));
    CHECK(sep.polarity == 1.0);
    CHECK(train_accuracy(sep, {0, 0, 5, 6}, labels_of({0, 0, 1, 1})) == 1.0);

    const auto anti = train_stump({0, 0, 5, 6}, labels_of({1, 1, 0, 0}));
    CHECK(anti.polarity == -1.0);
    CHECK(train_accuracy(anti, {0, 0, 5, 6}, labels_of({1, 1, 0, 0})) == 1.0);

    const auto mixed = train_stump({0, 1, 2, 3}, labels_of({0, 1, 0, 1}));
    CHECK(mixed.threshold == doctest::Approx(0.5));
    CHECK(train_accuracy(mixed, {0, 1, 2, 3}, labels_of({0, 1, 0, 1})) == doctest::Approx(0.75));

    CHECK(score(sep, sep.threshold) == 0.0);
    CHECK_THROWS_AS(train_stump({1, 2}, labels_of({0, 0})), std::invalid_argument);
}

TEST_CASE("train_stump matches an exhaustive scan and beats the class prior") {
    Rng rng(41);
    for (int trial = 0; trial < 200; ++trial) {
        const auto n = 2 + rng.below(15);
        std::vector<double> u2;
        std::vector<Label> y;
        for (std::size_t i = 0; i < n; ++i) {
            u2.push_back(static_cast<double>(rng.below(6)));
            y.push_back(rng.below(2) ? Label::adversarial : Label::original);
        }
        y[0] = Label::original;
        y[1] = Label::adversarial;
        // every threshold on a fine grid, both polarities
        double best = 0.0;
        for (double t = -1.5; t <= 6.5; t += 0.25)
            for (double pol : {1.0, -1.0}) best = std::max(best, train_accuracy({t, pol}, u2, y));
        const auto m = train_stump(u2, y);
        const double acc = train_accuracy(m, u2, y);
        CHECK(acc == doctest::Approx(best));
        const double prior = static_cast<double>(std::count(y.begin(), y.end(), Label::adversarial)) /
                             static_cast<double>(n);
        CHECK(acc >= std::max(prior, 1.0 - prior) - 1e-12);

        // shifting every u2 by c shifts every score by c * polarity
        const auto shifted_model = m;
        for (double v : u2) CHECK(score(shifted_model, v + 0.7) == doctest::Approx(score(m, v) + 0.7 * m.polarity));
    }
}

TEST_CASE("train_svm separates a separable set") {
    const std::vector<std::vector<double>> x{{0, 0}, {1, 0}, {0, 1}, {3, 3}, {4, 3}, {3, 4}};
    const auto y = labels_of({0, 0, 0, 1, 1, 1});
    const auto m = train_svm(x, y);
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double s = score(m, x[i]);
        CHECK((s > 0.0) == (y[i] == Label::adversarial));
    }
    CHECK_THROWS_AS(train_svm(x, labels_of({1, 1, 1, 1, 1, 1})), std::invalid_argument);
}

TEST_CASE("train_svm is unchanged by duplicating every point") {
    Rng rng(8);
    std::vector<std::vector<double>> x;
    std::vector<Label> y;
    for (int i = 0; i < 20; ++i) {
        const bool adv = i % 2 == 1;
        x.push_back({rng.normal() + (adv ? 1.0 : 0.0), rng.normal() - (adv ? 0.5 : 0.0)});
        y.push_back(adv ? Label::adversarial : Label::original);
    }
    const auto m = train_svm(x, y);
    auto x2 = x;
    auto y2 = y;
    x2.insert(x2.end(), x.begin(), x.end());
    y2.insert(y2.end(), y.begin(), y.end());
    const auto m2 = train_svm(x2, y2);
    CHECK((m.weights - m2.weights).norm() < 1e-5);
    CHECK(std::abs(m.bias - m2.bias) < 1e-5);
}

TEST_CASE("train_svm reaches the optimum found by subgradient descent") {
    Rng rng(20);
    std::vector<std::vector<double>> x;
    std::vector<Label> y;
    for (int i = 0; i < 20; ++i) {
        const bool adv = i % 2 == 1;
        x.push_back({3.0 * rng.normal() + (adv ? 2.0 : 0.0), 0.1 * rng.normal() + (adv ? 0.1 : 0.0), rng.normal()});
        y.push_back(adv ? Label::adversarial : Label::original);
    }
    const auto m = train_svm(x, y);
    const double smo = svm_objective(m, x, y);
    const double oracle = subgradient_svm_objective(x, y, 1.0);
    CHECK(smo <= oracle + 1e-9);
    CHECK(relative_error(smo, oracle) < 1e-3);
}

TEST_CASE("train_tree examples") {
    const std::vector<std::vector<double>> x{{0, 5, 0, 0}, {1, 4, 0, 0}, {5, 5, 0, 0}, {6, 4, 0, 0}};
    const auto tree = train_tree(x, labels_of({0, 0, 1, 1}));
    CHECK(tree.depth() == 1);
    CHECK(tree.nodes[0].feature == 0);
    CHECK(tree.nodes[0].threshold == doctest::Approx(3.0));
    for (std::size_t i = 0; i < x.size(); ++i) CHECK((score(tree, x[i]) > 0.5) == (i >= 2));

    // both children are pure, so neither splits again
    CHECK(tree.nodes.size() == 3);
    CHECK(tree.nodes[static_cast<std::size_t>(tree.nodes[0].left)].p_adversarial == 0.0);
    CHECK(tree.nodes[static_cast<std::size_t>(tree.nodes[0].right)].p_adversarial == 1.0);
    CHECK_THROWS_AS(train_tree({{1, 1, 1, 1}, {2, 2, 2, 2}}, labels_of({1, 1})), std::invalid_argument);
}

TEST_CASE("train_tree equals the exhaustive CART oracle") {
    Rng rng(77);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<std::vector<double>> x;
        std::vector<Label> y;
        for (int i = 0; i < 8; ++i) {
            x.push_back({static_cast<double>(rng.below(5)), static_cast<double>(rng.below(5)),
                         static_cast<double>(rng.below(5)), static_cast<double>(rng.below(5))});
            y.push_back(rng.below(2) ? Label::adversarial : Label::original);
        }
        y[0] = Label::original;
        y[1] = Label::adversarial;
        for (int depth : {1, 2, 4}) {
            const auto tree = train_tree(x, y, depth);
            CHECK(tree.depth() <= depth);
            std::vector<std::size_t> all(8);
            std::iota(all.begin(), all.end(), std::size_t{0});
            check_tree_against_oracle(tree, 0, x, y, all, 0, depth);
            // every leaf is reached by some training sample
            std::set<const TreeNode*> reached;
            for (const auto& row : x) reached.insert(&tree.leaf(row));
            int leaves = 0;
            for (const auto& n : tree.nodes) leaves += n.feature < 0;
            CHECK(static_cast<int>(reached.size()) == leaves);
        }
    }
}

TEST_CASE("auc examples and properties") {
    CHECK(auc({0.1, 0.2, 0.8, 0.9}, labels_of({0, 0, 1, 1})) == 1.0);
    CHECK(auc({1, 1, 1, 1}, labels_of({0, 1, 0, 1})) == 0.5);
    CHECK_THROWS_AS(auc({1, 2}, labels_of({1, 1})), std::invalid_argument);

    Rng rng(51);
    std::vector<double> s;
    std::vector<Label> y;
    for (int i = 0; i < 4000; ++i) {
        s.push_back(rng.uniform());
        y.push_back(i % 2 ? Label::adversarial : Label::original);
    }
    CHECK(std::abs(auc(s, y) - 0.5) < 0.05);

    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> t;
        std::vector<Label> l;
        for (int i = 0; i < 40; ++i) {
            t.push_back(static_cast<double>(rng.below(7)));
            l.push_back(i % 3 == 0 ? Label::adversarial : Label::original);
        }
        const double a = auc(t, l);
        CHECK(a == doctest::Approx(pairwise_auc(t, l)).epsilon(1e-12));
        std::vector<double> transformed;
        for (double v : t) transformed.push_back(std::exp(3.0 * v) - 5.0);
        CHECK(auc(transformed, l) == doctest::Approx(a).epsilon(1e-12));
    }
}

TEST_CASE("detectors train on one attack and evaluate on others") {
    auto samples = synthetic_samples(60, 3, "dr");
    const auto cw = synthetic_samples(60, 4, "cw");
    for (const auto& s : cw)
        if (s.label == Label::adversarial) samples.push_back(s);
    const auto [train, test] = split_70_30(samples, 5);
    for (auto kind : {ClassifierKind::stump, ClassifierKind::svm4, ClassifierKind::svmf, ClassifierKind::tree}) {
        CAPTURE(to_string(kind));
        const auto d = train_detector(kind, FeatureMode::character, select_attack(train, "dr"));
        for (const std::string attack : {"dr", "cw"}) {
            const auto r = evaluate(d, select_attack(test, attack));
            CHECK(r.total() == static_cast<int>(select_attack(test, attack).size()));
            CHECK(r.accuracy == doctest::Approx(100.0 * (r.true_positive + r.true_negative) / r.total()));
            CHECK(r.auc > 0.8);
        }
        for (const auto& s : test) {
            if (kind == ClassifierKind::tree) CHECK((d.predict(s.features) == Label::adversarial) == (d.score(s.features) > 0.5));
            else CHECK((d.predict(s.features) == Label::adversarial) == (d.score(s.features) > 0.0));
        }
    }
}

TEST_CASE("perfect separation gives 100% and AUC 1") {
    const auto samples = synthetic_samples(30, 6);
    std::vector<LabeledFeature> clean;
    for (auto s : samples) {
        const double v = s.label == Label::adversarial ? 10.0 : 0.1;
        s.features = feature(v, v, v, v, v);
        clean.push_back(s);
    }
    const auto d = train_detector(ClassifierKind::stump, FeatureMode::character, clean);
    const auto r = evaluate(d, clean);
    CHECK(r.accuracy == 100.0);
    CHECK(r.auc == 1.0);
    CHECK_THROWS_AS(evaluate(d, {}), std::invalid_argument);
}

TEST_CASE("svmf is rejected in probability mode") {
    const auto samples = synthetic_samples(10, 1);
    CHECK_THROWS_AS(train_detector(ClassifierKind::svmf, FeatureMode::probability, samples), std::invalid_argument);
}

TEST_CASE("select_attack drops failed forgeries unless asked") {
    auto samples = synthetic_samples(5, 1, "cw");
    samples[1].attack_succeeded = false;
    CHECK(select_attack(samples, "cw").size() == 9);
    CHECK(select_attack(samples, "cw", true).size() == 10);
    CHECK(select_attack(samples, "dr").size() == 5);
}

TEST_CASE("feature CSV round-trips in both modes") {
    auto rows = synthetic_samples(4, 12);
    rows[3].attack_succeeded = false;
    rows[0].features.entropy.reset();
    rows[0].features.histogram.reset();
    std::stringstream buffer;
    write_features_csv(buffer, rows);
    const std::string header = buffer.str().substr(0, buffer.str().find('\n'));
    CHECK(header.rfind("sample_id,label,m1,m2,m3,m4,u2,entropy,h0,", 0) == 0);
    const auto back = read_features_csv(buffer);
    REQUIRE(back.size() == rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        CHECK(back[i].sample_id == rows[i].sample_id);
        CHECK(back[i].label == rows[i].label);
        CHECK(back[i].features.m == rows[i].features.m);
        CHECK(back[i].features.u2 == rows[i].features.u2);
        CHECK(back[i].features.entropy == rows[i].features.entropy);
        CHECK(back[i].features.histogram.has_value() == rows[i].features.histogram.has_value());
    }

    std::stringstream bad("nonsense\n");
    CHECK_THROWS_AS(read_features_csv(bad), FormatError);
}

TEST_CASE("detector files round-trip") {
    const auto samples = synthetic_samples(20, 13);
    const auto dir = std::filesystem::temp_directory_path() / "dropdef_detector_test";
    std::filesystem::create_directories(dir);
    for (auto kind : {ClassifierKind::stump, ClassifierKind::svm4, ClassifierKind::svmf, ClassifierKind::tree}) {
        const auto d = train_detector(kind, FeatureMode::character, samples);
        const auto path = dir / (std::string(to_string(kind)) + ".json");
        save_detector(d, path);
        const auto back = load_detector(path);
        CHECK(back.kind == kind);
        for (const auto& s : samples) CHECK(back.score(s.features) == d.score(s.features));
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("classifier names") {
    CHECK(to_string(ClassifierKind::stump) == "ds");
    CHECK(parse_classifier("svmf") == ClassifierKind::svmf);
    CHECK_THROWS_AS(parse_classifier("knn"), std::invalid_argument);
}
