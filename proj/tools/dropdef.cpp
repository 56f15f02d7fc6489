// Command-line front end: corpus synthesis, training, attacks, defense
// features, detectors and reports over one experiment directory.

#include "dropdef/pipeline.hpp"
#include "dropdef/wav.hpp"

#include "CLI11.hpp"

#include <iostream>

namespace {

using namespace dropdef;
namespace fs = std::filesystem;

enum Exit { ok = 0, usage = 1, missing = 2, numerical = 3 };

struct Common {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out = "experiment";
    bool force = false;
    std::vector<std::string> overrides;
};

Experiment make_experiment(const Common& c) {
    std::vector<std::string> overrides = c.overrides;
    if (c.seed) overrides.push_back("seed=" + std::to_string(*c.seed));
    Experiment e;
    e.config = c.config_path.empty() ? parse_config("", overrides) : load_config(c.config_path, overrides);
    e.layout.root = c.out;
    e.force = c.force;
    e.log = &std::cerr;
    return e;
}

fs::path existing_file(const std::string& p, const std::string& what) {
    if (!fs::exists(p)) throw MissingArtifact(p, what);
    return p;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Dropout-uncertainty defense laboratory for adversarial audio"};
    app.require_subcommand(1);
    Common common;
    bool print_config = false;
    app.add_option("--config", common.config_path, "JSON experiment config")->check(CLI::ExistingFile);
    app.add_option("--seed", common.seed, "Master seed (overrides the config)");
    app.add_option("--out", common.out, "Experiment directory")->capture_default_str();
    app.add_flag("--force", common.force, "Rebuild artifacts even when up to date");
    app.add_option("--set", common.overrides, "Config override key.path=value (repeatable)");
    app.add_flag("--print-config", print_config, "Print the effective config and exit");
    app.fallthrough();

    auto* synth = app.add_subcommand("synth-corpus", "Write the synthetic train/eval corpora");
    auto* train = app.add_subcommand("train-asr", "Train the CTC recogniser");

    auto* transcribe_cmd = app.add_subcommand("transcribe", "Decode WAV files");
    std::vector<std::string> transcribe_inputs;
    std::string model_path;
    double transcribe_rate = 0.0;
    int transcribe_count = 1;
    transcribe_cmd->add_option("wav", transcribe_inputs, "Input WAV files")->required();
    transcribe_cmd->add_option("--model", model_path, "Model checkpoint (default: <out>/models/asr.json)");
    transcribe_cmd->add_option("--dropout", transcribe_rate, "Inference dropout rate")->check(CLI::Range(0.0, 0.999));
    transcribe_cmd->add_option("--realizations", transcribe_count, "Dropout realizations per file")->check(CLI::PositiveNumber);

    auto* attack_cmd = app.add_subcommand("attack", "Forge adversarial versions of the eval corpus");
    std::string attack_name;
    attack_cmd->add_option("--type", attack_name, "Attack type")->required()->check(CLI::IsMember({"cw", "dr", "nrr", "ia"}));

    auto* denoise_cmd = app.add_subcommand("denoise", "Spectral subtraction of one WAV file");
    std::string denoise_in, denoise_out;
    denoise_cmd->add_option("input", denoise_in, "Input WAV")->required();
    denoise_cmd->add_option("output", denoise_out, "Output WAV")->required();

    auto* defend = app.add_subcommand("defend", "Dropout-uncertainty features for originals and attacks");

    auto* detect = app.add_subcommand("detect", "Train and evaluate a detector");
    std::string classifier_name = "svm4", mode_name = "char";
    detect->add_option("--classifier", classifier_name, "Classifier")->check(CLI::IsMember({"ds", "svm4", "svmf", "tree"}))->capture_default_str();
    detect->add_option("--mode", mode_name, "Feature mode")->check(CLI::IsMember({"char", "prob"}))->capture_default_str();

    auto* report = app.add_subcommand("report", "Aggregate detector results and mean histograms");
    auto* hist = app.add_subcommand("hist", "Mean uncertainty histograms per source");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? Exit::ok : Exit::usage;
    }

    try {
        Experiment e = make_experiment(common);
        if (print_config) {
            std::cout << dump_config(e.config) << '\n';
            return Exit::ok;
        }
        if (*synth) run_synth_corpus(e);
        else if (*train) run_train_asr(e);
        else if (*transcribe_cmd) {
            const fs::path mp = model_path.empty() ? e.layout.model() : fs::path(model_path);
            const AcousticModel model = load_model(existing_file(mp.string(), "train-asr"));
            for (const auto& in : transcribe_inputs) {
                const Waveform x = read_wav(existing_file(in, "a WAV file"));
                if (transcribe_rate == 0.0 || transcribe_count == 1) {
                    std::optional<DropoutSpec> d;
                    if (transcribe_rate > 0.0) d = DropoutSpec{transcribe_rate, e.config.seed, e.config.defense.scope};
                    std::cout << in << '\t' << transcribe(model, x, d) << '\n';
                    continue;
                }
                const RealizationSet rs = realize(model, x, transcribe_rate, transcribe_count, e.config.seed, e.config.defense.scope);
                for (int i = 0; i < rs.size(); ++i) std::cout << in << '\t' << i << '\t' << rs.transcripts[static_cast<std::size_t>(i)] << '\n';
            }
        } else if (*attack_cmd) run_attack_stage(e, parse_attack_type(attack_name));
        else if (*denoise_cmd) {
            const Waveform x = read_wav(existing_file(denoise_in, "a WAV file"));
            if (const auto clipped = write_wav(denoise_out, denoise(x, e.config.attack.denoiser)); clipped > 0)
                std::cerr << "warning: " << clipped << " samples clipped\n";
        } else if (*defend) run_defend(e);
        else if (*detect) run_detect(e, parse_classifier(classifier_name), parse_feature_mode(mode_name));
        else if (*report) run_report(e);
        else if (*hist) run_hist(e);
        return Exit::ok;
    } catch (const MissingArtifact& err) {
        std::cerr << "error: " << err.what() << '\n';
        return Exit::missing;
    } catch (const NumericalError& err) {
        std::cerr << "numerical failure: " << err.what() << '\n';
        return Exit::numerical;
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << '\n';
        return Exit::usage;
    }
}
