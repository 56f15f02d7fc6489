#include "dropdef/pipeline.hpp"
#include "dropdef/wav.hpp"

#include "json.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace dropdef {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------- config <-> json

std::string scope_name(DropoutScope s) {
    return s == DropoutScope::dense_only ? "dense_only" : "dense_and_recurrent";
}

DropoutScope parse_scope(const std::string& s) {
    if (s == "dense_only") return DropoutScope::dense_only;
    if (s == "dense_and_recurrent") return DropoutScope::dense_and_recurrent;
    throw std::invalid_argument("unknown dropout scope '" + s + "' (expected dense_only or dense_and_recurrent)");
}

MomentKind parse_moments(const std::string& s) {
    if (s == "raw") return MomentKind::raw;
    if (s == "central") return MomentKind::central;
    throw std::invalid_argument("unknown moment kind '" + s + "' (expected raw or central)");
}

json to_json(const ExperimentConfig& c) {
    const auto& s = c.synth;
    const auto& a = c.attack;
    json j;
    j["seed"] = c.seed;
    j["corpus"] = {
        {"train_utterances", c.train_utterances},
        {"eval_utterances", c.eval_utterances},
        {"synth",
         {{"alphabet", s.alphabet}, {"sample_rate", s.sample_rate}, {"symbol_seconds", s.symbol_seconds},
          {"gap_seconds", s.gap_seconds}, {"lead_seconds", s.lead_seconds}, {"tail_seconds", s.tail_seconds},
          {"min_words", s.min_words}, {"max_words", s.max_words}, {"min_word_length", s.min_word_length},
          {"max_word_length", s.max_word_length}, {"min_gain", s.min_gain}, {"max_gain", s.max_gain},
          {"snr_db", s.snr_db}, {"frequency_jitter", s.frequency_jitter}}},
    };
    j["asr"] = {
        {"geometry",
         {{"context", c.geometry.context}, {"hidden_layers", c.geometry.hidden_layers},
          {"hidden_width", c.geometry.hidden_width}, {"recurrent_width", c.geometry.recurrent_width}}},
        {"train_dropout_rate", c.train_dropout_rate},
        {"training",
         {{"epochs", c.training.epochs}, {"batch_size", c.training.batch_size},
          {"learning_rate", c.training.learning_rate}, {"momentum", c.training.momentum},
          {"clip_norm", c.training.clip_norm}, {"holdout_every", c.training.holdout_every}}},
    };
    j["attack"] = {
        {"target", a.target},
        {"max_iterations", a.max_iterations},
        {"tau_initial_db", a.tau_initial_db},
        {"tau_step_db", a.tau_step_db},
        {"learning_rate", a.learning_rate},
        {"beta", a.beta},
        {"dropout_rate", a.dropout_rate},
        {"dropout_scope", scope_name(a.dropout_scope)},
        {"fresh_dropout_mask", a.fresh_dropout_mask},
        {"success_realizations", a.success_realizations},
        {"dropout_success_streak", a.dropout_success_streak},
        {"denoiser",
         {{"leading_frames", a.denoiser.leading_frames}, {"oversubtraction", a.denoiser.oversubtraction},
          {"floor", a.denoiser.floor}}},
        {"ia",
         {{"stage1_learning_rate", a.ia_stage1_learning_rate}, {"stage2_learning_rate", a.ia_stage2_learning_rate},
          {"refine_iterations", a.ia_refine_iterations}, {"stage2_decay", a.ia_stage2_decay},
          {"alpha_initial", a.alpha_initial}, {"alpha_growth", a.alpha_growth}, {"alpha_interval", a.alpha_interval},
          {"window_size", a.masking_stft.window_size}}},
        {"masking",
         {{"full_scale_db", a.masking.full_scale_db}, {"psd_floor_db", a.masking.psd_floor_db},
          {"tonal_margin_db", a.masking.tonal_margin_db}, {"hearing_offset_db", a.masking.hearing_offset_db},
          {"combine_exponent", a.masking.combine_exponent}}},
    };
    j["defense"] = {{"rate", c.defense.rate},
                    {"realizations", c.defense.realizations},
                    {"scope", scope_name(c.defense.scope)},
                    {"moments", c.defense.moments == MomentKind::raw ? "raw" : "central"}};
    j["detector"] = {{"train_attack", c.detector.train_attack},
                     {"svm_c", c.detector.svm.c},
                     {"svm_tolerance", c.detector.svm.tolerance},
                     {"tree_depth", c.detector.tree_depth},
                     {"include_failed", c.detector.include_failed}};
    json attacks = json::array();
    for (AttackType t : c.attacks) attacks.push_back(std::string(to_string(t)));
    j["attacks"] = attacks;
    return j;
}

ExperimentConfig from_json(const json& j) {
    ExperimentConfig c;
    c.seed = j.at("seed").get<std::uint64_t>();
    const json& corpus = j.at("corpus");
    c.train_utterances = corpus.at("train_utterances");
    c.eval_utterances = corpus.at("eval_utterances");
    const json& s = corpus.at("synth");
    c.synth.alphabet = s.at("alphabet");
    c.synth.sample_rate = s.at("sample_rate");
    c.synth.symbol_seconds = s.at("symbol_seconds");
    c.synth.gap_seconds = s.at("gap_seconds");
    c.synth.lead_seconds = s.at("lead_seconds");
    c.synth.tail_seconds = s.at("tail_seconds");
    c.synth.min_words = s.at("min_words");
    c.synth.max_words = s.at("max_words");
    c.synth.min_word_length = s.at("min_word_length");
    c.synth.max_word_length = s.at("max_word_length");
    c.synth.min_gain = s.at("min_gain");
    c.synth.max_gain = s.at("max_gain");
    c.synth.snr_db = s.at("snr_db");
    c.synth.frequency_jitter = s.at("frequency_jitter");

    const json& asr = j.at("asr");
    c.geometry.context = asr.at("geometry").at("context");
    c.geometry.hidden_layers = asr.at("geometry").at("hidden_layers");
    c.geometry.hidden_width = asr.at("geometry").at("hidden_width");
    c.geometry.recurrent_width = asr.at("geometry").at("recurrent_width");
    c.train_dropout_rate = asr.at("train_dropout_rate");
    const json& t = asr.at("training");
    c.training.epochs = t.at("epochs");
    c.training.batch_size = t.at("batch_size");
    c.training.learning_rate = t.at("learning_rate");
    c.training.momentum = t.at("momentum");
    c.training.clip_norm = t.at("clip_norm");
    c.training.holdout_every = t.at("holdout_every");

    const json& a = j.at("attack");
    c.attack.target = a.at("target");
    c.attack.max_iterations = a.at("max_iterations");
    c.attack.tau_initial_db = a.at("tau_initial_db");
    c.attack.tau_step_db = a.at("tau_step_db");
    c.attack.learning_rate = a.at("learning_rate");
    c.attack.beta = a.at("beta");
    c.attack.dropout_rate = a.at("dropout_rate");
    c.attack.dropout_scope = parse_scope(a.at("dropout_scope"));
    c.attack.fresh_dropout_mask = a.at("fresh_dropout_mask");
    c.attack.success_realizations = a.at("success_realizations");
    c.attack.dropout_success_streak = a.at("dropout_success_streak");
    c.attack.denoiser.leading_frames = a.at("denoiser").at("leading_frames");
    c.attack.denoiser.oversubtraction = a.at("denoiser").at("oversubtraction");
    c.attack.denoiser.floor = a.at("denoiser").at("floor");
    const json& ia = a.at("ia");
    c.attack.ia_stage1_learning_rate = ia.at("stage1_learning_rate");
    c.attack.ia_stage2_learning_rate = ia.at("stage2_learning_rate");
    c.attack.ia_refine_iterations = ia.at("refine_iterations");
    c.attack.ia_stage2_decay = ia.at("stage2_decay");
    c.attack.alpha_initial = ia.at("alpha_initial");
    c.attack.alpha_growth = ia.at("alpha_growth");
    c.attack.alpha_interval = ia.at("alpha_interval");
    c.attack.masking_stft.window_size = ia.at("window_size");
    c.attack.masking_stft.hop = c.attack.masking_stft.window_size / 4;
    const json& m = a.at("masking");
    c.attack.masking.full_scale_db = m.at("full_scale_db");
    c.attack.masking.psd_floor_db = m.at("psd_floor_db");
    c.attack.masking.tonal_margin_db = m.at("tonal_margin_db");
    c.attack.masking.hearing_offset_db = m.at("hearing_offset_db");
    c.attack.masking.combine_exponent = m.at("combine_exponent");

    const json& d = j.at("defense");
    c.defense.rate = d.at("rate");
    c.defense.realizations = d.at("realizations");
    c.defense.scope = parse_scope(d.at("scope"));
    c.defense.moments = parse_moments(d.at("moments"));

    const json& det = j.at("detector");
    c.detector.train_attack = det.at("train_attack");
    c.detector.svm.c = det.at("svm_c");
    c.detector.svm.tolerance = det.at("svm_tolerance");
    c.detector.tree_depth = det.at("tree_depth");
    c.detector.include_failed = det.at("include_failed");

    c.attacks.clear();
    for (const auto& name : j.at("attacks")) c.attacks.push_back(parse_attack_type(name.get<std::string>()));
    return c;
}

void validate(const ExperimentConfig& c) {
    auto need = [](bool ok, const std::string& what) {
        if (!ok) throw std::invalid_argument("config: " + what);
    };
    need(c.train_utterances >= 0 && c.eval_utterances >= 0, "utterance counts must be non-negative");
    need(c.synth.sample_rate > 0, "corpus.synth.sample_rate must be positive");
    need(!c.synth.alphabet.empty(), "corpus.synth.alphabet must not be empty");
    need(c.train_dropout_rate >= 0.0 && c.train_dropout_rate < 1.0, "asr.train_dropout_rate must lie in [0, 1)");
    need(c.geometry.context >= 0 && c.geometry.hidden_layers >= 1 && c.geometry.hidden_width >= 1 &&
             c.geometry.recurrent_width >= 0,
         "asr.geometry has invalid sizes");
    need(c.defense.rate >= 0.0 && c.defense.rate < 1.0, "defense.rate must lie in [0, 1)");
    need(c.defense.realizations >= 2, "defense.realizations must be at least 2");
    need(c.detector.tree_depth >= 0, "detector.tree_depth must be non-negative");
    need(c.attack.masking_stft.window_size >= 8 && c.attack.masking_stft.window_size % 4 == 0,
         "attack.ia.window_size must be a multiple of 4, at least 8");
    parse_attack_type(c.detector.train_attack);
    validate(c.attack);
}

void merge_checked(json& base, const json& patch, const std::string& where) {
    if (!patch.is_object()) throw std::invalid_argument("config: " + (where.empty() ? "document" : where) + " must be an object");
    for (auto it = patch.begin(); it != patch.end(); ++it) {
        const std::string key = where.empty() ? it.key() : where + "." + it.key();
        if (!base.contains(it.key())) throw std::invalid_argument("config: unknown key '" + key + "'");
        json& slot = base[it.key()];
        if (slot.is_object()) merge_checked(slot, it.value(), key);
        else slot = it.value();
    }
}

void apply_override(json& j, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw std::invalid_argument("override '" + assignment + "' is not key=value");
    const std::string path = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;  // bare strings need no quotes

    json patch = value;
    std::vector<std::string> keys;
    std::istringstream in(path);
    for (std::string k; std::getline(in, k, '.');) keys.push_back(k);
    for (auto k = keys.rbegin(); k != keys.rend(); ++k) patch = json{{*k, patch}};
    merge_checked(j, patch, "");
}

// ---------------------------------------------------------------- provenance

void note(const Experiment& e, const std::string& message) {
    if (e.log) *e.log << message << '\n';
}

std::optional<std::string> recorded_hash(const fs::path& artifact) {
    std::ifstream in(provenance_path(artifact));
    if (!in) return std::nullopt;
    const json j = json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.contains("config_hash") || !j["config_hash"].is_string()) return std::nullopt;
    return j["config_hash"].get<std::string>();
}

void write_provenance(const Experiment& e, const fs::path& artifact, const std::string& stage, const std::string& hash) {
    json j{{"artifact", artifact.filename().string()},
           {"stage", stage},
           {"config_hash", hash},
           {"seed", e.config.seed}};
    std::ofstream out(provenance_path(artifact));
    if (!out) throw std::runtime_error("cannot write " + provenance_path(artifact).string());
    out << j.dump(1) << '\n';
}

// True if `artifact` exists with the expected hash and --force is off.
bool up_to_date(const Experiment& e, const fs::path& artifact, const std::string& hash) {
    if (e.force || !fs::exists(artifact)) return false;
    const auto h = recorded_hash(artifact);
    if (h && *h == hash) return true;
    note(e, "warning: " + artifact.string() + " is stale (config hash " + h.value_or("missing") + ", expected " +
                hash + "); rebuilding");
    return false;
}

// Throws if an input is missing; warns if it was built from a different config.
void require(const Experiment& e, const fs::path& artifact, const std::string& hash, const std::string& producer) {
    if (!fs::exists(artifact)) throw MissingArtifact(artifact, producer);
    const auto h = recorded_hash(artifact);
    if (!h || *h != hash)
        note(e, "warning: stale artifact " + artifact.string() + " (config hash " + h.value_or("missing") +
                    ", current " + hash + "); rerun `" + producer + " --force` to refresh");
}

std::string csv_number(double v, int precision) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", precision, v);
    return buf;
}

std::vector<std::string> split_cells(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

std::ofstream open_output(const fs::path& p) {
    fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    return out;
}

std::string source_name(AttackType t) { return std::string(to_string(t)); }

AcousticModel load_required_model(const Experiment& e) {
    require(e, e.layout.model(), stage_hash(e.config, Stage::asr), "train-asr");
    return load_model(e.layout.model());
}

std::vector<LabeledFeature> load_features(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw std::runtime_error("cannot read " + p.string());
    return read_features_csv(in);
}

// Feature rows of one source, with forgery success attached from the attack manifest.
std::vector<LabeledFeature> load_source(const Experiment& e, FeatureMode mode, const std::string& source) {
    const fs::path p = e.layout.features(mode, source);
    require(e, p, stage_hash(e.config, Stage::defend), "defend");
    auto rows = load_features(p);
    if (source == "original") return rows;
    const AttackType type = parse_attack_type(source);
    std::map<std::string, bool> success;
    for (const auto& r : read_attack_manifest(e.layout.attack_manifest(type)))
        success[adversarial_id(r.id, source)] = r.flags.plain;
    for (auto& r : rows) {
        const auto it = success.find(r.sample_id);
        r.attack_succeeded = it != success.end() && it->second;
    }
    return rows;
}

std::vector<std::string> available_attack_sources(const Experiment& e, FeatureMode mode) {
    std::vector<std::string> out;
    for (AttackType t : e.config.attacks)
        if (fs::exists(e.layout.features(mode, source_name(t)))) out.push_back(source_name(t));
    return out;
}

std::uint64_t fnv1a(std::string_view text) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ull;
    }
    return h;
}

StageStatus write_histogram(const Experiment& e) {
    const fs::path out_path = e.layout.histogram();
    std::vector<std::string> sources{"original"};
    for (const auto& s : available_attack_sources(e, FeatureMode::character)) sources.push_back(s);
    std::string hash_input = stage_hash(e.config, Stage::report) + "|hist";
    for (const auto& s : sources) {
        const fs::path p = e.layout.features(FeatureMode::character, s);
        if (!fs::exists(p)) throw MissingArtifact(p, "defend");
        hash_input += "|" + s + ":" + recorded_hash(p).value_or("");
    }
    const std::string hash = fnv1a_hex(hash_input);
    if (up_to_date(e, out_path, hash)) return StageStatus::skipped;

    std::ostringstream csv;
    csv << "source,bin,mean_count,samples\n";
    for (const auto& s : sources) {
        std::array<double, histogram_bins> mean{};
        int n = 0;
        for (const auto& r : load_source(e, FeatureMode::character, s)) {
            if (r.label == Label::adversarial && !r.attack_succeeded && !e.config.detector.include_failed) continue;
            if (!r.features.histogram) continue;
            for (int z = 0; z < histogram_bins; ++z) mean[static_cast<std::size_t>(z)] += (*r.features.histogram)[static_cast<std::size_t>(z)];
            ++n;
        }
        for (int z = 0; z < histogram_bins; ++z) {
            const double v = n > 0 ? mean[static_cast<std::size_t>(z)] / n * e.config.defense.realizations : 0.0;
            csv << s << ',' << z << ',' << csv_number(v, 6) << ',' << n << '\n';
        }
    }
    auto out = open_output(out_path);
    out << csv.str();
    out.close();
    write_provenance(e, out_path, "hist", hash);
    note(e, "wrote " + out_path.string());
    return StageStatus::built;
}

}  // namespace

// ---------------------------------------------------------------- config API

std::string dump_config(const ExperimentConfig& config) { return to_json(config).dump(2); }

ExperimentConfig parse_config(const std::string& json_text, const std::vector<std::string>& overrides) {
    json merged = to_json(ExperimentConfig{});
    try {
        if (!json_text.empty()) {
            const json user = json::parse(json_text);
            merge_checked(merged, user, "");
        }
        for (const auto& o : overrides) apply_override(merged, o);
        ExperimentConfig c = from_json(merged);
        validate(c);
        return c;
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("config: ") + e.what());
    }
}

ExperimentConfig load_config(const fs::path& path, const std::vector<std::string>& overrides) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot read config " + path.string());
    std::stringstream text;
    text << in.rdbuf();
    return parse_config(text.str(), overrides);
}

std::string fnv1a_hex(std::string_view text) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(text)));
    return buf;
}

std::string stage_hash(const ExperimentConfig& config, Stage stage) {
    const json full = to_json(config);
    json part;
    part["seed"] = full["seed"];
    part["corpus"] = full["corpus"];
    if (stage >= Stage::asr) part["asr"] = full["asr"];
    if (stage >= Stage::attack) part["attack"] = full["attack"];
    if (stage >= Stage::defend) part["defense"] = full["defense"];
    if (stage >= Stage::detect) part["detector"] = full["detector"];
    if (stage >= Stage::report) part["attacks"] = full["attacks"];
    return fnv1a_hex(part.dump());
}

// ---------------------------------------------------------------- layout

fs::path Layout::corpus_manifest(const std::string& split) const { return root / "corpus" / split / "manifest.csv"; }
fs::path Layout::model() const { return root / "models" / "asr.json"; }
fs::path Layout::attack_dir(AttackType type) const { return root / "attacks" / std::string(to_string(type)); }
fs::path Layout::attack_manifest(AttackType type) const { return attack_dir(type) / "manifest.csv"; }
fs::path Layout::features(FeatureMode mode, const std::string& source) const {
    return root / "features" / (std::string(to_string(mode)) + "_" + source + ".csv");
}
fs::path Layout::detector(FeatureMode mode, ClassifierKind kind) const {
    return root / "detector" / (std::string(to_string(mode)) + "_" + std::string(to_string(kind)) + ".json");
}
fs::path Layout::detector_eval(FeatureMode mode, ClassifierKind kind) const {
    return root / "detector" / (std::string(to_string(mode)) + "_" + std::string(to_string(kind)) + "_eval.csv");
}
fs::path Layout::report() const { return root / "report" / "report.csv"; }
fs::path Layout::histogram() const { return root / "report" / "hist.csv"; }

fs::path provenance_path(const fs::path& artifact) {
    fs::path p = artifact;
    p += ".provenance.json";
    return p;
}

// ---------------------------------------------------------------- stages

StageStatus run_synth_corpus(const Experiment& e) {
    const auto& c = e.config;
    const std::string hash = stage_hash(c, Stage::corpus);
    const fs::path train_manifest = e.layout.corpus_manifest("train");
    const fs::path eval_manifest = e.layout.corpus_manifest("eval");
    if (up_to_date(e, train_manifest, hash) && up_to_date(e, eval_manifest, hash)) {
        note(e, "corpus up to date");
        return StageStatus::skipped;
    }
    const auto train = synthesize_corpus(c.synth, c.train_utterances, mix_seed(c.seed, 1));
    std::vector<Transcript> avoid{c.attack.target};
    for (const auto& u : train) avoid.push_back(u.text);
    const auto eval = synthesize_corpus(c.synth, c.eval_utterances, mix_seed(c.seed, 2), avoid);

    auto write_split = [&](const std::vector<Utterance>& utts, const fs::path& manifest) {
        fs::create_directories(manifest.parent_path());
        std::vector<ManifestEntry> entries;
        for (const auto& u : utts) {
            const fs::path wav = u.id + ".wav";
            write_wav(manifest.parent_path() / wav, u.audio);
            entries.push_back({wav, u.text});
        }
        write_manifest(manifest, entries);
        write_provenance(e, manifest, "synth-corpus", hash);
    };
    write_split(train, train_manifest);
    write_split(eval, eval_manifest);
    note(e, "wrote " + std::to_string(train.size()) + " training and " + std::to_string(eval.size()) +
                " evaluation utterances under " + (e.layout.root / "corpus").string());
    return StageStatus::built;
}

StageStatus run_train_asr(const Experiment& e) {
    const auto& c = e.config;
    const std::string hash = stage_hash(c, Stage::asr);
    if (up_to_date(e, e.layout.model(), hash)) {
        note(e, "model up to date");
        return StageStatus::skipped;
    }
    const fs::path manifest = e.layout.corpus_manifest("train");
    require(e, manifest, stage_hash(c, Stage::corpus), "synth-corpus");
    std::vector<Utterance> corpus;
    for (const auto& entry : read_manifest(manifest))
        corpus.push_back({entry.wav_path.stem().string(), read_wav(entry.wav_path), entry.transcript});
    if (corpus.empty()) throw std::invalid_argument("train-asr: the training manifest is empty");

    FrontendConfig frontend;
    frontend.sample_rate = c.synth.sample_rate;
    AcousticModel model = init_model(Alphabet(c.synth.alphabet), frontend, c.geometry, c.train_dropout_rate, mix_seed(c.seed, 3));
    fit_feature_normalization(model, prepare_examples(model, corpus));
    TrainConfig tc = c.training;
    tc.seed = mix_seed(c.seed, 4);
    TrainReport report;
    model = train(std::move(model), corpus, tc, &report);

    fs::create_directories(e.layout.model().parent_path());
    save_model(model, e.layout.model());
    write_provenance(e, e.layout.model(), "train-asr", hash);
    note(e, "trained " + std::to_string(report.steps) + " steps; held-out CTC loss " +
                csv_number(report.initial_holdout_loss, 3) + " -> " + csv_number(report.final_holdout_loss, 3));
    return StageStatus::built;
}

std::vector<AttackRecord> read_attack_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw MissingArtifact(path, "attack");
    std::string line;
    if (!std::getline(in, line) ||
        line != "wav_in,wav_out,attack_type,success_plain,success_dropout,success_denoised,db_gap,iterations")
        throw FormatError(path.string() + ": unexpected attack manifest header");
    std::vector<AttackRecord> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto cells = split_cells(line);
        if (cells.size() != 8) throw FormatError(path.string() + ": malformed row '" + line + "'");
        AttackRecord r;
        r.wav_in = path.parent_path() / cells[0];
        r.wav_out = path.parent_path() / cells[1];
        r.id = r.wav_in.stem().string();
        r.type = parse_attack_type(cells[2]);
        r.flags = {cells[3] == "1", cells[4] == "1", cells[5] == "1"};
        r.db_gap = std::stod(cells[6]);
        r.iterations = std::stoi(cells[7]);
        out.push_back(std::move(r));
    }
    return out;
}

StageStatus run_attack_stage(const Experiment& e, AttackType type, std::vector<AttackRecord>* records) {
    const auto& c = e.config;
    const std::string hash = stage_hash(c, Stage::attack);
    const fs::path manifest = e.layout.attack_manifest(type);
    if (up_to_date(e, manifest, hash)) {
        note(e, std::string(to_string(type)) + " attacks up to date");
        if (records) *records = read_attack_manifest(manifest);
        return StageStatus::skipped;
    }
    const AcousticModel model = load_required_model(e);
    const fs::path eval_manifest = e.layout.corpus_manifest("eval");
    require(e, eval_manifest, stage_hash(c, Stage::corpus), "synth-corpus");
    const auto entries = read_manifest(eval_manifest);
    const fs::path dir = e.layout.attack_dir(type);
    fs::create_directories(dir);

    std::vector<AttackRecord> out;
    std::ostringstream csv;
    csv << "wav_in,wav_out,attack_type,success_plain,success_dropout,success_denoised,db_gap,iterations\n";
    const std::uint64_t base_seed = mix_seed(c.seed, 5);
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const Waveform x = read_wav(entries[i].wav_path);
        AttackConfig ac = c.attack;
        ac.seed = mix_seed(base_seed, i);
        AttackResult result = run_attack(type, model, x, ac);

        AttackRecord r;
        r.id = entries[i].wav_path.stem().string();
        r.type = type;
        r.wav_in = entries[i].wav_path;
        r.wav_out = dir / (r.id + ".wav");
        const Waveform adversarial{x.samples + result.delta, x.sample_rate};
        if (const auto clipped = write_wav(r.wav_out, adversarial); clipped > 0)
            note(e, "warning: " + r.wav_out.string() + ": " + std::to_string(clipped) + " samples clipped");
        // Flags describe the audio as written, after 16-bit quantisation.
        r.flags = evaluate_success(model, read_wav(r.wav_out), ac);
        r.db_gap = result.final_db_gap;
        r.iterations = result.iterations_used;
        r.result = std::move(result);

        const auto b = [](bool v) { return v ? "1" : "0"; };
        csv << fs::relative(r.wav_in, dir).generic_string() << ',' << r.wav_out.filename().string() << ','
            << to_string(type) << ',' << b(r.flags.plain) << ',' << b(r.flags.dropout) << ',' << b(r.flags.denoised)
            << ',' << csv_number(r.db_gap, 4) << ',' << r.iterations << '\n';
        note(e, std::string(to_string(type)) + " " + r.id + ": plain=" + b(r.flags.plain) + " dropout=" +
                    b(r.flags.dropout) + " denoised=" + b(r.flags.denoised) + " gap=" + csv_number(r.db_gap, 1) + " dB");
        out.push_back(std::move(r));
    }
    auto file = open_output(manifest);
    file << csv.str();
    file.close();
    write_provenance(e, manifest, "attack", hash);
    if (records) *records = std::move(out);
    return StageStatus::built;
}

std::pair<FeatureVector, FeatureVector> defend_waveform(const AcousticModel& model, const Waveform& x,
                                                        const std::string& sample_id, const ExperimentConfig& config) {
    const std::uint64_t seed = mix_seed(mix_seed(config.seed, 6), fnv1a(sample_id));
    const RealizationSet rs = realize(model, x, config.defense.rate, config.defense.realizations, seed,
                                      config.defense.scope, true);
    return {moments(char_distribution(rs.transcripts), config.defense.moments),
            moments(prob_distribution(rs.posteriors), config.defense.moments)};
}

StageStatus run_defend(const Experiment& e) {
    const auto& c = e.config;
    const std::string hash = stage_hash(c, Stage::defend);

    struct Source {
        std::string name;
        std::vector<std::pair<std::string, fs::path>> samples;  // id, wav
        Label label;
    };
    std::vector<Source> sources;
    {
        const fs::path eval_manifest = e.layout.corpus_manifest("eval");
        require(e, eval_manifest, stage_hash(c, Stage::corpus), "synth-corpus");
        Source s{"original", {}, Label::original};
        for (const auto& entry : read_manifest(eval_manifest)) s.samples.emplace_back(entry.wav_path.stem().string(), entry.wav_path);
        sources.push_back(std::move(s));
    }
    for (AttackType t : c.attacks) {
        const fs::path m = e.layout.attack_manifest(t);
        if (!fs::exists(m)) {
            note(e, "no " + std::string(to_string(t)) + " attacks found; skipping that source");
            continue;
        }
        require(e, m, stage_hash(c, Stage::attack), "attack --type " + std::string(to_string(t)));
        Source s{source_name(t), {}, Label::adversarial};
        for (const auto& r : read_attack_manifest(m)) s.samples.emplace_back(adversarial_id(r.id, source_name(t)), r.wav_out);
        sources.push_back(std::move(s));
    }

    std::optional<AcousticModel> model;
    bool built = false;
    for (const auto& s : sources) {
        const fs::path char_path = e.layout.features(FeatureMode::character, s.name);
        const fs::path prob_path = e.layout.features(FeatureMode::probability, s.name);
        if (up_to_date(e, char_path, hash) && up_to_date(e, prob_path, hash)) {
            note(e, s.name + " features up to date");
            continue;
        }
        if (!model) model = load_required_model(e);
        std::vector<LabeledFeature> char_rows, prob_rows;
        for (const auto& [id, wav] : s.samples) {
            auto [fc, fp] = defend_waveform(*model, read_wav(wav), id, c);
            char_rows.push_back({id, s.label, std::move(fc), true});
            prob_rows.push_back({id, s.label, std::move(fp), true});
        }
        for (auto [path, rows] : {std::pair{char_path, &char_rows}, std::pair{prob_path, &prob_rows}}) {
            auto out = open_output(path);
            write_features_csv(out, *rows);
            out.close();
            write_provenance(e, path, "defend", hash);
        }
        note(e, "wrote features for " + std::to_string(s.samples.size()) + " " + s.name + " samples");
        built = true;
    }
    return built ? StageStatus::built : StageStatus::skipped;
}

StageStatus run_detect(const Experiment& e, ClassifierKind kind, FeatureMode mode) {
    const auto& c = e.config;
    if (kind == ClassifierKind::svmf && mode == FeatureMode::probability)
        throw std::invalid_argument("detect: svmf is only defined for --mode char");
    const auto attack_sources = available_attack_sources(e, mode);
    const std::string& train_attack = c.detector.train_attack;
    if (std::find(attack_sources.begin(), attack_sources.end(), train_attack) == attack_sources.end())
        throw MissingArtifact(e.layout.features(mode, train_attack), "attack --type " + train_attack + "` and `defend");

    std::string hash_input = stage_hash(c, Stage::detect);
    for (const auto& s : attack_sources) hash_input += "|" + s;
    const std::string hash = fnv1a_hex(hash_input);
    const fs::path model_path = e.layout.detector(mode, kind);
    const fs::path eval_path = e.layout.detector_eval(mode, kind);
    if (up_to_date(e, model_path, hash) && up_to_date(e, eval_path, hash)) {
        note(e, "detector " + model_path.filename().string() + " up to date");
        return StageStatus::skipped;
    }

    std::vector<LabeledFeature> all = load_source(e, mode, "original");
    for (const auto& s : attack_sources) {
        auto rows = load_source(e, mode, s);
        all.insert(all.end(), rows.begin(), rows.end());
    }
    const auto [train_split, test_split] = split_70_30(all, mix_seed(c.seed, 7));
    const auto train_set = select_attack(train_split, train_attack, c.detector.include_failed);
    const Detector detector = train_detector(kind, mode, train_set, c.detector.svm, c.detector.tree_depth);
    fs::create_directories(model_path.parent_path());
    save_detector(detector, model_path);
    write_provenance(e, model_path, "detect", hash);

    std::ostringstream csv;
    csv << "attack,accuracy,auc,originals,adversarial,true_positive,false_positive,true_negative,false_negative\n";
    for (const auto& s : attack_sources) {
        const auto test = select_attack(test_split, s, c.detector.include_failed);
        const auto adv = std::count_if(test.begin(), test.end(), [](const auto& r) { return r.label == Label::adversarial; });
        if (adv == 0) {
            note(e, "warning: no usable " + s + " samples in the test split; skipped");
            continue;
        }
        const EvalReport r = evaluate(detector, test);
        csv << s << ',' << csv_number(r.accuracy, 2) << ',' << csv_number(r.auc, 4) << ','
            << static_cast<long>(test.size()) - adv << ',' << adv << ',' << r.true_positive << ','
            << r.false_positive << ',' << r.true_negative << ',' << r.false_negative << '\n';
        note(e, std::string(to_string(mode)) + "/" + std::string(to_string(kind)) + " on " + s + ": accuracy " +
                    csv_number(r.accuracy, 1) + "%, AUC " + csv_number(r.auc, 3));
    }
    auto out = open_output(eval_path);
    out << csv.str();
    out.close();
    write_provenance(e, eval_path, "detect", hash);
    return StageStatus::built;
}

StageStatus run_hist(const Experiment& e) { return write_histogram(e); }

StageStatus run_report(const Experiment& e) {
    const auto& c = e.config;
    struct Input {
        FeatureMode mode;
        ClassifierKind kind;
        fs::path path;
    };
    std::vector<Input> inputs;
    std::string hash_input = stage_hash(c, Stage::report);
    for (FeatureMode mode : {FeatureMode::character, FeatureMode::probability})
        for (ClassifierKind kind : {ClassifierKind::stump, ClassifierKind::svm4, ClassifierKind::svmf, ClassifierKind::tree}) {
            const fs::path p = e.layout.detector_eval(mode, kind);
            if (!fs::exists(p)) continue;
            inputs.push_back({mode, kind, p});
            hash_input += "|" + p.filename().string() + ":" + recorded_hash(p).value_or("");
        }
    if (inputs.empty()) throw MissingArtifact(e.layout.detector_eval(FeatureMode::character, ClassifierKind::svm4), "detect");

    const std::string hash = fnv1a_hex(hash_input);
    StageStatus status = StageStatus::skipped;
    if (!up_to_date(e, e.layout.report(), hash)) {
        std::ostringstream csv;
        csv << "feature_mode,classifier,attack,accuracy,auc\n";
        for (const auto& in : inputs) {
            std::ifstream f(in.path);
            std::string line;
            std::getline(f, line);
            while (std::getline(f, line)) {
                if (line.empty()) continue;
                const auto cells = split_cells(line);
                if (cells.size() < 3) throw FormatError(in.path.string() + ": malformed row");
                csv << to_string(in.mode) << ',' << to_string(in.kind) << ',' << cells[0] << ',' << cells[1] << ','
                    << cells[2] << '\n';
            }
        }
        auto out = open_output(e.layout.report());
        out << csv.str();
        out.close();
        write_provenance(e, e.layout.report(), "report", hash);
        note(e, "wrote " + e.layout.report().string());
        status = StageStatus::built;
    } else {
        note(e, "report up to date");
    }
    if (write_histogram(e) == StageStatus::built) status = StageStatus::built;
    return status;
}

}  // namespace dropdef
