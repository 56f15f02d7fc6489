#include "dropdef/model.hpp"
#include "dropdef/rng.hpp"

#include "json.hpp"

#include <cmath>
#include <fstream>

namespace dropdef {

namespace {

constexpr std::uint32_t mask_tag = 0xD50F0u;
constexpr int recurrent_mask_layer = 100;

void check_rate(const DropoutSpec& spec) {
    if (!(spec.rate >= 0.0 && spec.rate < 1.0))
        throw std::invalid_argument("dropout rate must be in [0, 1)");
}

Matrix dropout_mask(const DropoutSpec& spec, int layer, Eigen::Index frames, Eigen::Index width) {
    const auto key = Philox4x32::key_from_seed(spec.seed);
    const double keep = 1.0 / (1.0 - spec.rate);
    Matrix mask(frames, width);
    for (Eigen::Index t = 0; t < frames; ++t) {
        for (Eigen::Index j0 = 0; j0 < width; j0 += 4) {
            const auto block = Philox4x32::block({static_cast<std::uint32_t>(t), static_cast<std::uint32_t>(j0 / 4),
                                                  static_cast<std::uint32_t>(layer), mask_tag},
                                                 key);
            for (Eigen::Index j = j0; j < std::min(j0 + 4, width); ++j)
                mask(t, j) = to_unit_open(block[static_cast<std::size_t>(j - j0)]) < spec.rate ? 0.0 : keep;
        }
    }
    return mask;
}

bool dropout_active(const std::optional<DropoutSpec>& d) { return d && d->rate > 0.0; }

Matrix stack_context(const Matrix& normalised, int context) {
    const Eigen::Index frames = normalised.rows();
    const Eigen::Index bands = normalised.cols();
    Matrix out(frames, (2 * context + 1) * bands);
    for (Eigen::Index t = 0; t < frames; ++t)
        for (int o = -context; o <= context; ++o) {
            const Eigen::Index src = std::clamp<Eigen::Index>(t + o, 0, frames - 1);
            out.block(t, (o + context) * bands, 1, bands) = normalised.row(src);
        }
    return out;
}

Matrix unstack_context(const Matrix& grad, int context, Eigen::Index bands) {
    const Eigen::Index frames = grad.rows();
    Matrix out = Matrix::Zero(frames, bands);
    for (Eigen::Index t = 0; t < frames; ++t)
        for (int o = -context; o <= context; ++o) {
            const Eigen::Index src = std::clamp<Eigen::Index>(t + o, 0, frames - 1);
            out.row(src) += grad.block(t, (o + context) * bands, 1, bands);
        }
    return out;
}

Matrix he_uniform(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
    const double limit = std::sqrt(6.0 / static_cast<double>(cols));
    Matrix m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = rng.uniform(-limit, limit);
    return m;
}

// JSON helpers: matrices as {rows, cols, data (column-major)}.
nlohmann::json to_json(const Matrix& m) {
    return {{"rows", m.rows()}, {"cols", m.cols()},
            {"data", std::vector<double>(m.data(), m.data() + m.size())}};
}

Matrix matrix_from_json(const nlohmann::json& j) {
    const auto rows = j.at("rows").get<Eigen::Index>();
    const auto cols = j.at("cols").get<Eigen::Index>();
    const auto data = j.at("data").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(data.size()) != rows * cols) throw FormatError("checkpoint: matrix size mismatch");
    return Eigen::Map<const Matrix>(data.data(), rows, cols);
}

nlohmann::json to_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vector vector_from_json(const nlohmann::json& j) {
    const auto data = j.get<std::vector<double>>();
    return Eigen::Map<const Vector>(data.data(), static_cast<Eigen::Index>(data.size()));
}

nlohmann::json to_json(const DenseLayer& l) {
    return {{"weight", to_json(l.weight)}, {"bias", to_json(l.bias)}};
}

DenseLayer dense_from_json(const nlohmann::json& j) {
    return {matrix_from_json(j.at("weight")), vector_from_json(j.at("bias"))};
}

}  // namespace

double dropout_keep_scale(const DropoutSpec& spec, int layer, Eigen::Index frame, Eigen::Index unit) {
    check_rate(spec);
    const auto block = Philox4x32::block({static_cast<std::uint32_t>(frame), static_cast<std::uint32_t>(unit / 4),
                                          static_cast<std::uint32_t>(layer), mask_tag},
                                         Philox4x32::key_from_seed(spec.seed));
    return to_unit_open(block[static_cast<std::size_t>(unit % 4)]) < spec.rate ? 0.0 : 1.0 / (1.0 - spec.rate);
}

Parameters Parameters::zeros_like() const {
    Parameters z;
    for (const auto& l : hidden) z.hidden.push_back({Matrix::Zero(l.weight.rows(), l.weight.cols()), Vector::Zero(l.bias.size())});
    if (recurrent)
        z.recurrent = RecurrentLayer{Matrix::Zero(recurrent->input_weight.rows(), recurrent->input_weight.cols()),
                                     Matrix::Zero(recurrent->recurrent_weight.rows(), recurrent->recurrent_weight.cols()),
                                     Vector::Zero(recurrent->bias.size())};
    z.output = {Matrix::Zero(output.weight.rows(), output.weight.cols()), Vector::Zero(output.bias.size())};
    return z;
}

void Parameters::axpy(double a, const Parameters& other) {
    for (std::size_t i = 0; i < hidden.size(); ++i) {
        hidden[i].weight += a * other.hidden[i].weight;
        hidden[i].bias += a * other.hidden[i].bias;
    }
    if (recurrent) {
        recurrent->input_weight += a * other.recurrent->input_weight;
        recurrent->recurrent_weight += a * other.recurrent->recurrent_weight;
        recurrent->bias += a * other.recurrent->bias;
    }
    output.weight += a * other.output.weight;
    output.bias += a * other.output.bias;
}

void Parameters::scale(double a) {
    for (auto& l : hidden) {
        l.weight *= a;
        l.bias *= a;
    }
    if (recurrent) {
        recurrent->input_weight *= a;
        recurrent->recurrent_weight *= a;
        recurrent->bias *= a;
    }
    output.weight *= a;
    output.bias *= a;
}

double Parameters::squared_norm() const {
    double s = 0.0;
    for (const auto& l : hidden) s += l.weight.squaredNorm() + l.bias.squaredNorm();
    if (recurrent)
        s += recurrent->input_weight.squaredNorm() + recurrent->recurrent_weight.squaredNorm() +
             recurrent->bias.squaredNorm();
    return s + output.weight.squaredNorm() + output.bias.squaredNorm();
}

bool Parameters::all_finite() const {
    auto ok = [](const auto& m) { return m.allFinite(); };
    for (const auto& l : hidden)
        if (!ok(l.weight) || !ok(l.bias)) return false;
    if (recurrent && (!ok(recurrent->input_weight) || !ok(recurrent->recurrent_weight) || !ok(recurrent->bias)))
        return false;
    return ok(output.weight) && ok(output.bias);
}

Eigen::Index Parameters::count() const {
    Eigen::Index n = 0;
    for (const auto& l : hidden) n += l.weight.size() + l.bias.size();
    if (recurrent) n += recurrent->input_weight.size() + recurrent->recurrent_weight.size() + recurrent->bias.size();
    return n + output.weight.size() + output.bias.size();
}

AcousticModel init_model(const Alphabet& alphabet, const FrontendConfig& frontend,
                         const ModelGeometry& geometry, double train_dropout_rate,
                         std::uint64_t seed) {
    if (alphabet.size() == 0) throw std::invalid_argument("init_model: empty alphabet");
    if (geometry.hidden_layers < 1 || geometry.hidden_width < 1 || geometry.context < 0 ||
        geometry.recurrent_width < 0)
        throw std::invalid_argument("init_model: invalid geometry");
    check_rate({train_dropout_rate, 0});

    AcousticModel model;
    model.alphabet = alphabet;
    model.frontend = frontend;
    model.geometry = geometry;
    model.train_dropout_rate = train_dropout_rate;
    model.feature_mean = Vector::Zero(frontend.mel_bands);
    model.feature_inv_std = Vector::Ones(frontend.mel_bands);

    Rng rng(seed, 1);
    Eigen::Index in = model.input_width();
    for (int l = 0; l < geometry.hidden_layers; ++l) {
        model.params.hidden.push_back({he_uniform(rng, geometry.hidden_width, in), Vector::Zero(geometry.hidden_width)});
        in = geometry.hidden_width;
    }
    if (geometry.recurrent_width > 0) {
        const int r = geometry.recurrent_width;
        RecurrentLayer rec;
        rec.input_weight = he_uniform(rng, r, in) * std::sqrt(0.5);
        // Small recurrent weights keep the tanh layer away from saturation early on.
        rec.recurrent_weight = he_uniform(rng, r, r) * 0.2;
        rec.bias = Vector::Zero(r);
        model.params.recurrent = std::move(rec);
        in = r;
    }
    model.params.output = {he_uniform(rng, alphabet.classes(), in) * std::sqrt(0.5), Vector::Zero(alphabet.classes())};
    return model;
}

ForwardTrace forward_traced(const AcousticModel& model, const Matrix& features,
                            const std::optional<DropoutSpec>& dropout) {
    if (features.cols() != model.frontend.mel_bands)
        throw ShapeError("forward: feature width " + std::to_string(features.cols()) + " != model input bands " +
                         std::to_string(model.frontend.mel_bands));
    if (features.rows() == 0) throw ShapeError("forward: no frames");
    if (dropout) check_rate(*dropout);
    const bool active = dropout_active(dropout);
    const Eigen::Index frames = features.rows();

    ForwardTrace tr;
    const Matrix normalised =
        ((features.rowwise() - model.feature_mean.transpose()).array().rowwise() *
         model.feature_inv_std.transpose().array())
            .matrix();
    tr.input = stack_context(normalised, model.geometry.context);

    const Matrix* prev = &tr.input;
    for (std::size_t l = 0; l < model.params.hidden.size(); ++l) {
        const auto& layer = model.params.hidden[l];
        Matrix z = (*prev) * layer.weight.transpose();
        z.rowwise() += layer.bias.transpose();
        Matrix a = z.cwiseMax(0.0);
        Matrix mask;
        if (active) {
            mask = dropout_mask(*dropout, static_cast<int>(l), frames, a.cols());
            a.array() *= mask.array();
        }
        tr.pre.push_back(std::move(z));
        tr.out.push_back(std::move(a));
        tr.masks.push_back(std::move(mask));
        prev = &tr.out.back();
    }

    Matrix recurrent_out;
    if (model.params.recurrent) {
        const auto& rec = *model.params.recurrent;
        const Matrix drive = ((*prev) * rec.input_weight.transpose()).rowwise() + rec.bias.transpose();
        tr.recurrent_state.resize(frames, rec.bias.size());
        Vector h = Vector::Zero(rec.bias.size());
        for (Eigen::Index t = 0; t < frames; ++t) {
            h = (drive.row(t).transpose() + rec.recurrent_weight * h).array().tanh().matrix();
            tr.recurrent_state.row(t) = h.transpose();
        }
        recurrent_out = tr.recurrent_state;
        if (active && dropout->scope == DropoutScope::dense_and_recurrent) {
            tr.recurrent_mask = dropout_mask(*dropout, recurrent_mask_layer, frames, recurrent_out.cols());
            recurrent_out.array() *= tr.recurrent_mask.array();
        }
        prev = &recurrent_out;
    }

    tr.logits = (*prev) * model.params.output.weight.transpose();
    tr.logits.rowwise() += model.params.output.bias.transpose();
    tr.posteriors = log_softmax(tr.logits);
    return tr;
}

BackwardResult backward(const AcousticModel& model, const ForwardTrace& tr, const Matrix& grad_logits,
                        bool want_params, bool want_features) {
    if (grad_logits.rows() != tr.logits.rows() || grad_logits.cols() != tr.logits.cols())
        throw ShapeError("backward: gradient shape mismatch");
    BackwardResult result;
    Parameters grads;
    if (want_params) grads = model.params.zeros_like();

    const Matrix& last_hidden = tr.out.back();
    Matrix recurrent_out;
    if (model.params.recurrent) {
        recurrent_out = tr.recurrent_state;
        if (tr.recurrent_mask.size() > 0) recurrent_out.array() *= tr.recurrent_mask.array();
    }
    const Matrix& top = model.params.recurrent ? recurrent_out : last_hidden;

    if (want_params) {
        grads.output.weight = grad_logits.transpose() * top;
        grads.output.bias = grad_logits.colwise().sum().transpose();
    }
    Matrix g = grad_logits * model.params.output.weight;  // d/d top

    if (model.params.recurrent) {
        const auto& rec = *model.params.recurrent;
        if (tr.recurrent_mask.size() > 0) g.array() *= tr.recurrent_mask.array();
        const Eigen::Index frames = g.rows();
        Matrix grad_drive(frames, rec.bias.size());
        Vector carry = Vector::Zero(rec.bias.size());  // d/dh_t from step t+1
        for (Eigen::Index t = frames - 1; t >= 0; --t) {
            const Vector h = tr.recurrent_state.row(t).transpose();
            const Vector dh = g.row(t).transpose() + carry;
            const Vector da = dh.array() * (1.0 - h.array().square());
            grad_drive.row(t) = da.transpose();
            carry = rec.recurrent_weight.transpose() * da;
        }
        if (want_params) {
            auto& gr = *grads.recurrent;
            gr.input_weight = grad_drive.transpose() * last_hidden;
            gr.bias = grad_drive.colwise().sum().transpose();
            if (frames > 1)
                gr.recurrent_weight = grad_drive.bottomRows(frames - 1).transpose() * tr.recurrent_state.topRows(frames - 1);
        }
        g = grad_drive * rec.input_weight;
    }

    for (std::size_t l = model.params.hidden.size(); l-- > 0;) {
        if (tr.masks[l].size() > 0) g.array() *= tr.masks[l].array();
        g = (tr.pre[l].array() > 0.0).select(g, 0.0);
        const Matrix& below = l == 0 ? tr.input : tr.out[l - 1];
        if (want_params) {
            grads.hidden[l].weight = g.transpose() * below;
            grads.hidden[l].bias = g.colwise().sum().transpose();
        }
        if (l > 0 || want_features) g = g * model.params.hidden[l].weight;
    }

    if (want_features) {
        const Matrix grad_norm = unstack_context(g, model.geometry.context, model.frontend.mel_bands);
        result.features = (grad_norm.array().rowwise() * model.feature_inv_std.transpose().array()).matrix();
    }
    if (want_params) result.params = std::move(grads);
    return result;
}

Transcript transcribe(const AcousticModel& model, const Waveform& x, const std::optional<DropoutSpec>& dropout) {
    return greedy_decode(forward(model, featurize(x, model.frontend), dropout), model.alphabet);
}

RealizationSet realize(const AcousticModel& model, const Waveform& x, double rate, int count, std::uint64_t seed,
                       DropoutScope scope, bool keep_posteriors) {
    if (count < 2) throw std::invalid_argument("realize: need at least two realizations");
    if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("realize: dropout rate must lie in [0, 1)");
    const Matrix features = featurize(x, model.frontend);
    RealizationSet out;
    out.rate = rate;
    out.seed = seed;
    out.transcripts.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        CtcPosteriors post = forward(model, features, DropoutSpec{rate, seed ^ static_cast<std::uint64_t>(i), scope});
        out.transcripts.push_back(greedy_decode(post, model.alphabet));
        if (keep_posteriors) out.posteriors.push_back(std::move(post));
    }
    return out;
}

void save_model(const AcousticModel& model, const std::filesystem::path& path) {
    nlohmann::json j;
    j["format"] = "dropdef-acoustic-model";
    j["version"] = 1;
    j["alphabet"] = model.alphabet.symbols();
    const auto& fe = model.frontend;
    j["frontend"] = {{"sample_rate", fe.sample_rate},
                     {"window_size", fe.stft.window_size},
                     {"hop", fe.stft.hop},
                     {"window", fe.stft.window == WindowKind::hann ? "hann" : "rectangular"},
                     {"mel_bands", fe.mel_bands},
                     {"fmin", fe.fmin},
                     {"fmax", fe.fmax},
                     {"log_floor", fe.log_floor}};
    const auto& g = model.geometry;
    j["geometry"] = {{"context", g.context},
                     {"hidden_layers", g.hidden_layers},
                     {"hidden_width", g.hidden_width},
                     {"recurrent_width", g.recurrent_width}};
    j["train_dropout_rate"] = model.train_dropout_rate;
    j["feature_mean"] = to_json(model.feature_mean);
    j["feature_inv_std"] = to_json(model.feature_inv_std);
    auto& layers = j["hidden"] = nlohmann::json::array();
    for (const auto& l : model.params.hidden) layers.push_back(to_json(l));
    if (model.params.recurrent)
        j["recurrent"] = {{"input_weight", to_json(model.params.recurrent->input_weight)},
                          {"recurrent_weight", to_json(model.params.recurrent->recurrent_weight)},
                          {"bias", to_json(model.params.recurrent->bias)}};
    j["output"] = to_json(model.params.output);

    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_model: cannot open " + path.string());
    out << j.dump() << '\n';
}

AcousticModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_model: cannot open " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("load_model: " + std::string(e.what()));
    }
    if (j.value("format", "") != "dropdef-acoustic-model" || j.value("version", 0) != 1)
        throw FormatError("load_model: unsupported checkpoint format in " + path.string());
    try {
        AcousticModel m;
        m.alphabet = Alphabet(j.at("alphabet").get<std::string>());
        const auto& fe = j.at("frontend");
        m.frontend.sample_rate = fe.at("sample_rate");
        m.frontend.stft.window_size = fe.at("window_size");
        m.frontend.stft.hop = fe.at("hop");
        m.frontend.stft.window = fe.at("window") == "hann" ? WindowKind::hann : WindowKind::rectangular;
        m.frontend.mel_bands = fe.at("mel_bands");
        m.frontend.fmin = fe.at("fmin");
        m.frontend.fmax = fe.at("fmax");
        m.frontend.log_floor = fe.at("log_floor");
        const auto& g = j.at("geometry");
        m.geometry.context = g.at("context");
        m.geometry.hidden_layers = g.at("hidden_layers");
        m.geometry.hidden_width = g.at("hidden_width");
        m.geometry.recurrent_width = g.at("recurrent_width");
        m.train_dropout_rate = j.at("train_dropout_rate");
        m.feature_mean = vector_from_json(j.at("feature_mean"));
        m.feature_inv_std = vector_from_json(j.at("feature_inv_std"));
        for (const auto& l : j.at("hidden")) m.params.hidden.push_back(dense_from_json(l));
        if (j.contains("recurrent")) {
            const auto& r = j.at("recurrent");
            m.params.recurrent = RecurrentLayer{matrix_from_json(r.at("input_weight")),
                                                matrix_from_json(r.at("recurrent_weight")),
                                                vector_from_json(r.at("bias"))};
        }
        m.params.output = dense_from_json(j.at("output"));
        if (m.params.output.weight.rows() != m.alphabet.classes())
            throw FormatError("load_model: output width does not match alphabet");
        if (!m.params.all_finite()) throw FormatError("load_model: non-finite parameters");
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("load_model: " + std::string(e.what()));
    }
}

}  // namespace dropdef
