// Command-line surface: training, bound evaluation, cost sweeps and the
// latent-space analysis commands, all emitting CSV/PGM artifacts.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "qlvm/analysis.hpp"
#include "qlvm/baselines.hpp"
#include "qlvm/data.hpp"
#include "qlvm/errors.hpp"
#include "qlvm/io.hpp"
#include "qlvm/lattice.hpp"
#include "qlvm/net.hpp"
#include "qlvm/qlvm.hpp"
#include "qlvm/rng.hpp"

namespace {

using namespace qlvm;

using ConfigMap = std::map<std::string, std::string>;

// Flat key=value configuration. Every key has a default; unknown keys are
// rejected wherever they come from (file or --set).
ConfigMap default_config() {
    return {
        {"data", "synth"},
        {"idx_images", ""},
        {"idx_labels", ""},
        {"synth_n", "2000"},
        {"synth_k", "8"},
        {"synth_side", "16"},
        {"synth_sigma", "1.5"},
        {"synth_jitter", "-1"},
        {"data_seed", "0"},
        {"train_fraction", "0.9"},
        {"model", "qlvm"},
        {"latent_dim", "2"},
        {"hidden", "32,64"},
        {"enc_hidden", "64"},
        {"embedding", "periodic"},
        {"prior", "auto"},
        {"activation", "relu"},
        {"head", "bernoulli"},
        {"gaussian_variance", "0.1"},
        {"m", "233"},
        {"korobov_a", "0"},
        {"sample_mode", "shifted"},
        {"samples", "0"},
        {"epochs", "200"},
        {"batch_size", "100"},
        {"learning_rate", "0.001"},
        {"m_eval", "6765"},
        {"n_shifts", "20"},
        {"bandwidth", "0.1"},
        {"resolution", "256"},
        {"h_fd", "0.0001"},
        {"smooth_bandwidth", "0.05"},
        {"steps", "8"},
        {"start", ""},
        {"direction", ""},
        {"source", ""},
        {"destination", ""},
        {"source_centroid", "-1"},
        {"destination_centroid", "-1"},
        {"epsilon", "1e-12"},
        {"n_samples", "16"},
        {"sweep_values", ""},
    };
}

// Keys an evaluate/analysis run inherits from the checkpoint's stored config
// so a checkpoint alone reproduces its data and model setup. Training
// hyperparameters and run plumbing are not inherited.
const char* const kInheritedKeys[] = {
    "data",        "idx_images", "idx_labels", "synth_n",     "synth_k",
    "synth_side",  "synth_sigma", "synth_jitter", "data_seed", "train_fraction",
    "model",       "latent_dim", "hidden",     "enc_hidden",  "embedding",
    "prior",       "activation", "head",       "gaussian_variance",
    "m",           "korobov_a",  "sample_mode", "samples",
};

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

void set_key(ConfigMap& cfg, const std::string& key, const std::string& value,
             const std::string& origin) {
    if (!cfg.count(key))
        throw std::invalid_argument("unknown config key from " + origin + ": " + key);
    cfg[key] = value;
}

void apply_config_file(ConfigMap& cfg, const std::string& path) {
    std::istringstream in(read_text_file(path));
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const std::size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument(path + ":" + std::to_string(lineno) +
                                        ": expected key=value");
        set_key(cfg, trim(t.substr(0, eq)), trim(t.substr(eq + 1)), path);
    }
}

void apply_overrides(ConfigMap& cfg, const std::vector<std::string>& sets) {
    for (const std::string& s : sets) {
        const std::size_t eq = s.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("--set expects key=value, got: " + s);
        set_key(cfg, trim(s.substr(0, eq)), trim(s.substr(eq + 1)), "--set");
    }
}

const std::string& get_string(const ConfigMap& cfg, const std::string& key) {
    return cfg.at(key);
}

std::int64_t get_int(const ConfigMap& cfg, const std::string& key) {
    const std::string& v = cfg.at(key);
    try {
        std::size_t used = 0;
        const std::int64_t r = std::stoll(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw std::invalid_argument("config key " + key + ": not an integer: " + v);
    }
}

std::uint64_t get_u64(const ConfigMap& cfg, const std::string& key) {
    const std::string& v = cfg.at(key);
    try {
        std::size_t used = 0;
        const std::uint64_t r = std::stoull(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw std::invalid_argument("config key " + key + ": not an unsigned integer: " + v);
    }
}

double get_double(const ConfigMap& cfg, const std::string& key) {
    const std::string& v = cfg.at(key);
    try {
        std::size_t used = 0;
        const double r = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw std::invalid_argument("config key " + key + ": not a number: " + v);
    }
}

std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(v);
    while (std::getline(in, item, ',')) out.push_back(trim(item));
    return out;
}

std::vector<std::int64_t> get_int_list(const ConfigMap& cfg, const std::string& key) {
    std::vector<std::int64_t> out;
    for (const std::string& item : split_list(get_string(cfg, key))) {
        try {
            std::size_t used = 0;
            out.push_back(std::stoll(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw std::invalid_argument("config key " + key + ": not an integer list entry: " +
                                        item);
        }
    }
    return out;
}

std::vector<double> get_double_list(const ConfigMap& cfg, const std::string& key) {
    std::vector<double> out;
    for (const std::string& item : split_list(get_string(cfg, key))) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw std::invalid_argument("config key " + key + ": not a number list entry: " +
                                        item);
        }
    }
    return out;
}

std::string choice_error(const std::string& key, const std::string& v,
                         const std::string& allowed) {
    return "config key " + key + ": unknown value '" + v + "' (expected " + allowed + ")";
}

Embedding parse_embedding(const std::string& v) {
    if (v == "periodic") return Embedding::periodic_sincos;
    if (v == "identity") return Embedding::identity;
    if (v == "icdf") return Embedding::gaussian_icdf;
    throw std::invalid_argument(choice_error("embedding", v, "periodic|identity|icdf"));
}

Activation parse_activation(const std::string& v) {
    if (v == "relu") return Activation::relu;
    if (v == "tanh") return Activation::tanh;
    throw std::invalid_argument(choice_error("activation", v, "relu|tanh"));
}

Head parse_head(const std::string& v) {
    if (v == "bernoulli") return Head::bernoulli_logits;
    if (v == "gaussian") return Head::gaussian_mean;
    throw std::invalid_argument(choice_error("head", v, "bernoulli|gaussian"));
}

SampleMode parse_sample_mode(const std::string& v) {
    if (v == "shifted") return SampleMode::shifted_rqmc;
    if (v == "fixed") return SampleMode::fixed_qmc;
    if (v == "mc") return SampleMode::plain_mc;
    throw std::invalid_argument(choice_error("sample_mode", v, "shifted|fixed|mc"));
}

PriorTransform resolve_prior(const ConfigMap& cfg, Embedding embedding) {
    const std::string& v = get_string(cfg, "prior");
    PriorTransform prior;
    if (v == "auto") {
        prior.kind = embedding == Embedding::identity ? PriorKind::gaussian_icdf
                                                      : PriorKind::uniform_torus;
    } else if (v == "uniform") {
        prior.kind = PriorKind::uniform_torus;
    } else if (v == "icdf") {
        prior.kind = PriorKind::gaussian_icdf;
    } else if (v == "identity") {
        prior.kind = PriorKind::identity_nonperiodic;
    } else {
        throw std::invalid_argument(choice_error("prior", v, "auto|uniform|icdf|identity"));
    }
    return prior;
}

// Rule selection: an explicit generator wins, then the Fibonacci rule when
// it applies (d=2, m a Fibonacci number), then an exhaustive Korobov search.
LatticeRule resolve_rule(int d, std::int64_t m, std::int64_t a) {
    if (d < 1 || d > 3) throw std::invalid_argument("latent_dim must be 1, 2 or 3");
    if (m < 2) throw std::invalid_argument("lattice size m must be at least 2");
    if (a < 0) throw std::invalid_argument("korobov_a must be 0 (auto) or at least 2");
    if (d == 1) {
        LatticeRule rule;
        rule.dimension = 1;
        rule.count = m;
        rule.generator = {1};
        return rule;
    }
    if (a > 0) return korobov_rule(m, a, d);
    if (d == 2) {
        std::int64_t lo = 1, hi = 1;
        int k = 2;
        while (hi < m) {
            const std::int64_t next = lo + hi;
            lo = hi;
            hi = next;
            ++k;
        }
        if (hi == m && k >= 3) return fibonacci_rule(k);
    }
    return korobov_search(m, d);
}

Dataset load_data(const ConfigMap& cfg) {
    const std::string& kind = get_string(cfg, "data");
    if (kind == "synth") {
        return synth_mixture(get_u64(cfg, "data_seed"),
                             static_cast<int>(get_int(cfg, "synth_k")),
                             static_cast<int>(get_int(cfg, "synth_n")),
                             static_cast<int>(get_int(cfg, "synth_side")),
                             get_double(cfg, "synth_sigma"), get_double(cfg, "synth_jitter"));
    }
    if (kind == "idx") {
        const std::string& images = get_string(cfg, "idx_images");
        if (images.empty())
            throw std::invalid_argument("config key idx_images: required when data=idx");
        return load_idx(images, get_string(cfg, "idx_labels"));
    }
    throw std::invalid_argument(choice_error("data", kind, "synth|idx"));
}

NetworkSpec decoder_spec(ConfigMap& cfg, int data_dim) {
    NetworkSpec spec;
    // Amortized baselines decode real-valued latents; the torus embedding is
    // a lattice-model construct.
    if (get_string(cfg, "model") != "qlvm") cfg["embedding"] = "identity";
    spec.embedding = parse_embedding(get_string(cfg, "embedding"));
    spec.input_dim = static_cast<int>(get_int(cfg, "latent_dim"));
    if (spec.input_dim < 1 || spec.input_dim > 3)
        throw std::invalid_argument("latent_dim must be 1, 2 or 3");
    for (std::int64_t w : get_int_list(cfg, "hidden")) {
        if (w < 1) throw std::invalid_argument("config key hidden: widths must be positive");
        spec.layer_widths.push_back(static_cast<int>(w));
    }
    spec.layer_widths.push_back(data_dim);
    spec.activation = parse_activation(get_string(cfg, "activation"));
    spec.head = parse_head(get_string(cfg, "head"));
    spec.gaussian_variance = get_double(cfg, "gaussian_variance");
    if (spec.gaussian_variance <= 0.0)
        throw std::invalid_argument("config key gaussian_variance: must be positive");
    return spec;
}

int resolve_samples(ConfigMap& cfg) {
    int samples = static_cast<int>(get_int(cfg, "samples"));
    if (samples == 0) samples = get_string(cfg, "model") == "iwae" ? 10 : 1;
    if (samples < 1) throw std::invalid_argument("config key samples: must be positive");
    cfg["samples"] = std::to_string(samples);
    return samples;
}

std::string resolved_config_text(const ConfigMap& cfg) {
    std::string out;
    for (const auto& [k, v] : cfg) out += k + "=" + v + "\n";
    return out;
}

void write_run_config(const ConfigMap& cfg, const std::string& output) {
    write_text_file(output + "/config.txt", resolved_config_text(cfg));
}

// Shared state of the checkpoint-consuming commands.
struct Loaded {
    Checkpoint ckpt;
    Network decoder;
    PriorTransform prior;
};

const Network& find_network(const Checkpoint& ckpt, const std::string& name) {
    for (const auto& [n, net] : ckpt.networks)
        if (n == name) return net;
    throw std::invalid_argument("checkpoint has no network named '" + name + "'");
}

GaussianEncoder encoder_from(const Checkpoint& ckpt, int latent_dim) {
    GaussianEncoder enc;
    enc.net = find_network(ckpt, "encoder");
    enc.latent_dim = latent_dim;
    return enc;
}

Loaded load_model(ConfigMap& cfg, const std::string& checkpoint_path) {
    Loaded l;
    l.ckpt = load_checkpoint(checkpoint_path);
    l.decoder = find_network(l.ckpt, "decoder");
    l.prior = resolve_prior(cfg, l.decoder.spec.embedding);
    cfg["model"] = l.ckpt.model_kind;
    return l;
}

ConfigMap resolve_config(const std::string& command, const std::string& config_path,
                         const std::vector<std::string>& sets, const std::string& checkpoint,
                         std::uint64_t seed, const std::string& output) {
    ConfigMap cfg = default_config();
    if (!checkpoint.empty()) {
        const Checkpoint ckpt = load_checkpoint(checkpoint);
        for (const char* key : kInheritedKeys) {
            auto it = ckpt.config.find(key);
            if (it != ckpt.config.end()) cfg[key] = it->second;
        }
    }
    if (!config_path.empty()) apply_config_file(cfg, config_path);
    apply_overrides(cfg, sets);
    cfg["command"] = command;
    cfg["seed"] = std::to_string(seed);
    cfg["output"] = output;
    cfg["checkpoint"] = checkpoint;
    return cfg;
}

Matrix decode_latents(const Network& net, const Matrix& z, const PriorTransform& prior) {
    PointSet tmp;
    tmp.dimension = z.cols;
    tmp.mode = SampleMode::fixed_qmc;
    tmp.points = z;
    return head_mean(net.spec, forward(net, apply_prior(tmp, prior)));
}

void write_strip_pgm(const std::string& path, const Matrix& frames, const Dataset& ds,
                     int decoder_width) {
    if (ds.height <= 0 || ds.width <= 0 || ds.height * ds.width != decoder_width)
        throw std::invalid_argument("image strip export needs image data matching the decoder");
    write_pgm(path, image_strip(frames, ds.height, ds.width));
}

std::string format_fixed(double v, int precision) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::fixed, precision);
    if (res.ec != std::errc()) throw std::runtime_error("format_fixed: buffer too small");
    return std::string(buf, res.ptr);
}

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

// ---- commands ----

void cmd_train(ConfigMap& cfg) {
    const std::uint64_t seed = get_u64(cfg, "seed");
    const std::string& model = get_string(cfg, "model");
    if (model != "qlvm" && model != "vae" && model != "iwae")
        throw std::invalid_argument(choice_error("model", model, "qlvm|vae|iwae"));
    const Dataset ds = load_data(cfg);
    auto [train_ds, test_ds] = split(ds, get_double(cfg, "train_fraction"),
                                     get_u64(cfg, "data_seed"));
    (void)test_ds;
    const NetworkSpec spec = decoder_spec(cfg, ds.dim());
    const double lr = get_double(cfg, "learning_rate");
    const int epochs = static_cast<int>(get_int(cfg, "epochs"));
    const int batch = static_cast<int>(get_int(cfg, "batch_size"));
    const std::string& output = get_string(cfg, "output");

    if (model == "qlvm") {
        TrainConfig tc;
        tc.rule = resolve_rule(spec.input_dim, get_int(cfg, "m"), get_int(cfg, "korobov_a"));
        tc.mode = parse_sample_mode(get_string(cfg, "sample_mode"));
        tc.prior = resolve_prior(cfg, spec.embedding);
        tc.epochs = epochs;
        tc.batch_size = batch;
        tc.seed = seed;
        tc.learning_rate = lr;
        Network net = init_network(spec, seed);
        AdamState adam = make_adam_state(net.param_count(), lr);

        std::filesystem::create_directories(output);
        DirectoryLock lock(output);
        write_run_config(cfg, output);
        const TrainResult tr = train(tc, train_ds.x, net, adam);

        write_trace_csv(output + "/trace.csv", tr.epoch_objective);
        write_point_set_csv(output + "/lattice.csv",
                            generate_points(tc.rule, SampleMode::fixed_qmc, 0ULL));
        Checkpoint ckpt;
        ckpt.model_kind = "qlvm";
        ckpt.epoch = epochs;
        ckpt.config = cfg;
        ckpt.networks.emplace_back("decoder", std::move(net));
        ckpt.optimizers.emplace_back("decoder", std::move(adam));
        save_checkpoint(output + "/checkpoint.bin", ckpt);
        std::cout << "trained qlvm epochs=" << epochs
                  << " objective=" << format_double(tr.epoch_objective.back()) << "\n";
        return;
    }

    BaselineConfig bc;
    bc.samples = resolve_samples(cfg);
    bc.epochs = epochs;
    bc.batch_size = batch;
    bc.seed = seed;
    bc.learning_rate = lr;
    const BoundKind kind = model == "vae" ? BoundKind::elbo : BoundKind::iwae;
    GaussianEncoder enc =
        make_gaussian_encoder(ds.dim(), [&] {
            std::vector<int> widths;
            for (std::int64_t w : get_int_list(cfg, "enc_hidden")) {
                if (w < 1)
                    throw std::invalid_argument("config key enc_hidden: widths must be positive");
                widths.push_back(static_cast<int>(w));
            }
            return widths;
        }(), spec.input_dim, derive_seed(seed, 6));
    Network dec = init_network(spec, seed);
    AdamState enc_adam = make_adam_state(enc.net.param_count(), lr);
    AdamState dec_adam = make_adam_state(dec.param_count(), lr);

    std::filesystem::create_directories(output);
    DirectoryLock lock(output);
    write_run_config(cfg, output);
    const BaselineResult tr =
        train_baseline(kind, bc, train_ds.x, enc, dec, enc_adam, dec_adam);

    write_trace_csv(output + "/trace.csv", tr.epoch_objective);
    Checkpoint ckpt;
    ckpt.model_kind = model;
    ckpt.epoch = epochs;
    ckpt.config = cfg;
    ckpt.networks.emplace_back("decoder", std::move(dec));
    ckpt.networks.emplace_back("encoder", std::move(enc.net));
    ckpt.optimizers.emplace_back("decoder", std::move(dec_adam));
    ckpt.optimizers.emplace_back("encoder", std::move(enc_adam));
    save_checkpoint(output + "/checkpoint.bin", ckpt);
    std::cout << "trained " << model << " epochs=" << epochs
              << " objective=" << format_double(tr.epoch_objective.back()) << "\n";
}

void cmd_evaluate(ConfigMap& cfg) {
    const std::uint64_t seed = get_u64(cfg, "seed");
    Loaded l = load_model(cfg, get_string(cfg, "checkpoint"));
    const Dataset ds = load_data(cfg);
    auto [train_ds, test_ds] = split(ds, get_double(cfg, "train_fraction"),
                                     get_u64(cfg, "data_seed"));
    (void)train_ds;
    const std::int64_t m_eval = get_int(cfg, "m_eval");
    const int n_shifts = static_cast<int>(get_int(cfg, "n_shifts"));
    const LatticeRule rule =
        resolve_rule(l.decoder.spec.input_dim, m_eval, get_int(cfg, "korobov_a"));
    const PointSet base = generate_points(rule, SampleMode::fixed_qmc, 0ULL);

    std::string csv = "bound,mean,std,samples\n";
    if (l.ckpt.model_kind != "qlvm") {
        const int samples = resolve_samples(cfg);
        GaussianEncoder enc = encoder_from(l.ckpt, l.decoder.spec.input_dim);
        const bool is_vae = l.ckpt.model_kind == "vae";
        const BoundEstimate est = is_vae
                                      ? elbo(enc, l.decoder, test_ds.x, samples, seed)
                                      : iwae_bound(enc, l.decoder, test_ds.x, samples, seed);
        const char* label = is_vae ? "elbo" : "iwae";
        std::cout << label << " mean=" << format_double(est.batch_mean)
                  << " samples=" << samples << "\n";
        csv += std::string(label) + "," + format_double(est.batch_mean) + ",0," +
               std::to_string(samples) + "\n";
    }
    const BoundReport rep =
        evaluate_bound(l.decoder, test_ds.x, base, n_shifts, seed, l.prior);
    std::cout << "qmc mean=" << format_double(rep.mean) << " std=" << format_double(rep.stddev)
              << " m=" << m_eval << " shifts=" << n_shifts << "\n";
    csv += "qmc," + format_double(rep.mean) + "," + format_double(rep.stddev) + "," +
           std::to_string(m_eval) + "\n";

    const std::string& output = get_string(cfg, "output");
    if (!output.empty()) {
        std::filesystem::create_directories(output);
        DirectoryLock lock(output);
        write_run_config(cfg, output);
        write_text_file(output + "/bound.csv", csv);
    }
}

void cmd_sweep(ConfigMap& cfg) {
    const std::uint64_t seed = get_u64(cfg, "seed");
    const std::string& model = get_string(cfg, "model");
    const std::vector<std::int64_t> values = get_int_list(cfg, "sweep_values");
    if (values.empty())
        throw std::invalid_argument("config key sweep_values: at least one value required");
    const Dataset ds = load_data(cfg);
    auto [train_ds, test_ds] =
        split(ds, get_double(cfg, "train_fraction"), get_u64(cfg, "data_seed"));
    ConfigMap probe = cfg;  // validates the decoder spec before any training
    const NetworkSpec spec = decoder_spec(probe, ds.dim());
    cfg["embedding"] = probe["embedding"];
    const double lr = get_double(cfg, "learning_rate");
    const int epochs = static_cast<int>(get_int(cfg, "epochs"));
    const int batch = static_cast<int>(get_int(cfg, "batch_size"));
    const std::int64_t m_eval = get_int(cfg, "m_eval");
    const std::int64_t korobov_a = get_int(cfg, "korobov_a");
    const int n_shifts = static_cast<int>(get_int(cfg, "n_shifts"));

    // Validate the whole sweep up front so a bad value produces no outputs.
    if (model == "qlvm") {
        for (std::int64_t v : values) resolve_rule(spec.input_dim, v, korobov_a);
        resolve_rule(spec.input_dim, m_eval, korobov_a);
    } else if (model == "vae" || model == "iwae") {
        for (std::int64_t v : values)
            if (v < 1)
                throw std::invalid_argument("config key sweep_values: samples must be positive");
    } else {
        throw std::invalid_argument(choice_error("model", model, "qlvm|vae|iwae"));
    }

    const std::string& output = get_string(cfg, "output");
    std::filesystem::create_directories(output);
    DirectoryLock lock(output);
    write_run_config(cfg, output);

    std::string csv = "value,seconds_per_epoch,objective\n";
    for (std::int64_t v : values) {
        double secs = 0.0, objective = 0.0;
        if (model == "qlvm") {
            TrainConfig tc;
            tc.rule = resolve_rule(spec.input_dim, v, korobov_a);
            tc.mode = parse_sample_mode(get_string(cfg, "sample_mode"));
            tc.prior = resolve_prior(cfg, spec.embedding);
            tc.epochs = epochs;
            tc.batch_size = batch;
            tc.seed = seed;
            tc.learning_rate = lr;
            Network net = init_network(spec, seed);
            AdamState adam = make_adam_state(net.param_count(), lr);
            const TrainResult tr = train(tc, train_ds.x, net, adam);
            secs = mean_of(tr.epoch_seconds);
            const PointSet base = generate_points(
                resolve_rule(spec.input_dim, m_eval, korobov_a), SampleMode::fixed_qmc, 0ULL);
            objective = evaluate_bound(net, test_ds.x, base, n_shifts, seed, tc.prior).mean;
        } else {
            BaselineConfig bc;
            bc.samples = static_cast<int>(v);
            bc.epochs = epochs;
            bc.batch_size = batch;
            bc.seed = seed;
            bc.learning_rate = lr;
            const BoundKind kind = model == "vae" ? BoundKind::elbo : BoundKind::iwae;
            GaussianEncoder enc = make_gaussian_encoder(ds.dim(), [&] {
                std::vector<int> widths;
                for (std::int64_t w : get_int_list(cfg, "enc_hidden"))
                    widths.push_back(static_cast<int>(w));
                return widths;
            }(), spec.input_dim, derive_seed(seed, 6));
            Network dec = init_network(spec, seed);
            AdamState ea = make_adam_state(enc.net.param_count(), lr);
            AdamState da = make_adam_state(dec.param_count(), lr);
            const BaselineResult tr = train_baseline(kind, bc, train_ds.x, enc, dec, ea, da);
            secs = mean_of(tr.epoch_seconds);
            objective = kind == BoundKind::elbo
                            ? elbo(enc, dec, test_ds.x, bc.samples, seed).batch_mean
                            : iwae_bound(enc, dec, test_ds.x, bc.samples, seed).batch_mean;
        }
        csv += std::to_string(v) + "," + format_fixed(secs, 3) + "," +
               format_double(objective) + "\n";
        std::cout << "sweep value=" << v << " seconds_per_epoch=" << format_fixed(secs, 3)
                  << " objective=" << format_double(objective) << "\n";
    }
    write_text_file(output + "/sweep.csv", csv);
}

// Posterior lattice shared by the analysis commands.
std::shared_ptr<const PointSet> eval_points(const ConfigMap& cfg, const Network& decoder) {
    const LatticeRule rule = resolve_rule(decoder.spec.input_dim, get_int(cfg, "m_eval"),
                                          get_int(cfg, "korobov_a"));
    return std::make_shared<const PointSet>(
        generate_points(rule, SampleMode::fixed_qmc, 0ULL));
}

void require_qlvm(const Checkpoint& ckpt, const std::string& command) {
    if (ckpt.model_kind != "qlvm")
        throw std::invalid_argument(command + " requires a qlvm checkpoint, got " +
                                    ckpt.model_kind);
}

std::vector<std::string> coord_header(int d, const std::string& prefix) {
    std::vector<std::string> h;
    for (int k = 0; k < d; ++k) h.push_back(prefix + std::to_string(k));
    return h;
}

void cmd_embed(ConfigMap& cfg) {
    Loaded l = load_model(cfg, get_string(cfg, "checkpoint"));
    require_qlvm(l.ckpt, "embed");
    const Dataset ds = load_data(cfg);
    auto pts = eval_points(cfg, l.decoder);
    const PosteriorTable table = posterior_table(l.decoder, ds.x, pts, l.prior);
    const LatentEmbedding emb = embed(table);

    const int d = l.decoder.spec.input_dim;
    const bool labeled = static_cast<int>(ds.labels.size()) == ds.count();
    std::vector<std::string> header = {"index", "mode_index"};
    for (const std::string& h : coord_header(d, "mode_")) header.push_back(h);
    for (const std::string& h : coord_header(d, "mean_")) header.push_back(h);
    header.push_back("resultant");
    if (labeled) header.push_back("label");
    Matrix rows(ds.count(), static_cast<int>(header.size()));
    for (int i = 0; i < ds.count(); ++i) {
        int c = 0;
        rows(i, c++) = i;
        rows(i, c++) = emb.mode_index[i];
        for (int k = 0; k < d; ++k) rows(i, c++) = emb.mode(i, k);
        for (int k = 0; k < d; ++k) rows(i, c++) = emb.mean(i, k);
        rows(i, c++) = emb.resultant[i];
        if (labeled) rows(i, c++) = ds.labels[i];
    }
    const std::string& output = get_string(cfg, "output");
    std::filesystem::create_directories(output);
    DirectoryLock lock(output);
    write_run_config(cfg, output);
    write_csv(output + "/embedding.csv", header, rows);
    std::cout << "embedded n=" << ds.count() << " m=" << pts->count() << "\n";
}

DensityField posterior_density(const Loaded& l, const Dataset& ds,
                               std::shared_ptr<const PointSet> pts) {
    return aggregate_posterior(posterior_table(l.decoder, ds.x, pts, l.prior));
}

void write_field_csv(const std::string& path, const DensityField& field,
                     const std::string& value_name) {
    const Matrix& p = field.points->points;
    std::vector<std::string> header = coord_header(p.cols, "z");
    header.push_back(value_name);
    Matrix rows(p.rows, p.cols + 1);
    for (int j = 0; j < p.rows; ++j) {
        for (int k = 0; k < p.cols; ++k) rows(j, k) = p(j, k);
        rows(j, p.cols) = field.weights[static_cast<std::size_t>(j)];
    }
    write_csv(path, header, rows);
}

void maybe_write_field_pgm(const std::string& path, const DensityField& field,
                           int resolution) {
    if (field.points->dimension != 2) return;
    write_pgm(path, bin_to_grid(field.points->points, field.weights, resolution));
}

void cmd_density(ConfigMap& cfg) {
    Loaded l = load_model(cfg, get_string(cfg, "checkpoint"));
    require_qlvm(l.ckpt, "density");
    const Dataset ds = load_data(cfg);
    auto pts = eval_points(cfg, l.decoder);
    const DensityField field = posterior_density(l, ds, pts);

    const std::string& output = get_string(cfg, "output");
    const int resolution = static_cast<int>(get_int(cfg, "resolution"));
    std::filesystem::create_directories(output);
    DirectoryLock lock(output);
    write_run_config(cfg, output);
    write_field_csv(output + "/density.csv", field, "density");
    maybe_write_field_pgm(output + "/density.pgm", field, resolution);
    std::cout << "density m=" << pts->count() << "\n";
}

void cmd_cluster(ConfigMap& cfg) {
    Loaded l = load_model(cfg, get_string(cfg, "checkpoint"));
    require_qlvm(l.ckpt, "cluster");
    const Dataset ds = load_data(cfg);
    auto pts = eval_points(cfg, l.decoder);
    const DensityField field = posterior_density(l, ds, pts);
    const ClusterResult cl = mean_shift(field, get_double(cfg, "bandwidth"));
    const int d = l.decoder.spec.input_dim;

    std::vector<std::string> cheader = coord_header(d, "z");
    cheader.push_back("density");
    Matrix crows(cl.centroids.rows, d + 1);
    for (int c = 0; c < cl.centroids.rows; ++c) {
        for (int k = 0; k < d; ++k) crows(c, k) = cl.centroids(c, k);
        crows(c, d) = cl.centroid_density[static_cast<std::size_t>(c)];
    }

    std::vector<std::string> aheader = {"index", "assignment", "converged"};
    for (const std::string& h : coord_header(d, "mode_")) aheader.push_back(h);
    Matrix arows(static_cast<int>(cl.assignment.size()), 3 + d);
    for (int j = 0; j < arows.rows; ++j) {
        arows(j, 0) = j;
        arows(j, 1) = cl.assignment[static_cast<std::size_t>(j)];
        arows(j, 2) = cl.converged[static_cast<std::size_t>(j)] ? 1.0 : 0.0;
        for (int k = 0; k < d; ++k) arows(j, 3 + k) = cl.modes(j, k);
    }

    const Matrix frames = decode_latents(l.decoder, cl.centroids, l.prior);

    const std::string& output = get_string(cfg, "output");
    std::filesystem::create_directories(output);
    DirectoryLock lock(output);
    write_run_config(cfg, output);
    write_csv(output + "/centroids.csv", cheader, crows);
    write_csv(output + "/assignment.csv", aheader, arows);
    write_strip_pgm(output + "/centroids.pgm", frames, ds, l.decoder.spec.output_dim());
    std::cout << "clusters=" << cl.centroids.rows << " bandwidth="
              << format_double(cl.bandwidth) << "\n";
}

void cmd_jacobian(ConfigMap& cfg) {
    Loaded l = load_model(cfg, get_string(cfg, "checkpoint"));
    auto pts = eval_points(cfg, l.decoder);
    JacobianField jf = jacobian_frobenius(l.decoder, pts->points, get_double(cfg, "h_fd"));
    jf.smoothing_bandwidth = get_double(cfg, "smooth_bandwidth");
    jf.smoothed = smooth_field(*pts, jf.norms, jf.smoothing_bandwidth);

    DensityField raw{pts, jf.norms}, smooth{pts, jf.smoothed};
    const std::string& output = get_string(cfg, "output");
    const int resolution = static_cast<int>(get_int(cfg, "resolution"));
    std::filesystem::create_directories(output);
    DirectoryLock lock(output);
    write_run_config(cfg, output);
    write_field_csv(output + "/jacobian.csv", raw, "frobenius");
    write_field_csv(output + "/jacobian_smoothed.csv", smooth, "frobenius");
    maybe_write_field_pgm(output + "/jacobian.pgm", raw, resolution);
    maybe_write_field_pgm(output + "/jacobian_smoothed.pgm", smooth, resolution);
    std::cout << "jacobian m=" << pts->count() << "\n";
}

void cmd_geodesic(ConfigMap& cfg) {
    Loaded l = load_model(cfg, get_string(cfg, "checkpoint"));
    require_qlvm(l.ckpt, "geodesic");
    const Dataset ds = load_data(cfg);
    auto pts = eval_points(cfg, l.decoder);
    const DensityField field = posterior_density(l, ds, pts);
    const int d = l.decoder.spec.input_dim;

    const std::int64_t sc = get_int(cfg, "source_centroid");
    const std::int64_t dc = get_int(cfg, "destination_centroid");
    std::vector<double> src, dst;
    if (sc >= 0 || dc >= 0) {
        if (sc < 0 || dc < 0)
            throw std::invalid_argument(
                "source_centroid and destination_centroid must be given together");
        const ClusterResult cl = mean_shift(field, get_double(cfg, "bandwidth"));
        if (sc >= cl.centroids.rows || dc >= cl.centroids.rows)
            throw std::invalid_argument("centroid index out of range: found " +
                                        std::to_string(cl.centroids.rows) + " centroids");
        src.assign(cl.centroids.row(static_cast<int>(sc)),
                   cl.centroids.row(static_cast<int>(sc)) + d);
        dst.assign(cl.centroids.row(static_cast<int>(dc)),
                   cl.centroids.row(static_cast<int>(dc)) + d);
    } else {
        src = get_double_list(cfg, "source");
        dst = get_double_list(cfg, "destination");
        if (static_cast<int>(src.size()) != d || static_cast<int>(dst.size()) != d)
            throw std::invalid_argument("source/destination need " + std::to_string(d) +
                                        " coordinates");
    }
    const GeodesicPath path = geodesic(field, src.data(), dst.data(),
                                       get_double(cfg, "epsilon"));

    std::vector<std::string> header = {"step", "node"};
    for (const std::string& h : coord_header(d, "z")) header.push_back(h);
    header.push_back("density");
    const int n = static_cast<int>(path.node_indices.size());
    Matrix rows(n, 2 + d + 1);
    Matrix nodes(n, d);
    for (int t = 0; t < n; ++t) {
        const int j = path.node_indices[static_cast<std::size_t>(t)];
        rows(t, 0) = t;
        rows(t, 1) = j;
        for (int k = 0; k < d; ++k) {
            rows(t, 2 + k) = pts->points(j, k);
            nodes(t, k) = pts->points(j, k);
        }
        rows(t, 2 + d) = field.weights[static_cast<std::size_t>(j)];
    }
    const Matrix frames = decode_latents(l.decoder, nodes, l.prior);

    const std::string& output = get_string(cfg, "output");
    std::filesystem::create_directories(output);
    DirectoryLock lock(output);
    write_run_config(cfg, output);
    write_csv(output + "/path.csv", header, rows);
    write_strip_pgm(output + "/geodesic.pgm", frames, ds, l.decoder.spec.output_dim());
    std::cout << "geodesic cost=" << format_double(path.cost) << " nodes=" << n << "\n";
}

void cmd_traverse(ConfigMap& cfg) {
    Loaded l = load_model(cfg, get_string(cfg, "checkpoint"));
    const Dataset ds = load_data(cfg);
    const int d = l.decoder.spec.input_dim;
    std::vector<double> start = get_double_list(cfg, "start");
    if (start.empty()) start.assign(static_cast<std::size_t>(d), 0.0);
    const std::vector<double> direction = get_double_list(cfg, "direction");
    if (static_cast<int>(start.size()) != d || static_cast<int>(direction.size()) != d)
        throw std::invalid_argument("start/direction need " + std::to_string(d) +
                                    " coordinates");
    const int steps = static_cast<int>(get_int(cfg, "steps"));
    const Matrix frames = traversal(l.decoder, start.data(), direction.data(), steps);

    std::vector<std::string> header = {"step"};
    for (const std::string& h : coord_header(d, "z")) header.push_back(h);
    Matrix rows(steps, 1 + d);
    for (int t = 0; t < steps; ++t) {
        rows(t, 0) = t;
        for (int k = 0; k < d; ++k) {
            double u = start[static_cast<std::size_t>(k)] +
                       (static_cast<double>(t) / steps) * direction[static_cast<std::size_t>(k)];
            u -= std::floor(u);
            if (u >= 1.0) u = 0.0;
            rows(t, 1 + k) = u;
        }
    }

    const std::string& output = get_string(cfg, "output");
    std::filesystem::create_directories(output);
    DirectoryLock lock(output);
    write_run_config(cfg, output);
    write_csv(output + "/traversal.csv", header, rows);
    write_strip_pgm(output + "/traversal.pgm", frames, ds, l.decoder.spec.output_dim());
    std::cout << "traversal steps=" << steps << "\n";
}

void cmd_sample(ConfigMap& cfg) {
    const std::uint64_t seed = get_u64(cfg, "seed");
    Loaded l = load_model(cfg, get_string(cfg, "checkpoint"));
    const Dataset ds = load_data(cfg);
    const int n = static_cast<int>(get_int(cfg, "n_samples"));
    if (n < 1) throw std::invalid_argument("config key n_samples: must be positive");
    const Matrix frames = sample_prior(l.decoder, n, seed);

    const std::string& output = get_string(cfg, "output");
    std::filesystem::create_directories(output);
    DirectoryLock lock(output);
    write_run_config(cfg, output);
    write_csv(output + "/samples.csv", coord_header(frames.cols, "v"), frames);
    write_strip_pgm(output + "/samples.pgm", frames, ds, l.decoder.spec.output_dim());
    std::cout << "samples n=" << n << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"lattice-based latent variable models"};
    app.require_subcommand(1);

    std::string config_path, output, checkpoint;
    std::vector<std::string> sets;
    std::uint64_t seed = 0;

    struct Verb {
        const char* name;
        const char* desc;
        void (*run)(ConfigMap&);
        bool needs_seed;        // --seed required
        bool needs_checkpoint;  // --checkpoint required
        bool needs_output;      // --output required
    };
    const Verb verbs[] = {
        {"train", "train a model and write checkpoint, trace and config", cmd_train, true,
         false, true},
        {"evaluate", "held-out bound of a checkpoint", cmd_evaluate, false, true, false},
        {"sweep", "train across a list of sample counts and tabulate cost/performance",
         cmd_sweep, true, false, true},
        {"embed", "posterior summaries of every datum", cmd_embed, false, true, true},
        {"density", "aggregate posterior over the evaluation lattice", cmd_density, false,
         true, true},
        {"cluster", "mean-shift modes of the aggregate posterior", cmd_cluster, false, true,
         true},
        {"jacobian", "decoder Jacobian norm field, raw and smoothed", cmd_jacobian, false,
         true, true},
        {"geodesic", "density-weighted shortest path between latent points", cmd_geodesic,
         false, true, true},
        {"traverse", "decode frames along a latent line", cmd_traverse, false, true, true},
        {"sample", "decode prior draws", cmd_sample, false, true, true},
    };

    for (const Verb& v : verbs) {
        CLI::App* sub = app.add_subcommand(v.name, v.desc);
        sub->add_option("--config", config_path, "key=value config file");
        sub->add_option("--set", sets, "config overrides (key=value)");
        auto* seed_opt = sub->add_option("--seed", seed, "run seed");
        if (v.needs_seed) seed_opt->required();
        auto* ckpt_opt = sub->add_option("--checkpoint", checkpoint, "checkpoint to load");
        if (v.needs_checkpoint) ckpt_opt->required();
        auto* out_opt = sub->add_option("--output", output, "output directory");
        if (v.needs_output) out_opt->required();
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        for (const Verb& v : verbs) {
            if (!app.got_subcommand(v.name)) continue;
            ConfigMap cfg = resolve_config(v.name, config_path, sets, checkpoint, seed, output);
            v.run(cfg);
            return 0;
        }
        throw std::invalid_argument("no command given");
    } catch (const numerical_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
