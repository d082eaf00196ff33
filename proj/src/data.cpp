#include "qlvm/data.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>

#include "qlvm/rng.hpp"

namespace qlvm {

namespace {

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;
const char kCheckpointMagic[8] = {'Q', 'L', 'V', 'M', 'C', 'K', 'P', 'T'};

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::invalid_argument("cannot open file: " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::invalid_argument("cannot open file for writing: " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("short write: " + path);
}

std::uint32_t be32(const unsigned char* p) {
    return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
           (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

void put_be32(std::string& buf, std::uint32_t v) {
    buf.push_back(static_cast<char>((v >> 24) & 0xff));
    buf.push_back(static_cast<char>((v >> 16) & 0xff));
    buf.push_back(static_cast<char>((v >> 8) & 0xff));
    buf.push_back(static_cast<char>(v & 0xff));
}

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    const std::string bytes = read_file(images_path);
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    if (bytes.size() < 4) throw idx_truncated_error(images_path + ": shorter than a magic number");
    if (be32(p) != kIdxImagesMagic)
        throw idx_magic_error(images_path + ": bad magic number for an IDX image file");
    if (bytes.size() < 16) throw idx_truncated_error(images_path + ": header truncated");
    const std::uint32_t n = be32(p + 4);
    const std::uint32_t h = be32(p + 8);
    const std::uint32_t w = be32(p + 12);
    const std::size_t need = 16 + std::size_t(n) * h * w;
    if (bytes.size() < need)
        throw idx_truncated_error(images_path + ": pixel data truncated");

    Dataset ds;
    ds.name = images_path;
    ds.kind = ValueKind::binary_pixels;
    ds.height = static_cast<int>(h);
    ds.width = static_cast<int>(w);
    ds.x.resize(static_cast<int>(n), static_cast<int>(h * w));
    const unsigned char* pix = p + 16;
    for (std::size_t i = 0; i < ds.x.data.size(); ++i)
        ds.x.data[i] = static_cast<double>(pix[i]) / 255.0;

    if (!labels_path.empty()) {
        const std::string lb = read_file(labels_path);
        const auto* q = reinterpret_cast<const unsigned char*>(lb.data());
        if (lb.size() < 4) throw idx_truncated_error(labels_path + ": shorter than a magic number");
        if (be32(q) != kIdxLabelsMagic)
            throw idx_magic_error(labels_path + ": bad magic number for an IDX label file");
        if (lb.size() < 8) throw idx_truncated_error(labels_path + ": header truncated");
        const std::uint32_t ln = be32(q + 4);
        if (lb.size() < 8 + std::size_t(ln))
            throw idx_truncated_error(labels_path + ": label data truncated");
        if (ln != n)
            throw idx_mismatch_error(labels_path + ": " + std::to_string(ln) + " labels for " +
                                     std::to_string(n) + " images");
        ds.labels.resize(ln);
        for (std::uint32_t i = 0; i < ln; ++i) ds.labels[i] = q[8 + i];
    }
    return ds;
}

void write_idx_images(const std::string& path, const Dataset& ds) {
    if (ds.height * ds.width != ds.dim())
        throw std::invalid_argument("write_idx_images: dataset has no image shape");
    std::string buf;
    put_be32(buf, kIdxImagesMagic);
    put_be32(buf, static_cast<std::uint32_t>(ds.count()));
    put_be32(buf, static_cast<std::uint32_t>(ds.height));
    put_be32(buf, static_cast<std::uint32_t>(ds.width));
    for (double v : ds.x.data) {
        double scaled = std::round(v * 255.0);
        if (scaled < 0.0) scaled = 0.0;
        if (scaled > 255.0) scaled = 255.0;
        buf.push_back(static_cast<char>(static_cast<unsigned char>(scaled)));
    }
    write_file(path, buf);
}

void write_idx_labels(const std::string& path, const std::vector<int>& labels) {
    std::string buf;
    put_be32(buf, kIdxLabelsMagic);
    put_be32(buf, static_cast<std::uint32_t>(labels.size()));
    for (int l : labels) buf.push_back(static_cast<char>(static_cast<unsigned char>(l)));
    write_file(path, buf);
}

Dataset synth_mixture(std::uint64_t seed, int k, int n, int side, double blob_sigma,
                      double jitter) {
    if (k < 1) throw std::invalid_argument("synth_mixture: need k >= 1 clusters");
    if (side < 8) throw std::invalid_argument("synth_mixture: need side >= 8");
    if (n < 0) throw std::invalid_argument("synth_mixture: negative sample count");
    if (!(blob_sigma > 0.0)) throw std::invalid_argument("synth_mixture: blob sigma must be > 0");
    if (jitter < 0.0) jitter = static_cast<double>(side) / (8.0 * k);

    const double cx0 = side / 2.0, cy0 = side / 2.0, radius = side / 3.0;
    std::vector<double> cx(k), cy(k);
    for (int j = 0; j < k; ++j) {
        const double ang = 2.0 * 3.14159265358979323846 * j / k;
        cx[j] = cx0 + radius * std::cos(ang);
        cy[j] = cy0 + radius * std::sin(ang);
    }

    Dataset ds;
    ds.name = "synth_mixture";
    ds.kind = ValueKind::binary_pixels;
    ds.height = side;
    ds.width = side;
    ds.x.resize(n, side * side);
    ds.labels.resize(n);

    RandomStream rng(seed);
    const double inv = 1.0 / (2.0 * blob_sigma * blob_sigma);
    for (int i = 0; i < n; ++i) {
        const int cluster = k == 1 ? 0 : static_cast<int>(rng.below(k));
        ds.labels[i] = cluster;
        const double bx = cx[cluster] + (jitter > 0.0 ? rng.uniform(-jitter, jitter) : 0.0);
        const double by = cy[cluster] + (jitter > 0.0 ? rng.uniform(-jitter, jitter) : 0.0);
        double* row = ds.x.row(i);
        for (int r = 0; r < side; ++r)
            for (int c = 0; c < side; ++c) {
                const double dx = c + 0.5 - bx;
                const double dy = r + 0.5 - by;
                row[r * side + c] = std::exp(-(dx * dx + dy * dy) * inv);
            }
    }
    return ds;
}

std::pair<Dataset, Dataset> split(const Dataset& ds, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0))
        throw std::invalid_argument("split: fraction must lie strictly between 0 and 1");
    const int n = ds.count();
    if (n < 2) throw std::invalid_argument("split: need at least 2 samples");

    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    RandomStream rng(seed);
    for (int i = n - 1; i > 0; --i)
        std::swap(idx[i], idx[static_cast<int>(rng.below(static_cast<std::uint64_t>(i) + 1))]);

    int n_train = static_cast<int>(std::floor(fraction * n + 0.5));
    if (n_train < 1) n_train = 1;
    if (n_train > n - 1) n_train = n - 1;

    auto take = [&](int from, int to) {
        Dataset part;
        part.kind = ds.kind;
        part.height = ds.height;
        part.width = ds.width;
        part.name = ds.name;
        part.x.resize(to - from, ds.dim());
        if (!ds.labels.empty()) part.labels.resize(to - from);
        for (int i = from; i < to; ++i) {
            std::memcpy(part.x.row(i - from), ds.x.row(idx[i]),
                        sizeof(double) * static_cast<std::size_t>(ds.dim()));
            if (!ds.labels.empty()) part.labels[i - from] = ds.labels[idx[i]];
        }
        return part;
    };
    return {take(0, n_train), take(n_train, n)};
}

std::uint32_t crc32(const void* data, std::size_t n, std::uint32_t seed) {
    static const auto table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int bit = 0; bit < 8; ++bit) c = (c >> 1) ^ (0xEDB88320u & (0u - (c & 1u)));
            t[i] = c;
        }
        return t;
    }();
    std::uint32_t crc = ~seed;
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) crc = table[(crc ^ p[i]) & 0xff] ^ (crc >> 8);
    return ~crc;
}

namespace {

const char* embedding_name(Embedding e) {
    switch (e) {
        case Embedding::periodic_sincos: return "periodic_sincos";
        case Embedding::identity: return "identity";
        case Embedding::gaussian_icdf: return "gaussian_icdf";
    }
    return "";
}

const char* activation_name(Activation a) {
    return a == Activation::relu ? "relu" : "tanh";
}

const char* head_name(Head h) {
    return h == Head::bernoulli_logits ? "bernoulli_logits" : "gaussian_mean";
}

std::vector<std::string> split_text(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= s.size()) {
        const std::size_t end = s.find(sep, start);
        if (end == std::string::npos) {
            out.push_back(s.substr(start));
            break;
        }
        out.push_back(s.substr(start, end - start));
        start = end + 1;
    }
    return out;
}

// Little-endian binary buffer helpers for the checkpoint format.
struct Writer {
    std::string buf;

    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    void f64(double d) {
        std::uint64_t bits;
        std::memcpy(&bits, &d, 8);
        u64(bits);
    }
    void text(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        buf.append(s);
    }
};

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;
    std::size_t limit;  // payload end (excludes the trailing crc)

    explicit Reader(const std::string& b, std::size_t start, std::size_t end)
        : buf(b), pos(start), limit(end) {}

    void need(std::size_t n) {
        if (pos + n > limit) throw checkpoint_truncated_error("checkpoint data truncated");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= std::uint32_t(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= std::uint64_t(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 8;
        return v;
    }
    double f64() {
        const std::uint64_t bits = u64();
        double d;
        std::memcpy(&d, &bits, 8);
        return d;
    }
    std::string text() {
        const std::uint32_t n = u32();
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

}  // namespace

std::string spec_to_text(const NetworkSpec& spec) {
    std::string widths;
    for (std::size_t i = 0; i < spec.layer_widths.size(); ++i) {
        if (i) widths += ',';
        widths += std::to_string(spec.layer_widths[i]);
    }
    return std::string("embedding=") + embedding_name(spec.embedding) +
           ";input_dim=" + std::to_string(spec.input_dim) + ";widths=" + widths +
           ";activation=" + activation_name(spec.activation) + ";head=" + head_name(spec.head) +
           ";gaussian_variance=" + fmt_double(spec.gaussian_variance);
}

NetworkSpec spec_from_text(const std::string& text) {
    NetworkSpec spec;
    bool saw_widths = false;
    for (const std::string& item : split_text(text, ';')) {
        if (item.empty()) continue;
        const std::size_t eq = item.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("network spec: malformed entry '" + item + "'");
        const std::string key = item.substr(0, eq);
        const std::string val = item.substr(eq + 1);
        if (key == "embedding") {
            if (val == "periodic_sincos") spec.embedding = Embedding::periodic_sincos;
            else if (val == "identity") spec.embedding = Embedding::identity;
            else if (val == "gaussian_icdf") spec.embedding = Embedding::gaussian_icdf;
            else throw std::invalid_argument("network spec: unknown embedding '" + val + "'");
        } else if (key == "input_dim") {
            spec.input_dim = std::stoi(val);
        } else if (key == "widths") {
            spec.layer_widths.clear();
            for (const std::string& w : split_text(val, ','))
                if (!w.empty()) spec.layer_widths.push_back(std::stoi(w));
            saw_widths = true;
        } else if (key == "activation") {
            if (val == "relu") spec.activation = Activation::relu;
            else if (val == "tanh") spec.activation = Activation::tanh;
            else throw std::invalid_argument("network spec: unknown activation '" + val + "'");
        } else if (key == "head") {
            if (val == "bernoulli_logits") spec.head = Head::bernoulli_logits;
            else if (val == "gaussian_mean") spec.head = Head::gaussian_mean;
            else throw std::invalid_argument("network spec: unknown head '" + val + "'");
        } else if (key == "gaussian_variance") {
            spec.gaussian_variance = std::strtod(val.c_str(), nullptr);
        } else {
            throw std::invalid_argument("network spec: unknown key '" + key + "'");
        }
    }
    if (!saw_widths) throw std::invalid_argument("network spec: missing widths");
    return spec;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    Writer w;
    w.buf.append(kCheckpointMagic, 8);
    w.u32(kCheckpointVersion);
    const std::size_t size_slot = w.buf.size();
    w.u64(0);  // total file size, patched below

    std::vector<std::pair<std::string, std::string>> entries;
    entries.emplace_back("model_kind", ckpt.model_kind);
    entries.emplace_back("epoch", std::to_string(ckpt.epoch));
    for (const auto& [k, v] : ckpt.config) entries.emplace_back("config." + k, v);
    for (const auto& [k, v] : ckpt.rng_state) entries.emplace_back("rng." + k, v);
    entries.emplace_back("network.count", std::to_string(ckpt.networks.size()));
    for (std::size_t i = 0; i < ckpt.networks.size(); ++i) {
        const std::string pre = "network." + std::to_string(i) + ".";
        entries.emplace_back(pre + "name", ckpt.networks[i].first);
        entries.emplace_back(pre + "spec", spec_to_text(ckpt.networks[i].second.spec));
    }
    entries.emplace_back("optim.count", std::to_string(ckpt.optimizers.size()));
    for (std::size_t i = 0; i < ckpt.optimizers.size(); ++i) {
        const std::string pre = "optim." + std::to_string(i) + ".";
        const AdamState& st = ckpt.optimizers[i].second;
        entries.emplace_back(pre + "name", ckpt.optimizers[i].first);
        entries.emplace_back(pre + "lr", fmt_double(st.lr));
        entries.emplace_back(pre + "beta1", fmt_double(st.beta1));
        entries.emplace_back(pre + "beta2", fmt_double(st.beta2));
        entries.emplace_back(pre + "eps", fmt_double(st.eps));
        entries.emplace_back(pre + "step", std::to_string(st.step));
    }
    w.u32(static_cast<std::uint32_t>(entries.size()));
    for (const auto& [k, v] : entries) {
        w.text(k);
        w.text(v);
    }

    std::vector<std::pair<std::string, const std::vector<double>*>> arrays;
    for (std::size_t i = 0; i < ckpt.networks.size(); ++i)
        arrays.emplace_back("net." + std::to_string(i) + ".params",
                            &ckpt.networks[i].second.params);
    for (std::size_t i = 0; i < ckpt.optimizers.size(); ++i) {
        arrays.emplace_back("optim." + std::to_string(i) + ".m", &ckpt.optimizers[i].second.m);
        arrays.emplace_back("optim." + std::to_string(i) + ".v", &ckpt.optimizers[i].second.v);
    }
    w.u32(static_cast<std::uint32_t>(arrays.size()));
    for (const auto& [name, vec] : arrays) {
        w.text(name);
        w.u64(vec->size());
        for (double d : *vec) w.f64(d);
    }

    const std::uint64_t total = w.buf.size() + 4;
    for (int i = 0; i < 8; ++i)
        w.buf[size_slot + i] = static_cast<char>((total >> (8 * i)) & 0xff);
    w.u32(crc32(w.buf.data(), w.buf.size()));
    write_file(path, w.buf);
}

Checkpoint load_checkpoint(const std::string& path) {
    const std::string bytes = read_file(path);
    if (bytes.size() < 8) throw checkpoint_truncated_error(path + ": shorter than the magic");
    if (std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0)
        throw checkpoint_format_error(path + ": not a checkpoint file");
    if (bytes.size() < 20) throw checkpoint_truncated_error(path + ": header truncated");

    Reader header(bytes, 8, bytes.size());
    const std::uint32_t version = header.u32();
    if (version != kCheckpointVersion)
        throw checkpoint_version_error(path + ": unsupported checkpoint version " +
                                       std::to_string(version));
    const std::uint64_t total = header.u64();
    if (bytes.size() != total)
        throw checkpoint_truncated_error(path + ": expected " + std::to_string(total) +
                                         " bytes, found " + std::to_string(bytes.size()));

    const std::uint32_t stored = Reader(bytes, bytes.size() - 4, bytes.size()).u32();
    const std::uint32_t computed = crc32(bytes.data(), bytes.size() - 4);
    if (stored != computed) throw checkpoint_crc_error(path + ": checksum mismatch");

    Reader r(bytes, 20, bytes.size() - 4);
    std::map<std::string, std::string> entries;
    const std::uint32_t n_entries = r.u32();
    for (std::uint32_t i = 0; i < n_entries; ++i) {
        std::string k = r.text();
        entries[k] = r.text();
    }
    auto get = [&](const std::string& key) -> const std::string& {
        auto it = entries.find(key);
        if (it == entries.end())
            throw checkpoint_format_error(path + ": missing entry '" + key + "'");
        return it->second;
    };

    Checkpoint ckpt;
    ckpt.model_kind = get("model_kind");
    ckpt.epoch = std::stoll(get("epoch"));
    for (const auto& [k, v] : entries) {
        if (k.rfind("config.", 0) == 0) ckpt.config[k.substr(7)] = v;
        if (k.rfind("rng.", 0) == 0) ckpt.rng_state[k.substr(4)] = v;
    }

    const int n_nets = std::stoi(get("network.count"));
    for (int i = 0; i < n_nets; ++i) {
        const std::string pre = "network." + std::to_string(i) + ".";
        Network net = make_network(spec_from_text(get(pre + "spec")));
        ckpt.networks.emplace_back(get(pre + "name"), std::move(net));
    }
    const int n_opt = std::stoi(get("optim.count"));
    for (int i = 0; i < n_opt; ++i) {
        const std::string pre = "optim." + std::to_string(i) + ".";
        AdamState st;
        st.lr = std::strtod(get(pre + "lr").c_str(), nullptr);
        st.beta1 = std::strtod(get(pre + "beta1").c_str(), nullptr);
        st.beta2 = std::strtod(get(pre + "beta2").c_str(), nullptr);
        st.eps = std::strtod(get(pre + "eps").c_str(), nullptr);
        st.step = std::stoll(get(pre + "step"));
        ckpt.optimizers.emplace_back(get(pre + "name"), std::move(st));
    }

    const std::uint32_t n_arrays = r.u32();
    for (std::uint32_t a = 0; a < n_arrays; ++a) {
        const std::string name = r.text();
        const std::uint64_t count = r.u64();
        std::vector<double> values(count);
        for (std::uint64_t i = 0; i < count; ++i) values[i] = r.f64();

        bool matched = false;
        for (std::size_t i = 0; i < ckpt.networks.size() && !matched; ++i) {
            if (name == "net." + std::to_string(i) + ".params") {
                if (values.size() != ckpt.networks[i].second.params.size())
                    throw checkpoint_format_error(path + ": parameter count mismatch for " + name);
                ckpt.networks[i].second.params = std::move(values);
                matched = true;
            }
        }
        for (std::size_t i = 0; i < ckpt.optimizers.size() && !matched; ++i) {
            const std::string pre = "optim." + std::to_string(i) + ".";
            if (name == pre + "m") {
                ckpt.optimizers[i].second.m = std::move(values);
                matched = true;
            } else if (name == pre + "v") {
                ckpt.optimizers[i].second.v = std::move(values);
                matched = true;
            }
        }
        if (!matched) throw checkpoint_format_error(path + ": unexpected array '" + name + "'");
    }
    return ckpt;
}

}  // namespace qlvm
