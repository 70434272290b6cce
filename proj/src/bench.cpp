#include "disbench/bench.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <thread>

#include "disbench/errors.hpp"
#include "disbench/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace disbench {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            const std::string t = trim(cur);
            if (!t.empty()) out.push_back(t);
            cur.clear();
        } else {
            cur += c;
        }
    }
    const std::string t = trim(cur);
    if (!t.empty()) out.push_back(t);
    return out;
}

double parse_double(const std::string& field, const std::string& v) {
    try {
        size_t pos = 0;
        const double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError(field, "not a number: '" + v + "'");
    }
}

long long parse_int(const std::string& field, const std::string& v) {
    try {
        size_t pos = 0;
        const long long x = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError(field, "not an integer: '" + v + "'");
    }
}

uint64_t parse_u64(const std::string& field, const std::string& v) {
    try {
        size_t pos = 0;
        const uint64_t x = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError(field, "not an unsigned integer: '" + v + "'");
    }
}

void check_range(const std::string& field, double v, double lo, double hi) {
    if (!(v >= lo && v <= hi))
        throw ConfigError(field, "out of range (" + std::to_string(lo) + ".." +
                                     std::to_string(hi) + "): " + std::to_string(v));
}

std::string fmt_p(double p) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%.2f", p);
    return buf;
}

std::string timestamp_utc() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

uint64_t fnv1a64(const std::string& s) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

void put_u32le(std::ofstream& out, uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                                static_cast<unsigned char>((v >> 8) & 0xff),
                                static_cast<unsigned char>((v >> 16) & 0xff),
                                static_cast<unsigned char>((v >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32le(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace

ExperimentConfig parse_config(const std::string& text, const std::vector<std::string>& required) {
    ExperimentConfig cfg;
    std::set<std::string> seen;
    std::string section;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError(line, "malformed section header");
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const size_t eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(section + "." + line, "expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        const std::string field = section + "." + key;
        seen.insert(field);

        if (field == "dataset.count") {
            cfg.train_m = static_cast<size_t>(parse_int(field, value));
            if (cfg.train_m < 8) throw ConfigError(field, "too small");
        } else if (field == "dataset.test_count") {
            cfg.test_count = static_cast<size_t>(parse_int(field, value));
            if (cfg.test_count < 8) throw ConfigError(field, "too small");
        } else if (field == "dataset.seed") {
            cfg.seed = parse_u64(field, value);
        } else if (field == "dataset.confound") {
            if (value == "stroke")
                cfg.confound = ConfoundKind::stroke;
            else if (value == "notch")
                cfg.confound = ConfoundKind::notch;
            else
                throw ConfigError(field, "expected stroke or notch: '" + value + "'");
        } else if (field == "dataset.train_p" || field == "dataset.prevalence") {
            cfg.train_p = parse_double(field, value);
            if (!(cfg.train_p > 0.0 && cfg.train_p < 1.0))
                throw ConfigError(field, "prevalence must lie in (0,1)");
        } else if (field == "train.batch") {
            cfg.batch = static_cast<int>(parse_int(field, value));
            if (cfg.batch < 2) throw ConfigError(field, "batch must be >= 2");
        } else if (field == "train.lr") {
            cfg.lr = parse_double(field, value);
            if (cfg.lr <= 0.0) throw ConfigError(field, "lr must be positive");
        } else if (field == "train.weight_decay") {
            cfg.weight_decay = parse_double(field, value);
            check_range(field, cfg.weight_decay, 0.0, 1.0);
        } else if (field == "train.max_epochs") {
            cfg.max_epochs = static_cast<int>(parse_int(field, value));
            if (cfg.max_epochs < 1) throw ConfigError(field, "max_epochs must be >= 1");
        } else if (field == "train.patience") {
            cfg.patience = static_cast<int>(parse_int(field, value));
            if (cfg.patience < 1) throw ConfigError(field, "patience must be >= 1");
        } else if (field == "train.mine_inner") {
            cfg.mine_inner = static_cast<int>(parse_int(field, value));
            if (cfg.mine_inner < 1) throw ConfigError(field, "mine_inner must be >= 1");
        } else if (field == "train.mine_hidden") {
            cfg.mine_hidden = static_cast<int>(parse_int(field, value));
            if (cfg.mine_hidden < 1) throw ConfigError(field, "mine_hidden must be >= 1");
        } else if (field == "train.arch") {
            if (value == "conv3")
                cfg.arch = Arch::conv3;
            else if (value == "mlp")
                cfg.arch = Arch::mlp;
            else
                throw ConfigError(field, "expected conv3 or mlp: '" + value + "'");
        } else if (field == "train.latent") {
            cfg.latent = static_cast<int>(parse_int(field, value));
            if (cfg.latent < 2) throw ConfigError(field, "latent must be >= 2");
        } else if (field == "train.d1") {
            cfg.d1 = static_cast<int>(parse_int(field, value));
            if (cfg.d1 < 1) throw ConfigError(field, "d1 must be >= 1");
        } else if (field == "methods.list") {
            cfg.methods = split_list(value);
            if (cfg.methods.empty()) throw ConfigError(field, "methods list is empty");
            for (const auto& m : cfg.methods) {
                try {
                    parse_method(m);
                } catch (const InvalidInput&) {
                    throw ConfigError(field, "unknown method '" + m + "'");
                }
            }
        } else if (field == "methods.lambda_advcl") {
            cfg.lambda_advcl = parse_double(field, value);
            if (cfg.lambda_advcl < 0.0) throw ConfigError(field, "lambda must be >= 0");
        } else if (field == "methods.lambda_dcor") {
            cfg.lambda_dcor = parse_double(field, value);
            if (cfg.lambda_dcor < 0.0) throw ConfigError(field, "lambda must be >= 0");
        } else if (field == "methods.lambda_mine") {
            cfg.lambda_mine = parse_double(field, value);
            if (cfg.lambda_mine < 0.0) throw ConfigError(field, "lambda must be >= 0");
        } else if (field == "methods.lambda_mmd") {
            cfg.lambda_mmd = parse_double(field, value);
            if (cfg.lambda_mmd < 0.0) throw ConfigError(field, "lambda must be >= 0");
        } else if (field == "eval.k_nn") {
            cfg.knn_k = static_cast<int>(parse_int(field, value));
            if (cfg.knn_k < 1) throw ConfigError(field, "k_nn must be >= 1");
        } else if (field == "eval.folds") {
            cfg.folds = static_cast<int>(parse_int(field, value));
            if (cfg.folds < 2) throw ConfigError(field, "folds must be >= 2");
        } else if (field == "sweep.prevalences") {
            cfg.prevalences.clear();
            for (const auto& tok : split_list(value)) {
                const double p = parse_double(field, tok);
                if (!(p > 0.0 && p < 1.0))
                    throw ConfigError(field, "prevalence must lie in (0,1): " + tok);
                cfg.prevalences.push_back(p);
            }
            if (cfg.prevalences.empty()) throw ConfigError(field, "prevalence grid is empty");
        } else if (field == "notch.radius") {
            cfg.notch.radius = parse_double(field, value);
            if (!(cfg.notch.radius > 0.0 && cfg.notch.radius < 1.0))
                throw ConfigError(field, "radius must lie in (0,1)");
        } else if (field == "notch.strength") {
            cfg.notch.strength = parse_double(field, value);
            check_range(field, cfg.notch.strength, 0.0, 1.0);
        } else if (field == "notch.width") {
            cfg.notch.width = parse_double(field, value);
            if (cfg.notch.width <= 0.0) throw ConfigError(field, "width must be positive");
        } else if (field == "output.dir") {
            cfg.out_dir = value;
        } else {
            throw ConfigError(field, "unknown key");
        }
    }
    for (const auto& req : required)
        if (!seen.count(req)) throw ConfigError(req, "required key missing");
    if (cfg.d1 >= cfg.latent)
        throw ConfigError("train.d1", "d1 must leave at least one dimension for z2");
    return cfg;
}

ExperimentConfig load_config_file(const std::string& path,
                                  const std::vector<std::string>& required) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("config", "cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), required);
}

std::string serialize_config(const ExperimentConfig& cfg) {
    std::ostringstream out;
    char buf[32];
    auto num = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return std::string(buf);
    };
    out << "[dataset]\n";
    out << "count = " << cfg.train_m << "\n";
    out << "test_count = " << cfg.test_count << "\n";
    out << "seed = " << cfg.seed << "\n";
    out << "confound = " << (cfg.confound == ConfoundKind::stroke ? "stroke" : "notch") << "\n";
    out << "train_p = " << num(cfg.train_p) << "\n";
    out << "\n[train]\n";
    out << "batch = " << cfg.batch << "\n";
    out << "lr = " << num(cfg.lr) << "\n";
    out << "weight_decay = " << num(cfg.weight_decay) << "\n";
    out << "max_epochs = " << cfg.max_epochs << "\n";
    out << "patience = " << cfg.patience << "\n";
    out << "mine_inner = " << cfg.mine_inner << "\n";
    out << "mine_hidden = " << cfg.mine_hidden << "\n";
    out << "arch = " << (cfg.arch == Arch::conv3 ? "conv3" : "mlp") << "\n";
    out << "latent = " << cfg.latent << "\n";
    out << "d1 = " << cfg.d1 << "\n";
    out << "\n[methods]\n";
    out << "list = ";
    for (size_t i = 0; i < cfg.methods.size(); ++i) out << (i ? ", " : "") << cfg.methods[i];
    out << "\n";
    out << "lambda_advcl = " << num(cfg.lambda_advcl) << "\n";
    out << "lambda_dcor = " << num(cfg.lambda_dcor) << "\n";
    out << "lambda_mine = " << num(cfg.lambda_mine) << "\n";
    out << "lambda_mmd = " << num(cfg.lambda_mmd) << "\n";
    out << "\n[eval]\n";
    out << "k_nn = " << cfg.knn_k << "\n";
    out << "folds = " << cfg.folds << "\n";
    out << "\n[sweep]\n";
    out << "prevalences = ";
    for (size_t i = 0; i < cfg.prevalences.size(); ++i)
        out << (i ? ", " : "") << num(cfg.prevalences[i]);
    out << "\n";
    out << "\n[notch]\n";
    out << "radius = " << num(cfg.notch.radius) << "\n";
    out << "strength = " << num(cfg.notch.strength) << "\n";
    out << "width = " << num(cfg.notch.width) << "\n";
    out << "\n[output]\n";
    out << "dir = " << cfg.out_dir << "\n";
    return out.str();
}

std::string config_hash(const ExperimentConfig& cfg) {
    // the output directory does not change the experiment identity
    ExperimentConfig canon = cfg;
    canon.out_dir = "";
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(fnv1a64(serialize_config(canon))));
    return buf;
}

void write_tensor(const std::string& path, const TensorData& t) {
    if (t.dtype != 1 && t.dtype != 2) throw InvalidInput("write_tensor: bad dtype");
    const size_t n = t.element_count();
    if ((t.dtype == 1 && t.f32.size() != n) || (t.dtype == 2 && t.u8.size() != n))
        throw ShapeMismatch("write_tensor: payload does not match dims");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw InvalidInput("write_tensor: cannot open " + path);
    out.write("DTEN", 4);
    const unsigned char version = 1;
    out.write(reinterpret_cast<const char*>(&version), 1);
    out.write(reinterpret_cast<const char*>(&t.dtype), 1);
    put_u32le(out, static_cast<uint32_t>(t.dims.size()));
    for (uint32_t d : t.dims) put_u32le(out, d);
    if (t.dtype == 1) {
        for (float v : t.f32) {
            uint32_t bits;
            std::memcpy(&bits, &v, 4);
            put_u32le(out, bits);
        }
    } else {
        out.write(reinterpret_cast<const char*>(t.u8.data()), static_cast<std::streamsize>(n));
    }
}

TensorData read_tensor(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InvalidInput("read_tensor: cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::string(magic, 4) != "DTEN") throw InvalidInput("read_tensor: bad magic");
    unsigned char version = 0;
    in.read(reinterpret_cast<char*>(&version), 1);
    if (version != 1) throw InvalidInput("read_tensor: unsupported version");
    TensorData t;
    in.read(reinterpret_cast<char*>(&t.dtype), 1);
    if (t.dtype != 1 && t.dtype != 2) throw InvalidInput("read_tensor: bad dtype");
    const uint32_t ndims = get_u32le(in);
    if (ndims > 8) throw InvalidInput("read_tensor: too many dims");
    t.dims.resize(ndims);
    for (auto& d : t.dims) d = get_u32le(in);
    const size_t n = t.element_count();
    if (t.dtype == 1) {
        t.f32.resize(n);
        for (auto& v : t.f32) {
            const uint32_t bits = get_u32le(in);
            std::memcpy(&v, &bits, 4);
        }
    } else {
        t.u8.resize(n);
        in.read(reinterpret_cast<char*>(t.u8.data()), static_cast<std::streamsize>(n));
    }
    if (!in) throw InvalidInput("read_tensor: truncated payload");
    return t;
}

void write_dataset(const std::string& dir, const Dataset& ds) {
    fs::create_directories(dir);
    std::vector<const LabeledImage*> all;
    for (const auto& s : ds.train_pool) all.push_back(&s);
    for (const auto& s : ds.test_pool) all.push_back(&s);
    if (all.empty()) throw InvalidInput("write_dataset: empty dataset");
    const int side = all[0]->side;

    TensorData t;
    t.dtype = 1;
    t.dims = {static_cast<uint32_t>(all.size()), static_cast<uint32_t>(side),
              static_cast<uint32_t>(side)};
    t.f32.reserve(all.size() * static_cast<size_t>(side) * side);
    for (const auto* s : all) t.f32.insert(t.f32.end(), s->pixels.begin(), s->pixels.end());
    write_tensor(dir + "/pixels.dten", t);

    std::ofstream man(dir + "/manifest.csv", std::ios::binary | std::ios::trunc);
    man << "id,y1,y2,group,split\n";
    for (size_t i = 0; i < all.size(); ++i)
        man << i << ',' << all[i]->y1 << ',' << all[i]->y2 << ',' << all[i]->group << ','
            << (i < ds.train_pool.size() ? "train_pool" : "test_pool") << '\n';
}

Dataset read_dataset(const std::string& dir) {
    const TensorData t = read_tensor(dir + "/pixels.dten");
    if (t.dims.size() != 3) throw InvalidInput("read_dataset: pixels must be N x H x W");
    const size_t n = t.dims[0];
    const int side = static_cast<int>(t.dims[1]);
    if (t.dims[1] != t.dims[2]) throw InvalidInput("read_dataset: images must be square");

    std::ifstream man(dir + "/manifest.csv", std::ios::binary);
    if (!man) throw InvalidInput("read_dataset: cannot open manifest");
    std::string line;
    if (!std::getline(man, line) || trim(line) != "id,y1,y2,group,split")
        throw InvalidInput("read_dataset: bad manifest header");
    Dataset ds;
    size_t row = 0;
    while (std::getline(man, line)) {
        line = trim(line);
        if (line.empty()) continue;
        const auto cols = split_list(line);
        if (cols.size() != 5) throw InvalidInput("read_dataset: bad manifest row");
        if (row >= n) throw InvalidInput("read_dataset: more rows than pixel slabs");
        LabeledImage s;
        s.side = side;
        s.y1 = static_cast<int>(parse_int("manifest.y1", cols[1]));
        s.y2 = static_cast<int>(parse_int("manifest.y2", cols[2]));
        s.group = static_cast<long>(parse_int("manifest.group", cols[3]));
        const size_t stride = static_cast<size_t>(side) * side;
        s.pixels.assign(t.f32.begin() + static_cast<long>(row * stride),
                        t.f32.begin() + static_cast<long>((row + 1) * stride));
        if (cols[4] == "train_pool")
            ds.train_pool.push_back(std::move(s));
        else if (cols[4] == "test_pool")
            ds.test_pool.push_back(std::move(s));
        else
            throw InvalidInput("read_dataset: unknown split tag " + cols[4]);
        ++row;
    }
    if (row != n) throw InvalidInput("read_dataset: manifest rows do not match pixel count");
    return ds;
}

namespace {

size_t raw_pool_size(const ExperimentConfig& cfg) {
    double p_max = cfg.train_p;
    for (double p : cfg.prevalences) p_max = std::max(p_max, p);
    // per-cell demand at the steepest prevalence, padded for rounding
    const size_t per_cell =
        static_cast<size_t>(std::ceil(p_max / 2.0 * static_cast<double>(cfg.train_m))) + 4;
    return 4 * per_cell;
}

uint64_t p_tag(double p) { return static_cast<uint64_t>(std::llround(p * 10000.0)); }

}  // namespace

void gen_data(const ExperimentConfig& cfg) {
    const size_t raw = raw_pool_size(cfg);
    std::vector<LabeledImage> pool = generate_toy(raw + cfg.test_count, cfg.seed);
    Dataset ds;
    ds.train_pool.assign(pool.begin(), pool.begin() + static_cast<long>(raw));
    ds.test_pool.assign(pool.begin() + static_cast<long>(raw), pool.end());
    if (cfg.confound == ConfoundKind::notch) {
        // pristine pools; the stroke attribute stays as an unlabeled nuisance
        for (auto& s : ds.train_pool) s.y2 = 0;
        for (auto& s : ds.test_pool) s.y2 = 0;
    }
    write_dataset(cfg.out_dir + "/data", ds);
    std::ofstream(cfg.out_dir + "/data/config_used.ini", std::ios::binary | std::ios::trunc)
        << serialize_config(cfg);
}

PreparedData prepare_data(const ExperimentConfig& cfg, const Dataset& ds, double prevalence) {
    PreparedData out;
    if (cfg.confound == ConfoundKind::stroke) {
        ContingencySpec spec;
        spec.p = prevalence;
        spec.total = cfg.train_m;
        out.train_set =
            subsample_contingency(ds.train_pool, spec, mix_seed(cfg.seed, p_tag(prevalence)))
                .samples;
        out.test_original = ds.test_pool;
        out.test_balanced = make_test_split(ds.test_pool, TestKind::balanced, prevalence,
                                            ds.test_pool.size(), mix_seed(cfg.seed, 1001))
                                .samples;
        out.test_inverted =
            make_test_split(ds.test_pool, TestKind::inverted, prevalence, ds.test_pool.size(),
                            mix_seed(cfg.seed, 1002 + p_tag(prevalence)))
                .samples;
    } else {
        // y1-balanced subset of the pristine pool, then assign + filter at p
        std::array<std::vector<size_t>, 2> by_class;
        for (size_t i = 0; i < ds.train_pool.size(); ++i)
            by_class[static_cast<size_t>(ds.train_pool[i].y1)].push_back(i);
        Rng rng(mix_seed(cfg.seed, 31 + p_tag(prevalence)));
        std::vector<LabeledImage> subset;
        for (auto& idx : by_class) {
            rng.shuffle(idx);
            const size_t take = std::min(cfg.train_m / 2, idx.size());
            for (size_t k = 0; k < take; ++k) subset.push_back(ds.train_pool[idx[k]]);
        }
        ContingencySpec spec;
        spec.p = prevalence;
        spec.total = subset.size();
        out.train_set = confound_by_notch(std::move(subset), spec, cfg.notch,
                                          mix_seed(cfg.seed, 32 + p_tag(prevalence)));
        Rng shuffle_rng(mix_seed(cfg.seed, 33 + p_tag(prevalence)));
        shuffle_rng.shuffle(out.train_set);

        out.test_original = ds.test_pool;  // confounder never applied
        ContingencySpec indep;
        indep.p = 0.5;
        indep.total = ds.test_pool.size();
        const std::vector<LabeledImage> filtered_pool =
            confound_by_notch(ds.test_pool, indep, cfg.notch, mix_seed(cfg.seed, 1003));
        out.test_balanced = make_test_split(filtered_pool, TestKind::balanced, prevalence,
                                            filtered_pool.size(), mix_seed(cfg.seed, 1001))
                                .samples;
        out.test_inverted =
            make_test_split(filtered_pool, TestKind::inverted, prevalence, filtered_pool.size(),
                            mix_seed(cfg.seed, 1002 + p_tag(prevalence)))
                .samples;
    }
    out.folds = grouped_kfold(out.train_set, cfg.folds, mix_seed(cfg.seed, 777));
    return out;
}

namespace {

EncoderConfig make_encoder_config(const ExperimentConfig& cfg, const MethodSpec& m) {
    EncoderConfig e;
    e.side = 16;
    e.arch = cfg.arch;
    e.latent = cfg.latent;
    e.d1 = cfg.d1;
    e.d2 = cfg.latent - cfg.d1;
    e.shared_latent = m.kind == MethodKind::advcl;
    return e;
}

TrainConfig make_train_config(const ExperimentConfig& cfg, const MethodSpec& m, int fold) {
    TrainConfig t;
    t.method = m.kind;
    t.rebalance = m.rebalance;
    switch (m.kind) {
        case MethodKind::erm: t.lambda = 0.0; break;
        case MethodKind::advcl: t.lambda = cfg.lambda_advcl; break;
        case MethodKind::dcor: t.lambda = cfg.lambda_dcor; break;
        case MethodKind::mine: t.lambda = cfg.lambda_mine; break;
        case MethodKind::mmd: t.lambda = cfg.lambda_mmd; break;
    }
    t.batch = cfg.batch;
    t.lr = cfg.lr;
    t.weight_decay = cfg.weight_decay;
    t.max_epochs = cfg.max_epochs;
    t.patience = cfg.patience;
    t.mine_inner = cfg.mine_inner;
    t.mine_hidden = cfg.mine_hidden;
    t.seed = cfg.seed + static_cast<uint64_t>(fold);
    return t;
}

std::vector<size_t> all_indices(size_t n) {
    std::vector<size_t> idx(n);
    for (size_t i = 0; i < n; ++i) idx[i] = i;
    return idx;
}

void save_checkpoint(const std::string& dir, const Model& model, const std::string& cfg_hash,
                     const FitResult& fr) {
    fs::create_directories(dir + "/params");
    for (const auto& blk : model.param_blocks()) {
        TensorData t;
        t.dtype = 1;
        for (int d : blk.shape) t.dims.push_back(static_cast<uint32_t>(d));
        t.f32.resize(blk.size());
        for (size_t i = 0; i < blk.size(); ++i)
            t.f32[i] = static_cast<float>(model.params()[blk.offset + i]);
        write_tensor(dir + "/params/" + blk.name + ".dten", t);
    }
    json sidecar;
    sidecar["config_hash"] = cfg_hash;
    sidecar["epoch"] = fr.best_epoch;
    sidecar["val_loss"] = fr.best_val_loss;
    std::ofstream(dir + "/sidecar.json", std::ios::binary | std::ios::trunc)
        << sidecar.dump(2) << "\n";
}

void load_checkpoint(const std::string& dir, Model& model) {
    for (const auto& blk : model.param_blocks()) {
        const TensorData t = read_tensor(dir + "/params/" + blk.name + ".dten");
        if (t.element_count() != blk.size())
            throw ShapeMismatch("checkpoint block size mismatch: " + blk.name);
        for (size_t i = 0; i < blk.size(); ++i)
            model.params()[blk.offset + i] = static_cast<double>(t.f32[i]);
    }
}

json history_json(const FitResult& fr, double seconds) {
    json h;
    h["best_epoch"] = fr.best_epoch;
    h["best_val_loss"] = fr.best_val_loss;
    h["epochs_run"] = fr.epochs_run;
    h["aborted"] = fr.aborted;
    h["abort_reason"] = fr.abort_reason;
    h["encoder_updates"] = fr.encoder_updates;
    h["estimator_updates"] = fr.estimator_updates;
    h["degenerate_batches"] = fr.degenerate_batches;
    h["truncated_cycles"] = fr.truncated_cycles;
    h["seconds"] = seconds;
    h["epochs"] = json::array();
    for (const auto& e : fr.history)
        h["epochs"].push_back(
            {{"train_loss", e.train_loss}, {"val_loss", e.val_loss}, {"dependence", e.dependence}});
    return h;
}

void split_fold(const PreparedData& data, int fold, std::vector<LabeledImage>& train,
                std::vector<LabeledImage>& val) {
    for (const auto& s : data.train_set) {
        if (data.folds.fold_of_group.at(s.group) == fold)
            val.push_back(s);
        else
            train.push_back(s);
    }
}

}  // namespace

std::string run_dir(const ExperimentConfig& cfg, const std::string& method, double prevalence) {
    return cfg.out_dir + "/runs/" + method + "_p" + fmt_p(prevalence);
}

void train_method(const ExperimentConfig& cfg, const std::string& method, double prevalence,
                  int jobs) {
    const MethodSpec mspec = parse_method(method);
    const Dataset ds = read_dataset(cfg.out_dir + "/data");
    const PreparedData data = prepare_data(cfg, ds, prevalence);
    const std::string base = run_dir(cfg, method, prevalence);
    const std::string hash = config_hash(cfg);

    std::atomic<int> next_fold{0};
    std::vector<std::string> errors(static_cast<size_t>(cfg.folds));
    auto worker = [&]() {
        for (;;) {
            const int fold = next_fold.fetch_add(1);
            if (fold >= cfg.folds) return;
            try {
                std::vector<LabeledImage> train, val;
                split_fold(data, fold, train, val);
                if (mspec.rebalance)
                    train = rebalance_oversample(
                        train, mix_seed(cfg.seed, 555 + static_cast<uint64_t>(fold)));

                const EncoderConfig ecfg = make_encoder_config(cfg, mspec);
                const TrainConfig tc = make_train_config(cfg, mspec, fold);
                Model model(ecfg, tc.seed);
                std::optional<MineNet> mine;
                if (mspec.kind == MethodKind::mine)
                    mine.emplace(ecfg.d1, ecfg.d2, cfg.mine_hidden, mix_seed(tc.seed, 99));

                const auto t0 = std::chrono::steady_clock::now();
                const FitResult fr = fit(model, mine ? &*mine : nullptr, train, val, tc);
                const double seconds =
                    std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

                const std::string fold_dir = base + "/fold" + std::to_string(fold);
                fs::create_directories(fold_dir);
                save_checkpoint(fold_dir, model, hash, fr);
                std::ofstream(fold_dir + "/history.json", std::ios::binary | std::ios::trunc)
                    << history_json(fr, seconds).dump(2) << "\n";
            } catch (const std::exception& e) {
                errors[static_cast<size_t>(fold)] = e.what();
            }
        }
    };
    const int nthreads = std::max(1, std::min(jobs, cfg.folds));
    std::vector<std::thread> pool;
    for (int t = 0; t < nthreads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    for (int fold = 0; fold < cfg.folds; ++fold) {
        if (errors[static_cast<size_t>(fold)].empty()) continue;
        const std::string fold_dir = base + "/fold" + std::to_string(fold);
        fs::create_directories(fold_dir);
        json fail;
        fail["failed"] = true;
        fail["error"] = errors[static_cast<size_t>(fold)];
        std::ofstream(fold_dir + "/failed.json", std::ios::binary | std::ios::trunc)
            << fail.dump(2) << "\n";
    }
}

RunRecord eval_method(const ExperimentConfig& cfg, const std::string& method, double prevalence) {
    const MethodSpec mspec = parse_method(method);
    const Dataset ds = read_dataset(cfg.out_dir + "/data");
    const PreparedData data = prepare_data(cfg, ds, prevalence);
    const std::string base = run_dir(cfg, method, prevalence);

    RunRecord rec;
    rec.config_hash = config_hash(cfg);
    rec.method = method;
    rec.prevalence = prevalence;
    rec.started_at = timestamp_utc();

    const EncoderConfig ecfg = make_encoder_config(cfg, mspec);
    for (int fold = 0; fold < cfg.folds; ++fold) {
        FoldReport fr;
        fr.fold = fold;
        const std::string fold_dir = base + "/fold" + std::to_string(fold);
        try {
            if (fs::exists(fold_dir + "/failed.json")) {
                json fail;
                std::ifstream(fold_dir + "/failed.json") >> fail;
                throw NumericalError(fail.value("error", "fold training failed"));
            }
            const TrainConfig tc = make_train_config(cfg, mspec, fold);
            Model model(ecfg, tc.seed);
            load_checkpoint(fold_dir, model);

            json hist;
            std::ifstream(fold_dir + "/history.json") >> hist;
            fr.epochs_run = hist.value("epochs_run", 0);
            fr.best_epoch = hist.value("best_epoch", 0);
            fr.best_val_loss = hist.value("best_val_loss", 0.0);
            fr.seconds = hist.value("seconds", 0.0);
            if (hist.value("aborted", false))
                throw NumericalError("fold aborted: " + hist.value("abort_reason", std::string()));

            std::vector<LabeledImage> fold_train, fold_val;
            split_fold(data, fold, fold_train, fold_val);

            auto embed = [&](const std::vector<LabeledImage>& xs) {
                const BatchView b = make_batch(xs, all_indices(xs.size()));
                return model.encode(b.images);
            };
            auto head1_scores = [&](const std::vector<LabeledImage>& xs) {
                const Mat z = embed(xs);
                const auto [z1, z2] = split_latent(z, ecfg);
                const Mat logits = model.head_forward(1, z1);
                std::vector<double> s(static_cast<size_t>(logits.rows));
                for (int i = 0; i < logits.rows; ++i)
                    s[static_cast<size_t>(i)] = logits.at(i, 1) - logits.at(i, 0);
                return s;
            };
            auto labels_of = [](const std::vector<LabeledImage>& xs, bool primary) {
                std::vector<int> v;
                v.reserve(xs.size());
                for (const auto& s : xs) v.push_back(primary ? s.y1 : s.y2);
                return v;
            };

            fr.auroc_original = 100.0 * auroc(head1_scores(data.test_original),
                                              labels_of(data.test_original, true));
            fr.auroc_balanced = 100.0 * auroc(head1_scores(data.test_balanced),
                                              labels_of(data.test_balanced, true));
            fr.auroc_inverted = 100.0 * auroc(head1_scores(data.test_inverted),
                                              labels_of(data.test_inverted, true));

            // kNN reference set: the fold's (un-rebalanced) training embeddings
            fr.confusion = subspace_confusion(
                embed(fold_train), labels_of(fold_train, true), labels_of(fold_train, false),
                embed(data.test_balanced), labels_of(data.test_balanced, true),
                labels_of(data.test_balanced, false), ecfg.d1, ecfg.d2, ecfg.shared_latent,
                cfg.knn_k);
            fr.dominance = ecfg.shared_latent ? std::numeric_limits<double>::quiet_NaN()
                                              : diagonal_dominance(fr.confusion);
        } catch (const std::exception& e) {
            fr.failed = true;
            fr.error = e.what();
        }
        rec.folds.push_back(std::move(fr));
    }
    rec.finished_at = timestamp_utc();
    return rec;
}

std::string run_record_json(const RunRecord& r) {
    json j;
    j["config_hash"] = r.config_hash;
    j["method"] = r.method;
    j["prevalence"] = r.prevalence;
    j["started_at"] = r.started_at;
    j["finished_at"] = r.finished_at;
    j["folds"] = json::array();
    for (const auto& f : r.folds) {
        json jf;
        jf["fold"] = f.fold;
        jf["failed"] = f.failed;
        if (f.failed) {
            jf["error"] = f.error;
        } else {
            jf["auroc"] = {{"original", f.auroc_original},
                           {"balanced", f.auroc_balanced},
                           {"inverted", f.auroc_inverted}};
            jf["confusion"] = {
                {"shared", f.confusion.shared},
                {"entries", f.confusion.shared
                                ? std::vector<double>{f.confusion.entries[0], f.confusion.entries[1]}
                                : std::vector<double>{f.confusion.entries[0], f.confusion.entries[1],
                                                      f.confusion.entries[2],
                                                      f.confusion.entries[3]}}};
            if (std::isfinite(f.dominance)) jf["dominance"] = f.dominance;
            jf["epochs_run"] = f.epochs_run;
            jf["best_epoch"] = f.best_epoch;
            jf["best_val_loss"] = f.best_val_loss;
            jf["seconds"] = f.seconds;
        }
        j["folds"].push_back(jf);
    }
    return j.dump();
}

RunRecord run_record_from_json(const std::string& line) {
    const json j = json::parse(line);
    RunRecord r;
    r.config_hash = j.value("config_hash", "");
    r.method = j.at("method").get<std::string>();
    r.prevalence = j.at("prevalence").get<double>();
    r.started_at = j.value("started_at", "");
    r.finished_at = j.value("finished_at", "");
    for (const auto& jf : j.at("folds")) {
        FoldReport f;
        f.fold = jf.value("fold", 0);
        f.failed = jf.value("failed", false);
        if (f.failed) {
            f.error = jf.value("error", "");
        } else {
            f.auroc_original = jf.at("auroc").at("original").get<double>();
            f.auroc_balanced = jf.at("auroc").at("balanced").get<double>();
            f.auroc_inverted = jf.at("auroc").at("inverted").get<double>();
            f.confusion.shared = jf.at("confusion").at("shared").get<bool>();
            const auto entries = jf.at("confusion").at("entries").get<std::vector<double>>();
            for (size_t i = 0; i < entries.size() && i < 4; ++i)
                f.confusion.entries[i] = entries[i];
            f.dominance = jf.contains("dominance") ? jf.at("dominance").get<double>()
                                                   : std::numeric_limits<double>::quiet_NaN();
            f.epochs_run = jf.value("epochs_run", 0);
            f.best_epoch = jf.value("best_epoch", 0);
            f.best_val_loss = jf.value("best_val_loss", 0.0);
            f.seconds = jf.value("seconds", 0.0);
        }
        r.folds.push_back(std::move(f));
    }
    return r;
}

void write_records_jsonl(const std::string& path, const std::vector<RunRecord>& records) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    for (const auto& r : records) out << run_record_json(r) << "\n";
}

std::vector<RunRecord> read_records_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InvalidInput("read_records_jsonl: cannot open " + path);
    std::vector<RunRecord> out;
    std::string line;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        out.push_back(run_record_from_json(line));
    }
    return out;
}

void write_run_record(const ExperimentConfig& cfg, const RunRecord& r) {
    const std::string dir = run_dir(cfg, r.method, r.prevalence);
    fs::create_directories(dir);
    std::ofstream(dir + "/record.json", std::ios::binary | std::ios::trunc)
        << run_record_json(r) << "\n";
}

std::vector<RunRecord> collect_records(const ExperimentConfig& cfg) {
    const std::string jsonl = cfg.out_dir + "/records.jsonl";
    if (fs::exists(jsonl)) return read_records_jsonl(jsonl);
    std::vector<RunRecord> out;
    const fs::path runs = fs::path(cfg.out_dir) / "runs";
    if (!fs::exists(runs)) return out;
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(runs)) {
        const fs::path rec = entry.path() / "record.json";
        if (fs::exists(rec)) files.push_back(rec);
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
        std::ifstream in(f, std::ios::binary);
        std::stringstream ss;
        ss << in.rdbuf();
        const std::string text = trim(ss.str());
        if (!text.empty()) out.push_back(run_record_from_json(text));
    }
    return out;
}

std::vector<RunRecord> run_sweep(const ExperimentConfig& cfg, int jobs) {
    std::vector<RunRecord> records;
    for (double p : cfg.prevalences) {
        for (const auto& method : cfg.methods) {
            train_method(cfg, method, p, jobs);
            records.push_back(eval_method(cfg, method, p));
            write_run_record(cfg, records.back());
        }
    }
    write_records_jsonl(cfg.out_dir + "/records.jsonl", records);
    render_tables(cfg, records, cfg.out_dir + "/tables");
    return records;
}

namespace {

struct Agg {
    double mean = 0.0, sd = 0.0;
    int n = 0;
};

Agg aggregate(const std::vector<double>& xs) {
    Agg a;
    a.n = static_cast<int>(xs.size());
    if (xs.empty()) return a;
    for (double x : xs) a.mean += x;
    a.mean /= static_cast<double>(xs.size());
    if (xs.size() > 1) {
        double acc = 0.0;
        for (double x : xs) acc += sq(x - a.mean);
        a.sd = std::sqrt(acc / static_cast<double>(xs.size() - 1));
    }
    return a;
}

std::string pm_cell(const Agg& a) {  // "96 ± 1": integers, half away from zero
    if (a.n == 0) return "";
    std::ostringstream out;
    out << std::llround(a.mean) << " \xC2\xB1 " << std::llround(a.sd);
    return out.str();
}

std::vector<double> fold_values(const RunRecord& r, double (*get)(const FoldReport&)) {
    std::vector<double> out;
    for (const auto& f : r.folds)
        if (!f.failed) out.push_back(get(f));
    return out;
}

const RunRecord* find_record(const std::vector<RunRecord>& records, const std::string& method,
                             double p) {
    for (const auto& r : records)
        if (r.method == method && std::fabs(r.prevalence - p) < 1e-9) return &r;
    return nullptr;
}

}  // namespace

void render_tables(const ExperimentConfig& cfg, const std::vector<RunRecord>& records,
                   const std::string& dir) {
    if (records.empty()) throw EmptyReport("render_tables: no records");
    fs::create_directories(dir);

    std::set<double> prevalences;
    for (const auto& r : records) prevalences.insert(r.prevalence);
    // the main tables report the training prevalence when present
    const double table_p = prevalences.count(cfg.train_p) ? cfg.train_p : *prevalences.rbegin();

    {
        std::ofstream out(dir + "/auroc.csv", std::ios::binary | std::ios::trunc);
        out << "method,original,balanced,inverted\n";
        for (const auto& method : cfg.methods) {
            const RunRecord* r = find_record(records, method, table_p);
            if (!r) continue;
            out << method << ','
                << pm_cell(aggregate(
                       fold_values(*r, [](const FoldReport& f) { return f.auroc_original; })))
                << ','
                << pm_cell(aggregate(
                       fold_values(*r, [](const FoldReport& f) { return f.auroc_balanced; })))
                << ','
                << pm_cell(aggregate(
                       fold_values(*r, [](const FoldReport& f) { return f.auroc_inverted; })))
                << '\n';
        }
    }

    {
        std::ofstream out(dir + "/confusion.csv", std::ios::binary | std::ios::trunc);
        out << "method,fold,z1_y1,z1_y2,z2_y1,z2_y2\n";
        char buf[32];
        for (const auto& method : cfg.methods) {
            const RunRecord* r = find_record(records, method, table_p);
            if (!r) continue;
            std::array<std::vector<double>, 4> cols;
            bool shared = false;
            for (const auto& f : r->folds) {
                if (f.failed) continue;
                shared = f.confusion.shared;
                out << method << ',' << f.fold;
                const int n_entries = f.confusion.shared ? 2 : 4;
                for (int e = 0; e < 4; ++e) {
                    out << ',';
                    if (e < n_entries) {
                        std::snprintf(buf, sizeof buf, "%.1f",
                                      f.confusion.entries[static_cast<size_t>(e)]);
                        out << buf;
                        cols[static_cast<size_t>(e)].push_back(
                            f.confusion.entries[static_cast<size_t>(e)]);
                    }
                }
                out << '\n';
            }
            out << method << ",mean";
            for (int e = 0; e < 4; ++e) {
                out << ',';
                if (e < (shared ? 2 : 4) && !cols[static_cast<size_t>(e)].empty()) {
                    std::snprintf(buf, sizeof buf, "%.1f",
                                  aggregate(cols[static_cast<size_t>(e)]).mean);
                    out << buf;
                }
            }
            out << '\n';
        }
    }

    {
        std::ofstream out(dir + "/dominance_vs_time.csv", std::ios::binary | std::ios::trunc);
        out << "method,dominance,minutes\n";
        char buf[32];
        for (const auto& method : cfg.methods) {
            const RunRecord* r = find_record(records, method, table_p);
            if (!r) continue;
            std::vector<double> doms, secs;
            for (const auto& f : r->folds) {
                if (f.failed) continue;
                if (std::isfinite(f.dominance)) doms.push_back(f.dominance);
                secs.push_back(f.seconds);
            }
            out << method << ',';
            if (!doms.empty()) {
                std::snprintf(buf, sizeof buf, "%.4f", aggregate(doms).mean);
                out << buf;
            }
            std::snprintf(buf, sizeof buf, "%.4f", aggregate(secs).mean / 60.0);
            out << ',' << buf << '\n';
        }
    }

    if (prevalences.size() > 1) {
        std::ofstream out(dir + "/delta_auroc.csv", std::ios::binary | std::ios::trunc);
        out << "method";
        for (double p : prevalences) out << ",p" << fmt_p(p);
        out << "\n";
        char buf[32];
        for (const auto& method : cfg.methods) {
            out << method;
            for (double p : prevalences) {
                out << ',';
                const RunRecord* r = find_record(records, method, p);
                const RunRecord* base = find_record(records, "erm", p);
                if (r && base) {
                    const double dm =
                        aggregate(fold_values(
                                      *r, [](const FoldReport& f) { return f.auroc_inverted; }))
                            .mean -
                        aggregate(fold_values(
                                      *base, [](const FoldReport& f) { return f.auroc_inverted; }))
                            .mean;
                    std::snprintf(buf, sizeof buf, "%.1f", dm);
                    out << buf;
                }
            }
            out << '\n';
        }
    }
}

void render_report(const ExperimentConfig& cfg, const std::vector<RunRecord>& records) {
    render_tables(cfg, records, cfg.out_dir + "/tables");

    // latent scatters: fold-0 snapshot of each split-latent method at the
    // training prevalence (or the steepest one on the grid), balanced
    // distribution, z1 colored by y2
    std::set<double> ps;
    for (const auto& r : records) ps.insert(r.prevalence);
    const double scatter_p = ps.count(cfg.train_p) ? cfg.train_p : *ps.rbegin();
    fs::create_directories(cfg.out_dir + "/scatters");
    const Dataset ds = read_dataset(cfg.out_dir + "/data");
    const PreparedData data = prepare_data(cfg, ds, scatter_p);
    for (const auto& method : cfg.methods) {
        const MethodSpec mspec = parse_method(method);
        if (mspec.kind == MethodKind::advcl) continue;  // shared latent has no z1 plane
        const std::string fold_dir = run_dir(cfg, method, scatter_p) + "/fold0";
        if (!fs::exists(fold_dir + "/params")) continue;
        const EncoderConfig ecfg = make_encoder_config(cfg, mspec);
        if (ecfg.d1 != 2) continue;
        Model model(ecfg, cfg.seed);
        load_checkpoint(fold_dir, model);
        const BatchView b = make_batch(data.test_balanced, all_indices(data.test_balanced.size()));
        const Mat z = model.encode(b.images);
        const auto [z1, z2] = split_latent(z, ecfg);
        scatter_export(z1, b.y2, cfg.out_dir + "/scatters/" + method + "_fold0");
    }

    json summary;
    summary["config_hash"] = config_hash(cfg);
    summary["generated_at"] = timestamp_utc();
    summary["runs"] = json::array();
    for (const auto& r : records) {
        json jr;
        jr["method"] = r.method;
        jr["prevalence"] = r.prevalence;
        auto agg_of = [&](double (*get)(const FoldReport&)) {
            const Agg a = aggregate(fold_values(r, get));
            return json{{"mean", a.mean}, {"sd", a.sd}, {"folds", a.n}};
        };
        jr["auroc"] = {{"original", agg_of([](const FoldReport& f) { return f.auroc_original; })},
                       {"balanced", agg_of([](const FoldReport& f) { return f.auroc_balanced; })},
                       {"inverted", agg_of([](const FoldReport& f) { return f.auroc_inverted; })}};
        std::vector<double> doms;
        for (const auto& f : r.folds)
            if (!f.failed && std::isfinite(f.dominance)) doms.push_back(f.dominance);
        if (!doms.empty()) jr["dominance_mean"] = aggregate(doms).mean;
        jr["epochs_to_convergence"] =
            agg_of([](const FoldReport& f) { return static_cast<double>(f.best_epoch); });
        jr["minutes_mean"] =
            aggregate(fold_values(r, [](const FoldReport& f) { return f.seconds; })).mean / 60.0;
        int failed = 0;
        for (const auto& f : r.folds) failed += f.failed ? 1 : 0;
        jr["failed_folds"] = failed;
        summary["runs"].push_back(jr);
    }
    std::ofstream(cfg.out_dir + "/summary.json", std::ios::binary | std::ios::trunc)
        << summary.dump(2) << "\n";
}

}  // namespace disbench
