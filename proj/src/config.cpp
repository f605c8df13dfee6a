#include "phyg/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "phyg/model_io.hpp"
#include "phyg/report.hpp"
#include "phyg/rng.hpp"

namespace phyg {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys = {
        "seed",
        "out.dir",
        "dataset.source",
        "dataset.synthetic.classes",
        "dataset.synthetic.train_per_class",
        "dataset.synthetic.test_per_class",
        "dataset.synthetic.seed",
        "dataset.synthetic.noise_sigma",
        "dataset.idx.train_images",
        "dataset.idx.train_labels",
        "dataset.idx.test_images",
        "dataset.idx.test_labels",
        "model.arch",
        "model.seed",
        "model.name",
        "train.learning_rate",
        "train.momentum",
        "train.dropout",
        "train.batch_size",
        "train.epochs",
        "train.seed",
        "train.threads",
        "attack.technique",
        "attack.target_labels",
        "attack.source_class",
        "attack.proportion",
        "attack.seed",
        "reference.mode",
        "reference.count",
        "reference.fraction",
        "reference.archs",
        "reference.epochs",
        "reference.seed",
        "reference.files",
        "detect.suspect",
        "detect.alpha",
        "detect.beta",
        "detect.gamma_fraction",
        "detect.phase1_floor",
        "detect.max_iters",
        "detect.phase1_max_iters",
        "detect.num_samples",
        "detect.prob_threshold",
        "detect.lambda_iters",
        "detect.lambda_rounds",
        "detect.gamma_starts",
        "detect.gamma_iters",
        "detect.seed",
        "detect.threads",
        "detect.ground_truth",
        "mitigate.c",
        "mitigate.d",
        "mitigate.loss_target",
        "mitigate.samples_per_pair",
        "mitigate.clean_fraction",
        "mitigate.adversarial_fraction",
        "mitigate.retrain_epochs",
        "mitigate.alpha",
        "mitigate.max_iters",
        "mitigate.max_rounds",
        "mitigate.seed",
    };
    return keys;
}

// attack.trigger.<field> plus numbered attack.trigger2./trigger3. groups.
bool is_trigger_key(const std::string& key, int* index, std::string* field) {
    const std::string prefix = "attack.trigger";
    if (key.rfind(prefix, 0) != 0) return false;
    std::size_t pos = prefix.size();
    int idx = 1;
    if (pos < key.size() && key[pos] != '.') {
        int v = 0;
        auto [p, ec] = std::from_chars(key.data() + pos, key.data() + key.size(), v);
        if (ec != std::errc{} || v < 1) return false;
        idx = v;
        pos = static_cast<std::size_t>(p - key.data());
    }
    if (pos >= key.size() || key[pos] != '.') return false;
    *index = idx;
    *field = key.substr(pos + 1);
    static const std::set<std::string> fields = {"kind", "height", "width",       "row",
                                                 "col",  "value",  "noise_seed", "transparency"};
    return fields.count(*field) > 0;
}

}  // namespace

KvConfig KvConfig::parse_text(const std::string& text, const std::string& origin) {
    KvConfig kv;
    kv.raw = text;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
        std::string key = trim(t.substr(0, eq));
        std::string value = trim(t.substr(eq + 1));
        if (key.empty())
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
        int trig_idx = 0;
        std::string trig_field;
        if (!known_keys().count(key) && !is_trigger_key(key, &trig_idx, &trig_field))
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": unknown key '" + key +
                              "'");
        if (kv.values.count(key))
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": duplicate key '" + key +
                              "'");
        kv.values[key] = value;
    }
    return kv;
}

KvConfig KvConfig::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_text(ss.str(), path);
}

std::string KvConfig::get(const std::string& key, const std::string& fallback) const {
    auto it = values.find(key);
    return it == values.end() ? fallback : it->second;
}

double KvConfig::get_double(const std::string& key, double fallback) const {
    auto it = values.find(key);
    if (it == values.end()) return fallback;
    char* end = nullptr;
    double v = std::strtod(it->second.c_str(), &end);
    if (end == it->second.c_str() || *end != '\0')
        throw ConfigError("bad numeric value for " + key + ": '" + it->second + "'");
    return v;
}

std::int64_t KvConfig::get_int(const std::string& key, std::int64_t fallback) const {
    auto it = values.find(key);
    if (it == values.end()) return fallback;
    std::int64_t v = 0;
    auto [p, ec] = std::from_chars(it->second.data(), it->second.data() + it->second.size(), v);
    if (ec != std::errc{} || p != it->second.data() + it->second.size())
        throw ConfigError("bad integer value for " + key + ": '" + it->second + "'");
    return v;
}

std::uint64_t KvConfig::get_u64(const std::string& key, std::uint64_t fallback) const {
    auto it = values.find(key);
    if (it == values.end()) return fallback;
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(it->second.data(), it->second.data() + it->second.size(), v);
    if (ec != std::errc{} || p != it->second.data() + it->second.size())
        throw ConfigError("bad unsigned value for " + key + ": '" + it->second + "'");
    return v;
}

std::vector<int> KvConfig::get_int_list(const std::string& key) const {
    std::vector<int> out;
    for (const std::string& part : get_str_list(key)) {
        int v = 0;
        auto [p, ec] = std::from_chars(part.data(), part.data() + part.size(), v);
        if (ec != std::errc{} || p != part.data() + part.size())
            throw ConfigError("bad integer list for " + key);
        out.push_back(v);
    }
    return out;
}

std::vector<std::string> KvConfig::get_str_list(const std::string& key) const {
    std::vector<std::string> out;
    auto it = values.find(key);
    if (it == values.end()) return out;
    std::string cur;
    for (char ch : it->second + ",") {
        if (ch == ',') {
            std::string t = trim(cur);
            if (!t.empty()) out.push_back(t);
            cur.clear();
        } else {
            cur += ch;
        }
    }
    return out;
}

namespace {

std::vector<TriggerSpec> parse_triggers(const KvConfig& kv) {
    std::vector<TriggerSpec> out;
    for (int idx = 1; idx < 100; ++idx) {
        const std::string prefix =
            idx == 1 ? "attack.trigger." : "attack.trigger" + std::to_string(idx) + ".";
        bool any = false;
        for (const auto& [k, v] : kv.values)
            if (k.rfind(prefix, 0) == 0) any = true;
        if (!any) {
            if (idx == 1) continue;  // unnumbered group is optional
            break;
        }
        TriggerSpec t;
        const std::string kind = kv.get(prefix + "kind", "patch");
        if (kind == "patch")
            t.kind = TriggerSpec::Kind::Patch;
        else if (kind == "blend")
            t.kind = TriggerSpec::Kind::Blend;
        else
            throw ConfigError("unknown trigger kind '" + kind + "'");
        t.height = static_cast<int>(kv.get_int(prefix + "height", 4));
        t.width = static_cast<int>(kv.get_int(prefix + "width", 4));
        t.row = static_cast<int>(kv.get_int(prefix + "row", -1));
        t.col = static_cast<int>(kv.get_int(prefix + "col", -1));
        t.value = kv.get_double(prefix + "value", 1.0);
        t.noise_seed = kv.get_u64(prefix + "noise_seed", 1);
        t.transparency = kv.get_double(prefix + "transparency", 0.1);
        out.push_back(t);
    }
    return out;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_kv(const KvConfig& kv) {
    ExperimentConfig cfg;
    cfg.seed = kv.get_u64("seed", cfg.seed);
    cfg.out_dir = kv.get("out.dir", cfg.out_dir);

    // dataset: exactly one source
    const std::string source = kv.get("dataset.source", "synthetic");
    const bool any_idx = kv.has("dataset.idx.train_images") || kv.has("dataset.idx.train_labels") ||
                         kv.has("dataset.idx.test_images") || kv.has("dataset.idx.test_labels");
    const bool any_synth =
        kv.has("dataset.synthetic.classes") || kv.has("dataset.synthetic.train_per_class") ||
        kv.has("dataset.synthetic.test_per_class") || kv.has("dataset.synthetic.seed") ||
        kv.has("dataset.synthetic.noise_sigma");
    if (source == "synthetic") {
        if (any_idx) throw ConfigError("dataset.source=synthetic but idx keys are present");
        cfg.dataset.source = DatasetConfig::Source::Synthetic;
        cfg.dataset.classes = static_cast<int>(kv.get_int("dataset.synthetic.classes", 10));
        cfg.dataset.train_per_class =
            static_cast<int>(kv.get_int("dataset.synthetic.train_per_class", 300));
        cfg.dataset.test_per_class =
            static_cast<int>(kv.get_int("dataset.synthetic.test_per_class", 60));
        cfg.dataset.seed = kv.get_u64("dataset.synthetic.seed", 1);
        cfg.dataset.noise_sigma = kv.get_double("dataset.synthetic.noise_sigma", 0.05);
    } else if (source == "idx") {
        if (any_synth) throw ConfigError("dataset.source=idx but synthetic keys are present");
        cfg.dataset.source = DatasetConfig::Source::Idx;
        cfg.dataset.train_images = kv.get("dataset.idx.train_images", "");
        cfg.dataset.train_labels = kv.get("dataset.idx.train_labels", "");
        cfg.dataset.test_images = kv.get("dataset.idx.test_images", "");
        cfg.dataset.test_labels = kv.get("dataset.idx.test_labels", "");
        if (cfg.dataset.train_images.empty() || cfg.dataset.train_labels.empty() ||
            cfg.dataset.test_images.empty() || cfg.dataset.test_labels.empty())
            throw ConfigError("dataset.source=idx requires all four idx paths");
    } else {
        throw ConfigError("dataset.source must be 'synthetic' or 'idx'");
    }

    cfg.model.arch = kv.get("model.arch", cfg.model.arch);
    cfg.model.seed = kv.get_u64("model.seed", cfg.model.seed);
    cfg.model.name = kv.get("model.name", cfg.model.name);

    cfg.train.learning_rate = kv.get_double("train.learning_rate", 0.01);
    cfg.train.momentum = kv.get_double("train.momentum", 0.9);
    cfg.train.dropout = kv.get_double("train.dropout", 0.5);
    cfg.train.batch_size = static_cast<int>(kv.get_int("train.batch_size", 128));
    cfg.train.epochs = static_cast<int>(kv.get_int("train.epochs", 50));
    cfg.train.seed = kv.get_u64("train.seed", seed_combine(cfg.seed, 0x7E41u));
    cfg.train.threads = static_cast<int>(kv.get_int("train.threads", 0));
    cfg.train.validate();

    const std::string technique = kv.get("attack.technique", "none");
    if (technique != "none") {
        cfg.has_attack = true;
        if (technique == "mislabel")
            cfg.attack.technique = Technique::Mislabel;
        else if (technique == "badnets")
            cfg.attack.technique = Technique::BadNets;
        else if (technique == "chen")
            cfg.attack.technique = Technique::Chen;
        else if (technique == "adaptive")
            cfg.attack.technique = Technique::Adaptive;
        else
            throw ConfigError("unknown attack.technique '" + technique + "'");
        cfg.attack.target_labels = kv.get_int_list("attack.target_labels");
        cfg.attack.source_class = static_cast<int>(kv.get_int("attack.source_class", -1));
        cfg.attack.proportion = kv.get_double("attack.proportion", 0.06);
        cfg.attack.triggers = parse_triggers(kv);
        if (cfg.attack.triggers.empty() &&
            (cfg.attack.technique == Technique::BadNets || cfg.attack.technique == Technique::Chen))
            cfg.attack.triggers = {cfg.attack.technique == Technique::BadNets
                                       ? TriggerSpec::patch()
                                       : TriggerSpec::blend()};
        cfg.attack_seed = kv.get_u64("attack.seed", seed_combine(cfg.seed, 0xA77Au));
    }

    const std::string ref_mode = kv.get("reference.mode", "self_train");
    if (ref_mode == "self_train")
        cfg.reference.mode = ReferenceConfig::Mode::SelfTrain;
    else if (ref_mode == "files")
        cfg.reference.mode = ReferenceConfig::Mode::Files;
    else
        throw ConfigError("reference.mode must be 'self_train' or 'files'");
    cfg.reference.count = static_cast<int>(kv.get_int("reference.count", 1));
    cfg.reference.fraction = kv.get_double("reference.fraction", 0.25);
    cfg.reference.archs = kv.get_str_list("reference.archs");
    if (cfg.reference.archs.empty()) cfg.reference.archs = {"desk-b"};
    cfg.reference.epochs = static_cast<int>(kv.get_int("reference.epochs", 20));
    cfg.reference.seed = kv.get_u64("reference.seed", seed_combine(cfg.seed, 0x4EFu));
    cfg.reference.files = kv.get_str_list("reference.files");
    if (cfg.reference.mode == ReferenceConfig::Mode::Files && cfg.reference.files.empty())
        throw ConfigError("reference.mode=files requires reference.files");
    if (cfg.reference.mode == ReferenceConfig::Mode::SelfTrain && cfg.reference.count < 1)
        throw ConfigError("reference.count must be >= 1");

    cfg.detect_suspect = kv.get("detect.suspect", "");
    cfg.detect.alpha = kv.get_double("detect.alpha", 0.01);
    cfg.detect.beta = kv.get_double("detect.beta", 0.2);
    cfg.detect.gamma_fraction = kv.get_double("detect.gamma_fraction", 0.5);
    cfg.detect.phase1_floor = kv.get_double("detect.phase1_floor", 3.0);
    cfg.detect.max_iters = static_cast<int>(kv.get_int("detect.max_iters", 2000));
    cfg.detect.phase1_max_iters = static_cast<int>(kv.get_int("detect.phase1_max_iters", 500));
    cfg.detect.num_samples = static_cast<int>(kv.get_int("detect.num_samples", 100));
    cfg.detect.prob_threshold = kv.get_double("detect.prob_threshold", 0.5);
    cfg.detect.lambda_iters = static_cast<int>(kv.get_int("detect.lambda_iters", 1000));
    cfg.detect.lambda_rounds = static_cast<int>(kv.get_int("detect.lambda_rounds", 5));
    cfg.detect.gamma_starts = static_cast<int>(kv.get_int("detect.gamma_starts", 8));
    cfg.detect.gamma_iters = static_cast<int>(kv.get_int("detect.gamma_iters", 500));
    cfg.detect.seed = kv.get_u64("detect.seed", seed_combine(cfg.seed, 0xDE7Cu));
    cfg.detect.threads = static_cast<int>(kv.get_int("detect.threads", 0));
    cfg.detect.validate();
    if (kv.has("detect.ground_truth")) cfg.ground_truth = kv.get_int_list("detect.ground_truth");

    cfg.mitigate.c_init = kv.get_double("mitigate.c", 1.0);
    cfg.mitigate.d_init = kv.get_double("mitigate.d", 1.0);
    cfg.mitigate.loss_target = kv.get_double("mitigate.loss_target", 0.01);
    cfg.mitigate.samples_per_pair = static_cast<int>(kv.get_int("mitigate.samples_per_pair", 5));
    cfg.mitigate.clean_fraction = kv.get_double("mitigate.clean_fraction", 0.10);
    cfg.mitigate.adversarial_fraction = kv.get_double("mitigate.adversarial_fraction", 0.20);
    cfg.mitigate.retrain_epochs = static_cast<int>(kv.get_int("mitigate.retrain_epochs", 5));
    cfg.mitigate.alpha = kv.get_double("mitigate.alpha", 0.01);
    cfg.mitigate.max_iters = static_cast<int>(kv.get_int("mitigate.max_iters", 2000));
    cfg.mitigate.seed = kv.get_u64("mitigate.seed", seed_combine(cfg.seed, 0x017Au));
    cfg.mitigate.retrain = cfg.train;
    cfg.mitigate.retrain.seed = cfg.mitigate.seed;
    cfg.mitigate.threads = cfg.detect.threads;
    cfg.mitigate.validate();
    cfg.max_rounds = static_cast<int>(kv.get_int("mitigate.max_rounds", 4));
    if (cfg.max_rounds < 1) throw ConfigError("mitigate.max_rounds must be >= 1");

    cfg.echo = kv.values;
    return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
    KvConfig kv = KvConfig::parse_file(path);
    ExperimentConfig cfg = from_kv(kv);
    cfg.config_hash = crc32_hex(kv.raw);
    return cfg;
}

ResolvedData resolve_dataset(const ExperimentConfig& cfg) {
    ResolvedData out;
    if (cfg.dataset.source == DatasetConfig::Source::Synthetic) {
        out.train = synth_generate(cfg.dataset.classes, cfg.dataset.train_per_class,
                                   cfg.dataset.seed, cfg.dataset.noise_sigma);
        out.test = synth_generate(cfg.dataset.classes, cfg.dataset.test_per_class,
                                  seed_combine(cfg.dataset.seed, 0x7E57u),
                                  cfg.dataset.noise_sigma);
        out.train.name = "synthetic-train";
        out.test.name = "synthetic-test";
    } else {
        out.train = load_idx(cfg.dataset.train_images, cfg.dataset.train_labels);
        out.test = load_idx(cfg.dataset.test_images, cfg.dataset.test_labels);
        // class counts are inferred per file; align them
        out.train.class_count = std::max(out.train.class_count, out.test.class_count);
        out.test.class_count = out.train.class_count;
    }
    return out;
}

ArchitectureSpec resolve_arch(const std::string& name_or_text, const Dataset& sample,
                              double dropout_rate) {
    if (sample.size() == 0) throw ConfigError("cannot size an architecture for an empty dataset");
    const auto& shape = sample.images[0].shape;
    if (shape.size() != 3) throw ConfigError("dataset images must be HxWxC");
    const auto names = preset_names();
    if (std::find(names.begin(), names.end(), name_or_text) != names.end())
        return make_preset(name_or_text, shape[0], shape[1], shape[2], sample.class_count,
                           dropout_rate);
    try {
        ArchitectureSpec spec = ArchitectureSpec::from_text(name_or_text);
        if (spec.in_h != shape[0] || spec.in_w != shape[1] || spec.in_c != shape[2] ||
            spec.classes != sample.class_count)
            throw ConfigError("architecture text does not match the dataset geometry");
        return spec;
    } catch (const std::invalid_argument& e) {
        throw ConfigError("model.arch '" + name_or_text +
                          "' is neither a preset nor valid architecture text: " + e.what());
    }
}

std::vector<ModelHandle> resolve_references(const ExperimentConfig& cfg, const Dataset& clean,
                                            const ArchitectureSpec* suspect_arch) {
    std::vector<ModelHandle> refs;
    if (cfg.reference.mode == ReferenceConfig::Mode::Files) {
        for (const std::string& path : cfg.reference.files) refs.push_back(load_model(path));
    } else {
        for (int i = 0; i < cfg.reference.count; ++i) {
            const std::string arch_name =
                cfg.reference.archs[static_cast<std::size_t>(i) % cfg.reference.archs.size()];
            ArchitectureSpec spec = resolve_arch(arch_name, clean, cfg.train.dropout);
            const std::uint64_t seed = seed_combine(cfg.reference.seed, 0x4E61u,
                                                    static_cast<std::uint64_t>(i));
            Dataset part = subsample(clean, cfg.reference.fraction, seed);
            TrainConfig tc = cfg.train;
            tc.epochs = cfg.reference.epochs;
            tc.seed = seed_combine(seed, 0x7124u);
            ModelHandle m = build_model(spec, seed, "reference-" + std::to_string(i));
            refs.push_back(train(m, part, tc));
        }
    }
    if (refs.empty()) throw ConfigError("reference pool is empty");

    // With a pool of two or more, drop members sharing the suspect's
    // architecture; a single reference may legitimately share it.
    if (suspect_arch != nullptr && refs.size() >= 2) {
        const std::string suspect_text = suspect_arch->to_text();
        std::vector<ModelHandle> kept;
        for (ModelHandle& r : refs)
            if (r.spec.to_text() != suspect_text) kept.push_back(std::move(r));
        if (kept.empty())
            throw ConfigError(
                "every reference shares the suspect's architecture; provide a diverse pool");
        refs = std::move(kept);
    }
    return refs;
}

}  // namespace phyg
