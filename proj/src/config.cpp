#include "ocuq/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace ocuq {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::string qualified(const std::string& section, const std::string& key) { return section + "." + key; }

long long to_int(const std::string& section, const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const long long x = std::stoll(v, &pos);
        if (pos == v.size()) return x;
    } catch (const std::exception&) {
    }
    throw ConfigError("invalid integer for " + qualified(section, key) + ": '" + v + "'");
}

std::uint64_t to_u64(const std::string& section, const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const unsigned long long x = std::stoull(v, &pos);
        if (pos == v.size() && v.find('-') == std::string::npos) return x;
    } catch (const std::exception&) {
    }
    throw ConfigError("invalid unsigned integer for " + qualified(section, key) + ": '" + v + "'");
}

double to_double(const std::string& section, const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double x = std::stod(v, &pos);
        if (pos == v.size()) return x;
    } catch (const std::exception&) {
    }
    throw ConfigError("invalid number for " + qualified(section, key) + ": '" + v + "'");
}

bool to_bool(const std::string& section, const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "off" || v == "no") return false;
    throw ConfigError("invalid boolean for " + qualified(section, key) + ": '" + v + "'");
}

std::string fmt_double(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

template <typename T, typename F>
std::string join(const std::vector<T>& items, F&& fmt) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i) out += ",";
        out += fmt(items[i]);
    }
    return out;
}

[[noreturn]] void unknown_key(const std::string& section, const std::string& key) {
    throw ConfigError("unknown config key '" + qualified(section, key) + "'");
}

void set_world(WorldConfig& w, const std::string& k, const std::string& v) {
    const std::string s = "world";
    if (k == "grid_x") w.grid_x = to_int(s, k, v);
    else if (k == "grid_y") w.grid_y = to_int(s, k, v);
    else if (k == "grid_z") w.grid_z = to_int(s, k, v);
    else if (k == "num_classes") w.num_classes = to_int(s, k, v);
    else if (k == "feature_dim") w.feature_dim = to_int(s, k, v);
    else if (k == "objects_min") w.objects_min = static_cast<int>(to_int(s, k, v));
    else if (k == "objects_max") w.objects_max = static_cast<int>(to_int(s, k, v));
    else if (k == "anchor_scale") w.anchor_scale = to_double(s, k, v);
    else if (k == "anchor_separation") w.anchor_separation = to_double(s, k, v);
    else if (k == "projection_scale") w.projection_scale = to_double(s, k, v);
    else if (k == "noise_sigma") w.noise_sigma = to_double(s, k, v);
    else if (k == "seed") w.seed = to_u64(s, k, v);
    else if (k == "train_scenes") w.train_scenes = static_cast<int>(to_int(s, k, v));
    else if (k == "val_scenes") w.val_scenes = static_cast<int>(to_int(s, k, v));
    else if (k == "test_scenes") w.test_scenes = static_cast<int>(to_int(s, k, v));
    else if (k == "noise_strength") w.strengths.noise = to_double(s, k, v);
    else if (k == "fog_strength") w.strengths.fog = to_double(s, k, v);
    else if (k == "bias_strength") w.strengths.bias = to_double(s, k, v);
    else unknown_key(s, k);
}

Activation parse_activation(const std::string& v) {
    if (v == "leaky_relu") return Activation::leaky_relu;
    if (v == "identity") return Activation::identity;
    throw ConfigError("invalid activation '" + v + "' (leaky_relu|identity)");
}

const char* activation_name(Activation a) { return a == Activation::identity ? "identity" : "leaky_relu"; }

void set_head(HeadConfig& h, const std::string& k, const std::string& v) {
    const std::string s = "head";
    if (k == "input_dim") h.input_dim = to_int(s, k, v);
    else if (k == "width") h.width = to_int(s, k, v);
    else if (k == "num_layers") h.num_layers = static_cast<int>(to_int(s, k, v));
    else if (k == "skip") h.skip = to_bool(s, k, v);
    else if (k == "sn") h.sn_enabled = to_bool(s, k, v);
    else if (k == "sn_coefficient") h.sn_coefficient = to_double(s, k, v);
    else if (k == "num_classes") h.num_classes = to_int(s, k, v);
    else if (k == "activation") h.activation = parse_activation(v);
    else unknown_key(s, k);
}

void set_training(TrainingConfig& t, const std::string& k, const std::string& v) {
    const std::string s = "training";
    if (k == "epochs") t.epochs = static_cast<int>(to_int(s, k, v));
    else if (k == "batch_size") t.batch_size = to_int(s, k, v);
    else if (k == "optimizer") {
        if (v == "adam") t.optimizer.kind = OptimizerKind::adam;
        else if (v == "sgd") t.optimizer.kind = OptimizerKind::sgd_momentum;
        else throw ConfigError("invalid training.optimizer '" + v + "' (adam|sgd)");
    } else if (k == "learning_rate") t.optimizer.learning_rate = to_double(s, k, v);
    else if (k == "momentum") t.optimizer.momentum = to_double(s, k, v);
    else if (k == "beta1") t.optimizer.beta1 = to_double(s, k, v);
    else if (k == "beta2") t.optimizer.beta2 = to_double(s, k, v);
    else if (k == "eps") t.optimizer.eps = to_double(s, k, v);
    else if (k == "seed") t.seed = to_u64(s, k, v);
    else if (k == "ensemble") t.ensemble = static_cast<int>(to_int(s, k, v));
    else unknown_key(s, k);
}

std::vector<double> to_double_list(const std::string& s, const std::string& k, const std::string& v) {
    std::vector<double> out;
    for (const auto& item : split_list(v)) out.push_back(to_double(s, k, item));
    return out;
}

void set_gda(GdaConfig& g, const std::string& k, const std::string& v) {
    const std::string s = "gda";
    if (k == "cap_per_class") g.cap_per_class = static_cast<std::size_t>(to_u64(s, k, v));
    else if (k == "eps_ladder") g.eps_ladder = to_double_list(s, k, v);
    else if (k == "seed") g.seed = to_u64(s, k, v);
    else unknown_key(s, k);
}

void set_calibration(CalibrationConfig& c, const std::string& k, const std::string& v) {
    const std::string s = "calibration";
    if (k == "bins") c.bins = static_cast<int>(to_int(s, k, v));
    else if (k == "t_min") c.t_min = to_double(s, k, v);
    else if (k == "t_max") c.t_max = to_double(s, k, v);
    else if (k == "lambda_grid") c.lambda_grid = to_double_list(s, k, v);
    else if (k == "mode") {
        if (v == "additive") c.mode = UgtsMode::additive;
        else if (v == "multiplicative") c.mode = UgtsMode::multiplicative;
        else throw ConfigError("invalid calibration.mode '" + v + "' (additive|multiplicative)");
    } else unknown_key(s, k);
}

std::vector<int> to_int_list(const std::string& section, const std::string& key, const std::string& v) {
    std::vector<int> out;
    for (const auto& item : split_list(v)) out.push_back(static_cast<int>(to_int(section, key, item)));
    return out;
}

void set_benchmark(BenchmarkConfig& b, const std::string& k, const std::string& v) {
    const std::string s = "benchmark";
    if (k == "methods") b.methods = split_list(v);
    else if (k == "corruptions") {
        b.corruptions.clear();
        for (const auto& item : split_list(v)) {
            try {
                b.corruptions.push_back(parse_corruption_kind(item));
            } catch (const InputError& e) {
                throw ConfigError(std::string(e.what()) + " in benchmark.corruptions");
            }
        }
    } else if (k == "severities") b.severities = to_int_list(s, k, v); else if (k == "region") b.region = to_bool(s, k, v);
    else if (k == "half_angle_deg") b.half_angle_deg = to_double(s, k, v);
    else if (k == "histogram_bins") b.histogram_bins = static_cast<int>(to_int(s, k, v));
    else if (k == "null_scenes") b.null_scenes = static_cast<int>(to_int(s, k, v));
    else if (k == "ablation_layers") b.ablation_layers = to_int_list(s, k, v);
    else if (k == "sweep_dims") b.sweep_dims = to_int_list(s, k, v);
    else if (k == "seed") b.seed = to_u64(s, k, v);
    else unknown_key(s, k);
}

}  // namespace

std::vector<std::string> split_list(const std::string& text, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(text);
    while (std::getline(in, cur, sep)) {
        cur = trim(cur);
        if (!cur.empty()) out.push_back(cur);
    }
    return out;
}

void set_value(RunConfig& c, const std::string& section, const std::string& key, const std::string& raw) {
    const std::string v = trim(raw);
    if (section == "world") set_world(c.world, key, v);
    else if (section == "head") set_head(c.head, key, v);
    else if (section == "training") set_training(c.training, key, v);
    else if (section == "gda") set_gda(c.gda, key, v);
    else if (section == "calibration") set_calibration(c.calibration, key, v);
    else if (section == "benchmark") set_benchmark(c.benchmark, key, v);
    else throw ConfigError("unknown config section '" + section + "' (key '" + key + "')");
}

void apply_override(RunConfig& c, const std::string& assignment) {
    const auto eq = assignment.find('=');
    const auto dot = assignment.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot > eq)
        throw ConfigError("override must look like section.key=value, got '" + assignment + "'");
    set_value(c, trim(assignment.substr(0, dot)), trim(assignment.substr(dot + 1, eq - dot - 1)),
              assignment.substr(eq + 1));
}

RunConfig parse_config(const std::string& text) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    std::istringstream in(text);
    try {
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
    RunConfig c;
    for (const auto& [section, body] : tree) {
        if (body.empty()) {
            if (!body.data().empty()) throw ConfigError("config key '" + section + "' is outside any section");
            static const std::vector<std::string> known{"world", "head", "training", "gda", "calibration", "benchmark"};
            if (std::find(known.begin(), known.end(), section) == known.end())
                throw ConfigError("unknown config section '" + section + "'");
            continue;
        }
        for (const auto& [key, value] : body) set_value(c, section, key, value.data());
    }
    sync_head_to_world(c);
    return c;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

void sync_head_to_world(RunConfig& c) {
    c.head.input_dim = c.world.feature_dim;
    c.head.num_classes = c.world.num_classes;
}

std::string to_text(const RunConfig& c) {
    std::ostringstream o;
    const auto& w = c.world;
    o << "[world]\n"
      << "grid_x = " << w.grid_x << "\n"
      << "grid_y = " << w.grid_y << "\n"
      << "grid_z = " << w.grid_z << "\n"
      << "num_classes = " << w.num_classes << "\n"
      << "feature_dim = " << w.feature_dim << "\n"
      << "objects_min = " << w.objects_min << "\n"
      << "objects_max = " << w.objects_max << "\n"
      << "anchor_scale = " << fmt_double(w.anchor_scale) << "\n"
      << "anchor_separation = " << fmt_double(w.anchor_separation) << "\n"
      << "projection_scale = " << fmt_double(w.projection_scale) << "\n"
      << "noise_sigma = " << fmt_double(w.noise_sigma) << "\n"
      << "seed = " << w.seed << "\n"
      << "train_scenes = " << w.train_scenes << "\n"
      << "val_scenes = " << w.val_scenes << "\n"
      << "test_scenes = " << w.test_scenes << "\n"
      << "noise_strength = " << fmt_double(w.strengths.noise) << "\n"
      << "fog_strength = " << fmt_double(w.strengths.fog) << "\n"
      << "bias_strength = " << fmt_double(w.strengths.bias) << "\n";
    const auto& h = c.head;
    o << "\n[head]\n"
      << "input_dim = " << h.input_dim << "\n"
      << "width = " << h.width << "\n"
      << "num_layers = " << h.num_layers << "\n"
      << "skip = " << (h.skip ? "true" : "false") << "\n"
      << "sn = " << (h.sn_enabled ? "true" : "false") << "\n"
      << "sn_coefficient = " << fmt_double(h.sn_coefficient) << "\n"
      << "num_classes = " << h.num_classes << "\n"
      << "activation = " << activation_name(h.activation) << "\n";
    const auto& t = c.training;
    o << "\n[training]\n"
      << "epochs = " << t.epochs << "\n"
      << "batch_size = " << t.batch_size << "\n"
      << "optimizer = " << (t.optimizer.kind == OptimizerKind::adam ? "adam" : "sgd") << "\n"
      << "learning_rate = " << fmt_double(t.optimizer.learning_rate) << "\n"
      << "momentum = " << fmt_double(t.optimizer.momentum) << "\n"
      << "beta1 = " << fmt_double(t.optimizer.beta1) << "\n"
      << "beta2 = " << fmt_double(t.optimizer.beta2) << "\n"
      << "eps = " << fmt_double(t.optimizer.eps) << "\n"
      << "seed = " << t.seed << "\n"
      << "ensemble = " << t.ensemble << "\n";
    o << "\n[gda]\n"
      << "cap_per_class = " << c.gda.cap_per_class << "\n"
      << "eps_ladder = " << join(c.gda.eps_ladder, fmt_double) << "\n"
      << "seed = " << c.gda.seed << "\n";
    const auto& cal = c.calibration;
    o << "\n[calibration]\n"
      << "bins = " << cal.bins << "\n"
      << "t_min = " << fmt_double(cal.t_min) << "\n"
      << "t_max = " << fmt_double(cal.t_max) << "\n"
      << "lambda_grid = " << join(cal.lambda_grid, fmt_double) << "\n"
      << "mode = " << (cal.mode == UgtsMode::additive ? "additive" : "multiplicative") << "\n";
    const auto& b = c.benchmark;
    o << "\n[benchmark]\n"
      << "methods = " << join(b.methods, [](const std::string& s) { return s; }) << "\n"
      << "corruptions = " << join(b.corruptions, [](CorruptionKind k) { return std::string(to_string(k)); }) << "\n"
      << "severities = " << join(b.severities, [](int s) { return std::to_string(s); }) << "\n"
      << "region = " << (b.region ? "true" : "false") << "\n"
      << "half_angle_deg = " << fmt_double(b.half_angle_deg) << "\n"
      << "histogram_bins = " << b.histogram_bins << "\n"
      << "null_scenes = " << b.null_scenes << "\n"
      << "ablation_layers = " << join(b.ablation_layers, [](int x) { return std::to_string(x); }) << "\n"
      << "sweep_dims = " << join(b.sweep_dims, [](int x) { return std::to_string(x); }) << "\n"
      << "seed = " << b.seed << "\n";
    return o.str();
}

nlohmann::json to_json(const WorldConfig& w) {
    return {{"grid", {w.grid_x, w.grid_y, w.grid_z}},
            {"num_classes", w.num_classes},
            {"feature_dim", w.feature_dim},
            {"objects_min", w.objects_min},
            {"objects_max", w.objects_max},
            {"anchor_scale", w.anchor_scale},
            {"anchor_separation", w.anchor_separation},
            {"projection_scale", w.projection_scale},
            {"noise_sigma", w.noise_sigma},
            {"seed", w.seed},
            {"train_scenes", w.train_scenes},
            {"val_scenes", w.val_scenes},
            {"test_scenes", w.test_scenes},
            {"noise_strength", w.strengths.noise},
            {"fog_strength", w.strengths.fog},
            {"bias_strength", w.strengths.bias}};
}

WorldConfig world_config_from_json(const nlohmann::json& j) {
    try {
        WorldConfig w;
        w.grid_x = j.at("grid").at(0).get<Index>();
        w.grid_y = j.at("grid").at(1).get<Index>();
        w.grid_z = j.at("grid").at(2).get<Index>();
        w.num_classes = j.at("num_classes").get<Index>();
        w.feature_dim = j.at("feature_dim").get<Index>();
        w.objects_min = j.at("objects_min").get<int>();
        w.objects_max = j.at("objects_max").get<int>();
        w.anchor_scale = j.at("anchor_scale").get<double>();
        w.anchor_separation = j.at("anchor_separation").get<double>();
        w.projection_scale = j.at("projection_scale").get<double>();
        w.noise_sigma = j.at("noise_sigma").get<double>();
        w.seed = j.at("seed").get<std::uint64_t>();
        w.train_scenes = j.at("train_scenes").get<int>();
        w.val_scenes = j.at("val_scenes").get<int>();
        w.test_scenes = j.at("test_scenes").get<int>();
        w.strengths.noise = j.at("noise_strength").get<double>();
        w.strengths.fog = j.at("fog_strength").get<double>();
        w.strengths.bias = j.at("bias_strength").get<double>();
        return w;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("world config metadata: ") + e.what());
    }
}

nlohmann::json to_json(const HeadConfig& h) {
    return {{"input_dim", h.input_dim}, {"width", h.width},
            {"num_layers", h.num_layers}, {"skip", h.skip},
            {"sn", h.sn_enabled},       {"sn_coefficient", h.sn_coefficient},
            {"num_classes", h.num_classes}, {"activation", activation_name(h.activation)}};
}

HeadConfig head_config_from_json(const nlohmann::json& j) {
    try {
        HeadConfig h;
        h.input_dim = j.at("input_dim").get<Index>();
        h.width = j.at("width").get<Index>();
        h.num_layers = j.at("num_layers").get<int>();
        h.skip = j.at("skip").get<bool>();
        h.sn_enabled = j.at("sn").get<bool>();
        h.sn_coefficient = j.at("sn_coefficient").get<double>();
        h.num_classes = j.at("num_classes").get<Index>();
        h.activation = parse_activation(j.at("activation").get<std::string>());
        return h;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("head config metadata: ") + e.what());
    }
}

nlohmann::json to_json(const RunConfig& c) {
    nlohmann::json j;
    j["world"] = to_json(c.world);
    j["head"] = to_json(c.head);
    j["text"] = to_text(c);
    return j;
}

std::string config_hash(const RunConfig& c) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : to_text(c)) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace ocuq
