#include <cstdlib>
#include <fstream>
#include <sstream>

#include "otat/error.hpp"
#include "otat/harness.hpp"

namespace otat {

namespace {

double parse_f64(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const double v = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "': expected a number, got '" + value + "'");
    }
}

std::size_t parse_u64(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const long long v = std::stoll(value, &used);
        if (used != value.size() || v < 0) throw std::invalid_argument("bad");
        return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "': expected a nonnegative integer, got '" + value +
                          "'");
    }
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw ConfigError("key '" + key + "': expected true|false, got '" + value + "'");
}

std::vector<std::uint64_t> parse_seeds(const std::string& key, const std::string& value) {
    std::vector<std::uint64_t> seeds;
    std::stringstream ss(value);
    std::string part;
    while (std::getline(ss, part, ','))
        if (!part.empty()) seeds.push_back(parse_u64(key, part));
    if (seeds.empty()) throw ConfigError("key '" + key + "': empty seed list");
    return seeds;
}

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r\n");
    return s.substr(begin, end - begin + 1);
}

}  // namespace

Arm arm_from_string(const std::string& s) {
    if (s == "baseline") return Arm::Baseline;
    if (s == "oto") return Arm::Oto;
    if (s == "ota_oto") return Arm::OtaOto;
    if (s == "ota_oto_eaw") return Arm::OtaOtoEaw;
    throw ConfigError("unknown arm '" + s + "' (expected baseline|oto|ota_oto|ota_oto_eaw)");
}

std::string to_string(Arm arm) {
    switch (arm) {
        case Arm::Baseline: return "baseline";
        case Arm::Oto: return "oto";
        case Arm::OtaOto: return "ota_oto";
        case Arm::OtaOtoEaw: return "ota_oto_eaw";
    }
    return "?";
}

void RunConfig::finalize() {
    episode.embed_dim = model.dim;
    episode.validate();
    if (model.dim == 0 || model.depth_vision == 0 || model.depth_text == 0)
        throw ConfigError("model dimensions and depths must be positive");
    if (model.adapter_rank == 0 || model.adapter_rank >= model.dim)
        throw ConfigError("model.adapter_rank must satisfy 0 < r < dim");
    if (model.ffn_hidden == 0) throw ConfigError("model.ffn_hidden must be positive");
    if (model.cmam_start_layer > model.depth_text)
        throw ConfigError("model.cmam_start_layer beyond the text stack");
    if (batch == 0) throw ConfigError("train.batch must be positive");
    if (eval_every == 0) throw ConfigError("train.eval_every must be positive");
    if (episode.queries == 0) throw ConfigError("episode.queries must be positive for runs");
    if (seeds.empty()) throw ConfigError("run.seeds must not be empty");
    if (weights.tau <= 0.0) throw ConfigError("weights.tau must be positive");
    if (run_id.empty()) run_id = to_string(arm);
}

void apply_override(RunConfig& cfg, const std::string& key, const std::string& value) {
    if (key == "episode.classes") cfg.episode.n_classes = parse_u64(key, value);
    else if (key == "episode.shots") cfg.episode.shots = parse_u64(key, value);
    else if (key == "episode.queries") cfg.episode.queries = parse_u64(key, value);
    else if (key == "episode.latent_dim") cfg.episode.latent_dim = parse_u64(key, value);
    else if (key == "episode.visual_tokens") cfg.episode.visual_tokens = parse_u64(key, value);
    else if (key == "episode.text_tokens") cfg.episode.text_tokens = parse_u64(key, value);
    else if (key == "episode.visual_noise") cfg.episode.visual_noise = parse_f64(key, value);
    else if (key == "episode.text_noise") cfg.episode.text_noise = parse_f64(key, value);
    else if (key == "episode.gap_rank") cfg.episode.gap_rank = parse_u64(key, value);
    else if (key == "model.dim") cfg.model.dim = parse_u64(key, value);
    else if (key == "model.depth_vision") cfg.model.depth_vision = parse_u64(key, value);
    else if (key == "model.depth_text") cfg.model.depth_text = parse_u64(key, value);
    else if (key == "model.adapter_rank") cfg.model.adapter_rank = parse_u64(key, value);
    else if (key == "model.ffn_hidden") cfg.model.ffn_hidden = parse_u64(key, value);
    else if (key == "model.cmam_start_layer") cfg.model.cmam_start_layer = parse_u64(key, value);
    else if (key == "model.alpha") cfg.model.alpha = parse_f64(key, value);
    else if (key == "model.gamma_init") cfg.model.gamma_init = parse_f64(key, value);
    else if (key == "model.beta_init") cfg.model.beta_init = parse_f64(key, value);
    else if (key == "sinkhorn.lambda") cfg.sinkhorn.lambda = parse_f64(key, value);
    else if (key == "sinkhorn.max_iters") cfg.sinkhorn.max_iters = parse_u64(key, value);
    else if (key == "sinkhorn.tol") cfg.sinkhorn.tol = parse_f64(key, value);
    else if (key == "sinkhorn.stabilized") cfg.sinkhorn.stabilized = parse_bool(key, value);
    else if (key == "weights.xi") cfg.weights.xi = parse_f64(key, value);
    else if (key == "weights.nu") cfg.weights.nu = parse_f64(key, value);
    else if (key == "weights.zeta") cfg.weights.zeta = parse_f64(key, value);
    else if (key == "weights.tau") cfg.weights.tau = parse_f64(key, value);
    else if (key == "weights.eps2") cfg.weights.eps2 = parse_f64(key, value);
    else if (key == "optim.lr") cfg.optim.lr = parse_f64(key, value);
    else if (key == "optim.weight_decay") cfg.optim.weight_decay = parse_f64(key, value);
    else if (key == "optim.beta1") cfg.optim.beta1 = parse_f64(key, value);
    else if (key == "optim.beta2") cfg.optim.beta2 = parse_f64(key, value);
    else if (key == "train.steps") cfg.steps = parse_u64(key, value);
    else if (key == "train.batch") cfg.batch = parse_u64(key, value);
    else if (key == "train.eval_every") cfg.eval_every = parse_u64(key, value);
    else if (key == "cost.kind") cfg.cost = cost_kind_from_string(value);
    else if (key == "run.arm") cfg.arm = arm_from_string(value);
    else if (key == "run.seeds") cfg.seeds = parse_seeds(key, value);
    else if (key == "run.id") cfg.run_id = value;
    else if (key == "run.out_dir") cfg.out_dir = value;
    else throw ConfigError("unknown config key '" + key + "'");
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config: " + path);
    RunConfig cfg;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value");
        apply_override(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return cfg;
}

std::string resolve_out_dir(const RunConfig& cfg) {
    if (!cfg.out_dir.empty()) return cfg.out_dir;
    if (const char* env = std::getenv("OTAT_OUT_DIR"); env && *env) return env;
    return ".";
}

}  // namespace otat
