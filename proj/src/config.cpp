#include "osteo/config.hpp"

#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

namespace osteo {

namespace pt = boost::property_tree;

namespace {

const std::map<std::string, std::set<std::string>> kKnownKeys{
    {"data", {"manifest", "threads"}},
    {"model",
     {"preset", "input_size", "input_channels", "base_width", "head_width", "blocks", "cbam", "cbam_reduction",
      "cbam_form"}},
    {"train", {"learning_rate", "momentum", "epochs", "batch_size", "seed", "checkpoint_every"}},
    {"augment", {"enabled", "flip_probability", "rotation_degrees", "brightness", "contrast"}},
    {"loss", {"type", "penalty"}},
};

bool parse_bool(const std::string& key, std::string v) {
    for (auto& c : v) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (v == "on" || v == "true" || v == "yes" || v == "1") return true;
    if (v == "off" || v == "false" || v == "no" || v == "0") return false;
    throw ConfigError(key + ": expected on/off, got '" + v + "'");
}

template <typename T>
T get(const pt::ptree& tree, const std::string& key, T fallback) {
    auto node = tree.get_child_optional(pt::ptree::path_type(key, '.'));
    if (!node) return fallback;
    const auto text = node->get_value<std::string>();
    if constexpr (std::is_same_v<T, bool>) {
        return parse_bool(key, text);
    } else if constexpr (std::is_same_v<T, std::string>) {
        return text;
    } else {
        std::istringstream is(text);
        T v{};
        is >> v;
        if (!is || !(is >> std::ws).eof()) throw ConfigError(key + ": cannot parse '" + text + "'");
        return v;
    }
}

}  // namespace

RunConfig parse_run_config(std::istream& is, const std::filesystem::path& base_dir, const std::string& source) {
    pt::ptree tree;
    try {
        pt::read_ini(is, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError(source + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
    }
    for (const auto& [section, body] : tree) {
        auto known = kKnownKeys.find(section);
        if (known == kKnownKeys.end()) throw ConfigError(source + ": unknown section [" + section + "]");
        if (!body.data().empty()) throw ConfigError(source + ": key '" + section + "' outside any section");
        for (const auto& [key, value] : body) {
            if (!known->second.count(key)) throw ConfigError(source + ": unknown key '" + key + "' in [" + section + "]");
        }
    }

    RunConfig rc;
    const auto manifest = get<std::string>(tree, "data.manifest", "");
    if (manifest.empty()) throw ConfigError(source + ": [data] manifest is required");
    rc.manifest = std::filesystem::path(manifest).is_absolute() ? std::filesystem::path(manifest) : base_dir / manifest;
    rc.train.loader_threads = get<int>(tree, "data.threads", 0);

    const auto preset = get<std::string>(tree, "model.preset", "full");
    if (preset == "toy") rc.network = NetworkConfig::toy();
    else if (preset != "full") throw ConfigError(source + ": unknown model preset '" + preset + "'");
    auto& net = rc.network;
    net.input_size = get<int>(tree, "model.input_size", net.input_size);
    net.input_channels = get<int>(tree, "model.input_channels", net.input_channels);
    net.base_width = get<int>(tree, "model.base_width", net.base_width);
    net.head_width = get<int>(tree, "model.head_width", net.head_width);
    net.use_cbam = get<bool>(tree, "model.cbam", net.use_cbam);
    net.cbam_reduction = get<int>(tree, "model.cbam_reduction", net.cbam_reduction);
    const auto form = get<std::string>(tree, "model.cbam_form", "standard");
    if (form == "standard") net.channel_map_form = ChannelMapForm::standard;
    else if (form == "literal") net.channel_map_form = ChannelMapForm::literal;
    else throw ConfigError(source + ": cbam_form must be standard or literal");
    if (auto blocks = tree.get_optional<std::string>("model.blocks")) {
        std::istringstream bs(*blocks);
        std::string item;
        int i = 0;
        while (std::getline(bs, item, ',')) {
            if (i >= kNumStages) throw ConfigError(source + ": blocks needs exactly 4 entries");
            try {
                net.blocks_per_stage[static_cast<std::size_t>(i++)] = std::stoi(item);
            } catch (const std::exception&) {
                throw ConfigError(source + ": bad blocks entry '" + item + "'");
            }
        }
        if (i != kNumStages) throw ConfigError(source + ": blocks needs exactly 4 entries");
    }
    net.validate();

    auto& tc = rc.train;
    tc.learning_rate = get<double>(tree, "train.learning_rate", tc.learning_rate);
    tc.momentum = get<double>(tree, "train.momentum", tc.momentum);
    tc.epochs = get<int>(tree, "train.epochs", tc.epochs);
    tc.batch_size = get<int>(tree, "train.batch_size", tc.batch_size);
    tc.checkpoint_every = get<int>(tree, "train.checkpoint_every", tc.checkpoint_every);
    if (tree.get_child_optional("train.seed")) {
        tc.seed = get<std::uint64_t>(tree, "train.seed", 0);
        rc.seed_given = true;
    }

    auto& aug = tc.augmentation;
    aug.enabled = get<bool>(tree, "augment.enabled", aug.enabled);
    aug.flip_probability = get<double>(tree, "augment.flip_probability", aug.flip_probability);
    aug.rotation_degrees = get<double>(tree, "augment.rotation_degrees", aug.rotation_degrees);
    aug.brightness = get<double>(tree, "augment.brightness", aug.brightness);
    aug.contrast = get<double>(tree, "augment.contrast", aug.contrast);

    const auto loss = get<std::string>(tree, "loss.type", "ordinal");
    if (loss == "ordinal") tc.loss = LossKind::ordinal;
    else if (loss == "cross_entropy") tc.loss = LossKind::cross_entropy;
    else throw ConfigError(source + ": loss type must be ordinal or cross_entropy");
    if (auto grid = tree.get_optional<std::string>("loss.penalty")) tc.penalty = PenaltyMatrix::parse(*grid);

    tc.validate();
    return rc;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    return parse_run_config(in, path.parent_path(), path.string());
}

}  // namespace osteo
