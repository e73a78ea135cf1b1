#include "osteo/backbone.hpp"

#include <cmath>
#include <random>
#include <sstream>

namespace osteo {

namespace {

std::string join(const auto& values) {
    std::ostringstream os;
    bool first = true;
    for (auto v : values) {
        if (!first) os << ',';
        os << v;
        first = false;
    }
    return os.str();
}

std::vector<int> parse_ints(const std::string& s, const std::string& key) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stoi(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw ConfigError("network config: bad integer list for " + key + ": '" + s + "'");
        }
    }
    return out;
}

std::string conv_name(const std::string& unit) { return unit + ".conv.weight"; }

}  // namespace

int NetworkConfig::branch_width(int branch) const {
    if (branch < 1 || branch > kNumStages) throw ConfigError("branch index " + std::to_string(branch) + " out of range");
    if (!widths.empty()) return widths.at(static_cast<std::size_t>(branch - 1));
    return base_width << (branch - 1);
}

int NetworkConfig::branch_size(int branch) const { return (input_size / 4) >> (branch - 1); }

void NetworkConfig::validate() const {
    if (input_channels < 1) throw ConfigError("input_channels must be positive");
    if (input_size < 32 || input_size % 32 != 0) {
        throw ConfigError("input_size must be a positive multiple of 32, got " + std::to_string(input_size));
    }
    if (!widths.empty() && widths.size() != kNumStages) {
        throw ConfigError("widths must list exactly " + std::to_string(kNumStages) + " branch widths");
    }
    if (widths.empty() && base_width < 1) throw ConfigError("base_width must be positive");
    for (int w : widths) {
        if (w < 1) throw ConfigError("branch widths must be positive");
    }
    for (int b : blocks_per_stage) {
        if (b < 1) throw ConfigError("every stage needs at least one residual block");
    }
    if (head_width < 1) throw ConfigError("head_width must be positive");
    if (num_classes != kNumGrades) throw ConfigError("num_classes must be 5 for KL grading");
    if (use_cbam) {
        if (cbam_reduction < 1 || head_width % cbam_reduction != 0 || head_width / cbam_reduction < 1) {
            throw ConfigError("head_width " + std::to_string(head_width) + " is not divisible by CBAM ratio " +
                              std::to_string(cbam_reduction));
        }
    }
}

std::string NetworkConfig::canonical() const {
    std::vector<int> w;
    for (int j = 1; j <= kNumStages; ++j) w.push_back(branch_width(j));
    std::ostringstream os;
    os << "input_channels=" << input_channels << '\n'
       << "input_size=" << input_size << '\n'
       << "base_width=" << base_width << '\n'
       << "widths=" << join(w) << '\n'
       << "blocks_per_stage=" << join(blocks_per_stage) << '\n'
       << "head_width=" << head_width << '\n'
       << "num_classes=" << num_classes << '\n'
       << "use_cbam=" << (use_cbam ? 1 : 0) << '\n'
       << "cbam_reduction=" << cbam_reduction << '\n'
       << "channel_map_form=" << (channel_map_form == ChannelMapForm::standard ? "standard" : "literal") << '\n';
    return os.str();
}

NetworkConfig NetworkConfig::from_canonical(const std::string& text) {
    NetworkConfig c;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("network config: malformed line '" + line + "'");
        const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
        auto one = [&] {
            auto v = parse_ints(value, key);
            if (v.size() != 1) throw ConfigError("network config: " + key + " expects one integer");
            return v[0];
        };
        if (key == "input_channels") c.input_channels = one();
        else if (key == "input_size") c.input_size = one();
        else if (key == "base_width") c.base_width = one();
        else if (key == "widths") c.widths = parse_ints(value, key);
        else if (key == "blocks_per_stage") {
            auto v = parse_ints(value, key);
            if (v.size() != kNumStages) throw ConfigError("network config: blocks_per_stage needs 4 entries");
            std::copy(v.begin(), v.end(), c.blocks_per_stage.begin());
        } else if (key == "head_width") c.head_width = one();
        else if (key == "num_classes") c.num_classes = one();
        else if (key == "use_cbam") c.use_cbam = one() != 0;
        else if (key == "cbam_reduction") c.cbam_reduction = one();
        else if (key == "channel_map_form") {
            if (value == "standard") c.channel_map_form = ChannelMapForm::standard;
            else if (value == "literal") c.channel_map_form = ChannelMapForm::literal;
            else throw ConfigError("network config: unknown channel_map_form '" + value + "'");
        } else {
            throw ConfigError("network config: unknown key '" + key + "'");
        }
    }
    c.validate();
    return c;
}

NetworkConfig NetworkConfig::toy() {
    NetworkConfig c;
    c.input_size = 64;
    c.base_width = 8;
    c.head_width = 64;
    return c;
}

std::uint64_t config_hash(const NetworkConfig& config) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : config.canonical()) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    return h;
}

std::vector<ParamSpec> describe_parameters(const NetworkConfig& config) {
    config.validate();
    std::vector<ParamSpec> specs;
    auto conv_bn = [&](const std::string& unit, std::size_t cin, std::size_t cout, std::size_t k) {
        specs.push_back({conv_name(unit), {cout, cin, k, k}, ParamKind::conv, cin * k * k, true});
        specs.push_back({unit + ".bn.scale", {cout}, ParamKind::bn_scale, 0, true});
        specs.push_back({unit + ".bn.shift", {cout}, ParamKind::bn_shift, 0, true});
        specs.push_back({unit + ".bn.running_mean", {cout}, ParamKind::bn_mean, 0, false});
        specs.push_back({unit + ".bn.running_var", {cout}, ParamKind::bn_var, 0, false});
    };
    auto W = [&](int j) { return static_cast<std::size_t>(config.branch_width(j)); };

    conv_bn("stem.1", static_cast<std::size_t>(config.input_channels), W(1), 3);
    conv_bn("stem.2", W(1), W(1), 3);
    for (int i = 1; i <= kNumStages; ++i) {
        if (i > 1) conv_bn("transition" + std::to_string(i), W(i - 1), W(i), 3);
        for (int j = 1; j <= i; ++j) {
            for (int b = 1; b <= config.blocks_per_stage[static_cast<std::size_t>(i - 1)]; ++b) {
                const std::string unit = "stage" + std::to_string(i) + ".branch" + std::to_string(j) + ".block" +
                                         std::to_string(b);
                conv_bn(unit + ".a", W(j), W(j), 3);
                conv_bn(unit + ".b", W(j), W(j), 3);
            }
        }
        if (i == 1) continue;
        for (int j = 1; j <= i; ++j) {
            for (int k = 1; k <= i; ++k) {
                const std::string unit =
                    "stage" + std::to_string(i) + ".fuse." + std::to_string(k) + "to" + std::to_string(j);
                if (k > j) {
                    conv_bn(unit, W(k), W(j), 1);
                } else if (k < j) {
                    for (int step = 1; step <= j - k; ++step) {
                        conv_bn(unit + ".step" + std::to_string(step), W(k), step == j - k ? W(j) : W(k), 3);
                    }
                }
            }
        }
    }
    for (int j = 1; j < kNumStages; ++j) conv_bn("head.down" + std::to_string(j), W(j), W(j + 1), 3);
    const auto head = static_cast<std::size_t>(config.head_width);
    conv_bn("head.expand", W(kNumStages), head, 1);
    if (config.use_cbam) {
        const auto hidden = head / static_cast<std::size_t>(config.cbam_reduction);
        specs.push_back({"cbam.channel.fc1", {hidden, head}, ParamKind::dense_weight, head, true});
        specs.push_back({"cbam.channel.fc2", {head, hidden}, ParamKind::dense_weight, hidden, true});
        specs.push_back({"cbam.spatial.kernel",
                         {1, 2, kSpatialAttentionKernel, kSpatialAttentionKernel},
                         ParamKind::conv,
                         2 * kSpatialAttentionKernel * kSpatialAttentionKernel,
                         true});
    }
    const auto classes = static_cast<std::size_t>(config.num_classes);
    specs.push_back({"classifier.weight", {classes, head}, ParamKind::dense_weight, head, true});
    specs.push_back({"classifier.bias", {classes}, ParamKind::dense_bias, 0, true});
    return specs;
}

template <typename T>
Tensor<T>& ModelParams<T>::parameter(const std::string& name) {
    auto it = parameters.find(name);
    if (it == parameters.end()) throw LookupError("no parameter named '" + name + "'");
    return it->second;
}

template <typename T>
const Tensor<T>& ModelParams<T>::parameter(const std::string& name) const {
    auto it = parameters.find(name);
    if (it == parameters.end()) throw LookupError("no parameter named '" + name + "'");
    return it->second;
}

template <typename T>
Tensor<T>& ModelParams<T>::buffer(const std::string& name) {
    auto it = buffers.find(name);
    if (it == buffers.end()) throw LookupError("no buffer named '" + name + "'");
    return it->second;
}

template <typename T>
std::size_t ModelParams<T>::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : parameters) n += t.numel();
    return n;
}

template <typename T>
void ModelParams<T>::zero_grad() {
    for (auto& [name, t] : parameters) t.zero_grad();
}

template <typename T>
ModelParams<T> ModelParams<T>::clone() const {
    ModelParams copy;
    copy.config = config;
    for (const auto& [name, t] : parameters) copy.parameters.emplace(name, t.clone());
    for (const auto& [name, t] : buffers) copy.buffers.emplace(name, t.clone());
    return copy;
}

template <typename T>
ModelParams<T> build_network(const NetworkConfig& config, std::uint64_t seed) {
    ModelParams<T> params;
    params.config = config;
    std::mt19937_64 rng(seed);
    auto uniform = [&rng] { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };
    for (const auto& spec : describe_parameters(config)) {
        Tensor<T> t(spec.shape);
        switch (spec.kind) {
        case ParamKind::conv:
        case ParamKind::dense_weight: {
            const double bound = std::sqrt(6.0 / static_cast<double>(spec.fan_in));
            for (auto& v : t.data()) v = static_cast<T>((2.0 * uniform() - 1.0) * bound);
            break;
        }
        case ParamKind::bn_scale:
        case ParamKind::bn_var:
            std::fill(t.data().begin(), t.data().end(), T(1));
            break;
        default:
            break;
        }
        if (spec.name == "classifier.weight") {
            // Softmax losses never move the class-mean row; start it at zero.
            const std::size_t rows = spec.shape[0], cols = spec.shape[1];
            auto w = t.data();
            for (std::size_t c = 0; c < cols; ++c) {
                double mean = 0.0;
                for (std::size_t r = 0; r < rows; ++r) mean += w[r * cols + c];
                mean /= static_cast<double>(rows);
                for (std::size_t r = 0; r < rows; ++r) w[r * cols + c] -= static_cast<T>(mean);
            }
        }
        if (spec.trainable) {
            t.set_requires_grad(true);
            params.parameters.emplace(spec.name, std::move(t));
        } else {
            params.buffers.emplace(spec.name, std::move(t));
        }
    }
    return params;
}

namespace {

template <typename T>
struct Runner {
    ModelParams<T>& p;
    const ForwardOptions& opt;

    Tensor<T> conv_bn(const Tensor<T>& x, const std::string& unit, int stride, bool activate) {
        auto& kernel = p.parameter(conv_name(unit));
        const int pad = static_cast<int>(kernel.dim(2) / 2);
        auto y = conv2d(x, kernel, stride, pad);
        BatchNorm<T> bn{p.parameter(unit + ".bn.scale"), p.parameter(unit + ".bn.shift"),
                        p.buffer(unit + ".bn.running_mean"), p.buffer(unit + ".bn.running_var")};
        y = batchnorm2d(y, bn, opt.training, opt.update_running_stats);
        return activate ? relu(y) : y;
    }
};

std::size_t channel_axis(const Shape& s) { return s.size() == 4 ? 1 : 0; }

template <typename T>
void check_branches(const NetworkConfig& config, const std::vector<Tensor<T>>& features, std::size_t expected,
                    const char* op) {
    if (features.size() != expected) {
        throw DimensionError(std::string(op) + ": expected " + std::to_string(expected) + " branches, got " +
                             std::to_string(features.size()));
    }
    for (std::size_t j = 0; j < features.size(); ++j) {
        const auto& s = features[j].shape();
        if (s.size() != 3 && s.size() != 4) throw DimensionError(std::string(op) + ": branch is not a feature map");
        const auto c = channel_axis(s);
        const int branch = static_cast<int>(j) + 1;
        const auto width = static_cast<std::size_t>(config.branch_width(branch));
        const std::size_t expect_h = features[0].shape()[c + 1] >> j;
        if (s[c] != width || s[c + 1] != expect_h || s[c + 2] != (features[0].shape()[c + 2] >> j)) {
            throw DimensionError(std::string(op) + ": branch " + std::to_string(branch) + " has shape " +
                                 shape_string(s) + ", expected width " + std::to_string(width) + " at 1/" +
                                 std::to_string(1 << j) + " scale");
        }
    }
}

}  // namespace

template <typename T>
std::vector<Tensor<T>> stage_forward(ModelParams<T>& params, int stage, const std::vector<Tensor<T>>& features,
                                     const ForwardOptions& options) {
    if (stage < 1 || stage > kNumStages) throw ConfigError("stage index out of range");
    check_branches(params.config, features, static_cast<std::size_t>(stage), "stage_forward");
    Runner<T> run{params, options};
    std::vector<Tensor<T>> out;
    for (int j = 1; j <= stage; ++j) {
        auto x = features[static_cast<std::size_t>(j - 1)];
        for (int b = 1; b <= params.config.blocks_per_stage[static_cast<std::size_t>(stage - 1)]; ++b) {
            const std::string unit =
                "stage" + std::to_string(stage) + ".branch" + std::to_string(j) + ".block" + std::to_string(b);
            auto y = run.conv_bn(x, unit + ".a", 1, true);
            y = run.conv_bn(y, unit + ".b", 1, false);
            x = relu(add(y, x));
        }
        out.push_back(x);
    }
    return out;
}

template <typename T>
std::vector<Tensor<T>> fuse(ModelParams<T>& params, int stage, const std::vector<Tensor<T>>& features,
                            const ForwardOptions& options) {
    if (stage < 2 || stage > kNumStages) throw ConfigError("fusion needs at least two branches");
    check_branches(params.config, features, static_cast<std::size_t>(stage), "fuse");
    Runner<T> run{params, options};
    std::vector<Tensor<T>> out;
    for (int j = 1; j <= stage; ++j) {
        Tensor<T> acc = features[static_cast<std::size_t>(j - 1)];
        for (int k = 1; k <= stage; ++k) {
            if (k == j) continue;
            const std::string unit = "stage" + std::to_string(stage) + ".fuse." + std::to_string(k) + "to" +
                                     std::to_string(j);
            Tensor<T> x = features[static_cast<std::size_t>(k - 1)];
            if (k > j) {
                x = bilinear_upsample(x, 1 << (k - j));
                x = run.conv_bn(x, unit, 1, false);
            } else {
                for (int step = 1; step <= j - k; ++step) {
                    x = run.conv_bn(x, unit + ".step" + std::to_string(step), 2, step < j - k);
                }
            }
            if (x.shape() != acc.shape()) {
                throw DimensionError("fuse: transform " + unit + " produced " + shape_string(x.shape()) +
                                     ", expected " + shape_string(acc.shape()));
            }
            acc = add(acc, x);
        }
        out.push_back(relu(acc));
    }
    return out;
}

template <typename T>
Tensor<T> new_branch(ModelParams<T>& params, int branch, const std::vector<Tensor<T>>& features,
                     const ForwardOptions& options) {
    if (branch < 2 || branch > kNumStages) throw ConfigError("new_branch: branch index must be 2..4");
    check_branches(params.config, features, static_cast<std::size_t>(branch - 1), "new_branch");
    Runner<T> run{params, options};
    return run.conv_bn(features.back(), "transition" + std::to_string(branch), 2, true);
}

template <typename T>
HeadOutput<T> head_forward(ModelParams<T>& params, const std::vector<Tensor<T>>& features,
                           const ForwardOptions& options) {
    check_branches(params.config, features, kNumStages, "head_forward");
    Runner<T> run{params, options};
    Tensor<T> y = features[0];
    for (int j = 1; j < kNumStages; ++j) {
        y = add(run.conv_bn(y, "head.down" + std::to_string(j), 2, true), features[static_cast<std::size_t>(j)]);
    }
    HeadOutput<T> out;
    out.merged = run.conv_bn(y, "head.expand", 1, true);
    out.attended = out.merged;
    if (params.config.use_cbam) {
        ChannelAttentionParams<T> ch{params.parameter("cbam.channel.fc1"), params.parameter("cbam.channel.fc2")};
        SpatialAttentionParams<T> sp{params.parameter("cbam.spatial.kernel")};
        auto cb = cbam_forward(out.merged, ch, sp, CbamOptions{params.config.channel_map_form, options.identity_attention});
        out.attended = cb.refined;
        out.channel_map = cb.channel_map;
        out.spatial_map = cb.spatial_map;
    }
    const bool batched = out.attended.rank() == 4;
    const auto head = static_cast<std::size_t>(params.config.head_width);
    auto pooled = pool_spatial(out.attended, PoolMode::avg, true);
    pooled = batched ? reshape(pooled, Shape{out.attended.dim(0), head}) : reshape(pooled, Shape{head});
    out.logits = dense(pooled, params.parameter("classifier.weight"), params.parameter("classifier.bias"));
    return out;
}

template <typename T>
ForwardResult<T> forward(ModelParams<T>& params, const Tensor<T>& images, const ForwardOptions& options) {
    const auto& cfg = params.config;
    const auto& s = images.shape();
    if (s.size() != 3 && s.size() != 4) throw DimensionError("forward: images must be C×S×S or N×C×S×S");
    const auto c = channel_axis(s);
    if (s[c] != static_cast<std::size_t>(cfg.input_channels) || s[c + 1] != static_cast<std::size_t>(cfg.input_size) ||
        s[c + 2] != static_cast<std::size_t>(cfg.input_size)) {
        throw DimensionError("forward: images " + shape_string(s) + " do not match configured " +
                             std::to_string(cfg.input_channels) + "×" + std::to_string(cfg.input_size) + "×" +
                             std::to_string(cfg.input_size));
    }
    Runner<T> run{params, options};
    ForwardResult<T> result;
    auto x = run.conv_bn(images, "stem.1", 2, true);
    x = run.conv_bn(x, "stem.2", 2, true);
    result.features.emplace("stem", x);

    std::vector<Tensor<T>> branches{x};
    for (int i = 1; i <= kNumStages; ++i) {
        if (i > 1) branches.push_back(new_branch(params, i, branches, options));
        branches = stage_forward(params, i, branches, options);
        if (i > 1) branches = fuse(params, i, branches, options);
        for (int j = 1; j <= i; ++j) {
            result.features["stage" + std::to_string(i) + ".branch" + std::to_string(j)] =
                branches[static_cast<std::size_t>(j - 1)];
        }
    }
    auto head = head_forward(params, branches, options);
    result.features.emplace("merged", head.merged);
    result.features.emplace("attended", head.attended);
    result.logits = head.logits;
    return result;
}

#define OSTEO_INSTANTIATE_BACKBONE(T)                                                                             \
    template struct ModelParams<T>;                                                                               \
    template ModelParams<T> build_network<T>(const NetworkConfig&, std::uint64_t);                                \
    template std::vector<Tensor<T>> stage_forward<T>(ModelParams<T>&, int, const std::vector<Tensor<T>>&,         \
                                                     const ForwardOptions&);                                      \
    template std::vector<Tensor<T>> fuse<T>(ModelParams<T>&, int, const std::vector<Tensor<T>>&,                  \
                                            const ForwardOptions&);                                               \
    template Tensor<T> new_branch<T>(ModelParams<T>&, int, const std::vector<Tensor<T>>&, const ForwardOptions&); \
    template HeadOutput<T> head_forward<T>(ModelParams<T>&, const std::vector<Tensor<T>>&, const ForwardOptions&); \
    template ForwardResult<T> forward<T>(ModelParams<T>&, const Tensor<T>&, const ForwardOptions&);

OSTEO_INSTANTIATE_BACKBONE(float)
OSTEO_INSTANTIATE_BACKBONE(double)

#undef OSTEO_INSTANTIATE_BACKBONE

}  // namespace osteo
