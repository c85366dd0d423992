// SPDX-License-Identifier: Apache-2.0
#include "reenact/config.hpp"

#include "reenact/errors.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

namespace reenact {

namespace {

std::string trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) {
        return {};
    }
    const auto last = s.find_last_not_of(" \t\r");
    return std::string(s.substr(first, last - first + 1));
}

// Shortest text that parses back to the same double.
std::string format_double(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, end);
}

double to_double(const std::string& key, const std::string& text) {
    double v = 0.0;
    const auto* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc() || ptr != end || !std::isfinite(v)) {
        throw ValidationError("config key '" + key + "' expects a number, got '" + text + "'");
    }
    return v;
}

std::int64_t to_int(const std::string& key, const std::string& text) {
    std::int64_t v = 0;
    const auto* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc() || ptr != end) {
        throw ValidationError("config key '" + key + "' expects an integer, got '" + text + "'");
    }
    return v;
}

std::uint64_t to_uint(const std::string& key, const std::string& text) {
    std::uint64_t v = 0;
    const auto* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc() || ptr != end) {
        throw ValidationError("config key '" + key + "' expects a non-negative integer, got '" + text + "'");
    }
    return v;
}

bool to_bool(const std::string& key, const std::string& text) {
    if (text == "true") {
        return true;
    }
    if (text == "false") {
        return false;
    }
    throw ValidationError("config key '" + key + "' expects true or false, got '" + text + "'");
}

std::string quote(const std::string& s) { return "\"" + s + "\""; }

struct Field {
    std::string key;
    std::string doc;
    std::function<std::string(const TrainConfig&)> get;
    std::function<void(TrainConfig&, const std::string&)> set;
};

#define REENACT_INT_FIELD(name, member, doc)                                                                       \
    Field {                                                                                                        \
        name, doc, [](const TrainConfig& c) { return std::to_string(c.member); },                                  \
            [](TrainConfig& c, const std::string& v) { c.member = static_cast<decltype(c.member)>(to_int(name, v)); } \
    }
#define REENACT_DOUBLE_FIELD(name, member, doc)                                                                    \
    Field {                                                                                                        \
        name, doc, [](const TrainConfig& c) { return format_double(c.member); },                                   \
            [](TrainConfig& c, const std::string& v) { c.member = to_double(name, v); }                            \
    }

std::string lambda_getter(const TrainConfig& c, gan::Modality m) { return format_double(c.lambda(m)); }

const std::vector<Field>& fields() {
    static const std::vector<Field> table = {
        Field{"seed", "master seed for initialisation and sampling",
              [](const TrainConfig& c) { return std::to_string(c.seed); },
              [](TrainConfig& c, const std::string& v) { c.seed = to_uint("seed", v); }},
        REENACT_INT_FIELD("image_size", model.image_size, "square frame size (64, 128 or 256)"),
        REENACT_INT_FIELD("batch_size", batch_size, "pairs per step"),
        REENACT_INT_FIELD("steps", total_steps, "training steps"),
        REENACT_DOUBLE_FIELD("learning_rate", learning_rate, "Adam step size for every module"),
        REENACT_DOUBLE_FIELD("beta1", beta1, "Adam first-moment decay"),
        REENACT_DOUBLE_FIELD("beta2", beta2, "Adam second-moment decay"),
        Field{"discriminators", "comma-separated ensemble members (rgb, depth, normal)",
              [](const TrainConfig& c) {
                  std::string out;
                  for (const auto& m : c.discriminators) {
                      out += (out.empty() ? "" : ",") + gan::to_string(m.modality);
                  }
                  return quote(out);
              },
              [](TrainConfig& c, const std::string& v) {
                  std::vector<gan::MemberSpec> members;
                  std::stringstream ss(v);
                  std::string item;
                  while (std::getline(ss, item, ',')) {
                      auto m = gan::parse_modality(trim(item));
                      members.push_back({m, c.lambda(m)});
                  }
                  if (members.empty()) {
                      throw ValidationError("config key 'discriminators' must list at least one member");
                  }
                  c.discriminators = std::move(members);
              }},
        Field{"lambda_rgb", "ensemble weight of the RGB discriminator",
              [](const TrainConfig& c) { return lambda_getter(c, gan::Modality::rgb); },
              [](TrainConfig& c, const std::string& v) { c.set_lambda(gan::Modality::rgb, to_double("lambda_rgb", v)); }},
        Field{"lambda_depth", "ensemble weight of the depth discriminator",
              [](const TrainConfig& c) { return lambda_getter(c, gan::Modality::depth); },
              [](TrainConfig& c, const std::string& v) {
                  c.set_lambda(gan::Modality::depth, to_double("lambda_depth", v));
              }},
        Field{"lambda_normal", "ensemble weight of the normal discriminator",
              [](const TrainConfig& c) { return lambda_getter(c, gan::Modality::normal); },
              [](TrainConfig& c, const std::string& v) {
                  c.set_lambda(gan::Modality::normal, to_double("lambda_normal", v));
              }},
        REENACT_INT_FIELD("discriminator_scales", discriminator_scales, "patch discriminator pyramid levels"),
        REENACT_INT_FIELD("discriminator_channels", discriminator_channels, "base width of each patch discriminator"),
        Field{"gan_loss", "vanilla or least_squares",
              [](const TrainConfig& c) {
                  return quote(c.gan_loss == gan::LossKind::vanilla ? "vanilla" : "least_squares");
              },
              [](TrainConfig& c, const std::string& v) {
                  if (v == "vanilla") {
                      c.gan_loss = gan::LossKind::vanilla;
                  } else if (v == "least_squares") {
                      c.gan_loss = gan::LossKind::least_squares;
                  } else {
                      throw ValidationError("config key 'gan_loss' expects vanilla or least_squares, got '" + v + "'");
                  }
              }},
        REENACT_DOUBLE_FIELD("weight_perceptual", loss_weights.perceptual, "perceptual loss weight"),
        REENACT_DOUBLE_FIELD("weight_adversarial", loss_weights.adversarial, "generator adversarial loss weight"),
        REENACT_DOUBLE_FIELD("weight_equivariance", loss_weights.equivariance, "keypoint equivariance loss weight"),
        REENACT_DOUBLE_FIELD("tps_max_rotation_degrees", equivariance.max_rotation_degrees,
                             "equivariance warp rotation bound"),
        REENACT_DOUBLE_FIELD("tps_max_scale_jitter", equivariance.max_scale_jitter, "equivariance warp scale bound"),
        REENACT_INT_FIELD("tps_control_points", equivariance.control_points_per_side, "TPS control grid side"),
        REENACT_DOUBLE_FIELD("tps_control_sigma", equivariance.control_sigma, "TPS control weight std-dev"),
        Field{"geometry_backend", "baseline, oracle or external",
              [](const TrainConfig& c) { return quote(c.geometry_backend); },
              [](TrainConfig& c, const std::string& v) { c.geometry_backend = v; }},
        Field{"geometry_weights", "TorchScript depth network for the external backend",
              [](const TrainConfig& c) { return quote(c.geometry_weights.string()); },
              [](TrainConfig& c, const std::string& v) { c.geometry_weights = v; }},
        REENACT_DOUBLE_FIELD("pixel_spacing", pixel_spacing, "pixel pitch used for depth derivatives"),
        REENACT_INT_FIELD("keypoints", model.keypoints, "number of unsupervised keypoints"),
        REENACT_INT_FIELD("feature_channels", model.feature_channels, "appearance feature width"),
        REENACT_INT_FIELD("depth_samples", model.depth_samples, "samples per orthogonal ray"),
        REENACT_INT_FIELD("color_channels", model.color_channels, "rendered feature width"),
        REENACT_INT_FIELD("ray_hidden", model.ray_hidden, "ray MLP hidden width"),
        REENACT_INT_FIELD("block_expansion", model.block_expansion, "hourglass / decoder base width"),
        REENACT_INT_FIELD("hourglass_blocks", model.hourglass_blocks, "hourglass depth"),
        REENACT_INT_FIELD("max_features", model.max_features, "hourglass width cap"),
        REENACT_DOUBLE_FIELD("keypoint_temperature", model.keypoint_temperature, "soft-argmax temperature"),
        REENACT_DOUBLE_FIELD("heatmap_variance", model.heatmap_variance, "dense-motion heatmap variance"),
        REENACT_DOUBLE_FIELD("jacobian_eps", model.jacobian_eps, "Jacobian inversion regulariser"),
        Field{"freeze_jacobians", "force keypoint Jacobians to identity",
              [](const TrainConfig& c) { return std::string(c.model.freeze_jacobians ? "true" : "false"); },
              [](TrainConfig& c, const std::string& v) { c.model.freeze_jacobians = to_bool("freeze_jacobians", v); }},
        REENACT_INT_FIELD("threads", threads, "intra-op threads (1 keeps runs bit-reproducible)"),
    };
    return table;
}

#undef REENACT_INT_FIELD
#undef REENACT_DOUBLE_FIELD

} // namespace

double TrainConfig::lambda(gan::Modality m) const {
    for (const auto& d : discriminators) {
        if (d.modality == m) {
            return d.weight;
        }
    }
    return 0.0;
}

void TrainConfig::set_lambda(gan::Modality m, double weight) {
    for (auto& d : discriminators) {
        if (d.modality == m) {
            d.weight = weight;
            return;
        }
    }
    if (weight != 0.0) {
        discriminators.push_back({m, weight});
    }
}

void TrainConfig::validate() const {
    model.validate();
    if (!(learning_rate > 0.0)) {
        throw ValidationError("learning_rate must be positive");
    }
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        throw ValidationError("Adam betas must lie in [0, 1)");
    }
    if (batch_size < 1) {
        throw ValidationError("batch_size must be at least 1");
    }
    if (total_steps < 0) {
        throw ValidationError("steps must be non-negative");
    }
    if (discriminator_scales < 1 || discriminator_channels < 1) {
        throw ValidationError("discriminator scales and channels must be positive");
    }
    if (loss_weights.perceptual < 0.0 || loss_weights.adversarial < 0.0 || loss_weights.equivariance < 0.0) {
        throw ValidationError("loss weights must be non-negative");
    }
    if (!(pixel_spacing > 0.0)) {
        throw ValidationError("pixel_spacing must be positive");
    }
    if (threads < 1) {
        throw ValidationError("threads must be at least 1");
    }
    if (geometry_backend != "baseline" && geometry_backend != "oracle" && geometry_backend != "external") {
        throw ValidationError("unknown geometry backend '" + geometry_backend + "'");
    }
    gan::validate_simplex(discriminators);
}

ConfigValues parse_config_text(const std::string& text) {
    ConfigValues values;
    std::istringstream in(text);
    std::string line;
    int number = 0;
    while (std::getline(in, line)) {
        ++number;
        // Strip comments outside quotes.
        bool quoted = false;
        std::size_t cut = line.size();
        for (std::size_t i = 0; i < line.size(); ++i) {
            if (line[i] == '"') {
                quoted = !quoted;
            } else if (line[i] == '#' && !quoted) {
                cut = i;
                break;
            }
        }
        auto body = trim(std::string_view(line).substr(0, cut));
        if (body.empty()) {
            continue;
        }
        const auto eq = body.find('=');
        if (eq == std::string::npos) {
            throw ValidationError("config line " + std::to_string(number) + ": expected 'key = value'");
        }
        auto key = trim(std::string_view(body).substr(0, eq));
        auto value = trim(std::string_view(body).substr(eq + 1));
        if (key.empty()) {
            throw ValidationError("config line " + std::to_string(number) + ": empty key");
        }
        if (!value.empty() && value.front() == '"') {
            if (value.size() < 2 || value.back() != '"') {
                throw ValidationError("config line " + std::to_string(number) + ": unterminated string");
            }
            value = value.substr(1, value.size() - 2);
        }
        if (!values.emplace(key, value).second) {
            throw ValidationError("config line " + std::to_string(number) + ": duplicate key '" + key + "'");
        }
    }
    return values;
}

ConfigValues read_config_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot read config file '" + path.string() + "'");
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

void apply_config(TrainConfig& config, const ConfigValues& values) {
    // `discriminators` first so lambda keys address the final member list.
    const auto& table = fields();
    auto apply_key = [&](const std::string& key, const std::string& value) {
        auto it = std::find_if(table.begin(), table.end(), [&](const Field& f) { return f.key == key; });
        if (it == table.end()) {
            throw ValidationError("unknown config key '" + key + "'");
        }
        it->set(config, value);
    };
    if (auto it = values.find("discriminators"); it != values.end()) {
        apply_key(it->first, it->second);
    }
    for (const auto& [key, value] : values) {
        if (key != "discriminators") {
            apply_key(key, value);
        }
    }
}

ConfigValues config_values(const TrainConfig& config) {
    ConfigValues out;
    for (const auto& f : fields()) {
        auto v = f.get(config);
        if (!v.empty() && v.front() == '"') {
            v = v.substr(1, v.size() - 2);
        }
        out.emplace(f.key, v);
    }
    return out;
}

std::string config_to_text(const TrainConfig& config) {
    std::ostringstream out;
    out << "# reenact training configuration\n";
    for (const auto& f : fields()) {
        out << "\n# " << f.doc << "\n" << f.key << " = " << f.get(config) << "\n";
    }
    return out.str();
}

void write_config_file(const TrainConfig& config, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot write config file '" + path.string() + "'");
    }
    out << config_to_text(config);
}

const std::vector<std::string>& config_keys() {
    static const std::vector<std::string> keys = [] {
        std::vector<std::string> k;
        for (const auto& f : fields()) {
            k.push_back(f.key);
        }
        return k;
    }();
    return keys;
}

} // namespace reenact
