#include "coat/config.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <variant>

#define TOML_EXCEPTIONS 1
#include <toml.hpp>

namespace coat {

namespace {

using IntList = std::vector<std::int64_t>;
using Value = std::variant<std::int64_t, double, bool, std::string, IntList>;

std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    std::string s(buf, res.ptr);
    if (s.find_first_of(".en") == std::string::npos) s += ".0";
    return s;
}

std::string quote(const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
        if (c == '"' || c == '\\') out += '\\';
        if (c == '\n') {
            out += "\\n";
            continue;
        }
        out += c;
    }
    return out + "\"";
}

[[noreturn]] void bad(const std::string& key, const std::string& what) { throw ConfigError(key + ": " + what); }

std::int64_t as_int(const std::string& key, const Value& v) {
    if (auto p = std::get_if<std::int64_t>(&v)) return *p;
    bad(key, "expected an integer");
}

double as_float(const std::string& key, const Value& v) {
    if (auto p = std::get_if<double>(&v)) return *p;
    if (auto p = std::get_if<std::int64_t>(&v)) return static_cast<double>(*p);
    bad(key, "expected a number");
}

bool as_bool(const std::string& key, const Value& v) {
    if (auto p = std::get_if<bool>(&v)) return *p;
    bad(key, "expected true or false");
}

std::string as_string(const std::string& key, const Value& v) {
    if (auto p = std::get_if<std::string>(&v)) return *p;
    bad(key, "expected a string");
}

struct KeyDef {
    std::function<std::string(const ExperimentConfig&)> get;
    std::function<void(ExperimentConfig&, const Value&)> set;
};

using Registry = std::map<std::string, KeyDef>;

template <class Ref>
KeyDef int_key(const std::string& key, Ref ref) {
    return {[ref](const ExperimentConfig& c) { return std::to_string(ref(const_cast<ExperimentConfig&>(c))); },
            [ref, key](ExperimentConfig& c, const Value& v) {
                auto& field = ref(c);
                const std::int64_t x = as_int(key, v);
                using T = std::remove_reference_t<decltype(field)>;
                if (std::is_unsigned_v<T> && x < 0) bad(key, "must be >= 0");
                if (static_cast<std::int64_t>(static_cast<T>(x)) != x) bad(key, "out of range");
                field = static_cast<T>(x);
            }};
}

template <class Ref>
KeyDef float_key(const std::string& key, Ref ref) {
    return {[ref](const ExperimentConfig& c) { return format_double(ref(const_cast<ExperimentConfig&>(c))); },
            [ref, key](ExperimentConfig& c, const Value& v) { ref(c) = as_float(key, v); }};
}

template <class Ref>
KeyDef bool_key(const std::string& key, Ref ref) {
    return {[ref](const ExperimentConfig& c) { return std::string(ref(const_cast<ExperimentConfig&>(c)) ? "true" : "false"); },
            [ref, key](ExperimentConfig& c, const Value& v) { ref(c) = as_bool(key, v); }};
}

template <class Ref, class ToS, class Parse>
KeyDef enum_key(const std::string& key, Ref ref, ToS to_s, Parse parse) {
    return {[ref, to_s](const ExperimentConfig& c) { return quote(to_s(ref(const_cast<ExperimentConfig&>(c)))); },
            [ref, parse, key](ExperimentConfig& c, const Value& v) {
                const std::string s = as_string(key, v);
                try {
                    ref(c) = parse(s);
                } catch (const std::exception& e) {
                    bad(key, e.what());
                }
            }};
}

std::string init_kind_name(InitScheme::Kind k) { return k == InitScheme::Kind::gaussian ? "gaussian" : "kaiming_normal"; }
InitScheme::Kind parse_init_kind(const std::string& s) {
    if (s == "kaiming_normal") return InitScheme::Kind::kaiming_normal;
    if (s == "gaussian") return InitScheme::Kind::gaussian;
    throw std::invalid_argument("unknown init '" + s + "' (kaiming_normal | gaussian)");
}

std::string identity(const std::string& s) { return s; }
std::string parse_dataset_name(const std::string& s) {
    if (s != "cifar10" && s != "synthetic") throw std::invalid_argument("unknown dataset '" + s + "' (cifar10 | synthetic)");
    return s;
}

#define FIELD(expr) [](ExperimentConfig& c) -> auto& { return expr; }

const Registry& registry() {
    static const Registry r = [] {
        Registry m;
        m["name"] = enum_key("name", FIELD(c.name), identity, identity);
        m["seed"] = int_key("seed", FIELD(c.train.seed));
        m["eps"] = {[](const ExperimentConfig& c) {
                        return c.eps.is_ratio() ? quote(c.eps.text) : c.eps.text;
                    },
                    [](ExperimentConfig& c, const Value& v) {
                        try {
                            if (auto p = std::get_if<std::string>(&v)) {
                                c.eps = Quantity::parse(*p);
                            } else {
                                c.eps = Quantity::parse(format_double(as_float("eps", v)));
                            }
                        } catch (const ConfigError&) {
                            throw;
                        } catch (const std::exception& e) {
                            bad("eps", e.what());
                        }
                    }};
        m["epochs"] = int_key("epochs", FIELD(c.train.epochs));
        m["batch_size"] = int_key("batch_size", FIELD(c.train.batch_size));
        m["early_stop"] = bool_key("early_stop", FIELD(c.train.early_stop));
        m["eval_every"] = int_key("eval_every", FIELD(c.train.eval_every));
        m["eps_warmup_epochs"] = int_key("eps_warmup_epochs", FIELD(c.train.eps_warmup_epochs));
        m["box_clip"] = bool_key("box_clip", FIELD(c.train.box_clip));
        m["augment"] = enum_key("augment", FIELD(c.train.augment), [](Augment a) { return to_string(a); }, parse_augment);
        m["eval_train_points"] = int_key("eval_train_points", FIELD(c.train.eval_train_points));
        m["eval_test_points"] = int_key("eval_test_points", FIELD(c.train.eval_test_points));
        m["eval_pgd_steps"] = int_key("eval_pgd_steps", FIELD(c.train.eval_pgd_steps));
        m["eval_pgd_restarts"] = int_key("eval_pgd_restarts", FIELD(c.train.eval_pgd_restarts));
        m["align_points"] = int_key("align_points", FIELD(c.train.align_points));
        m["align_eta"] = int_key("align_eta", FIELD(c.train.align_eta));

        m["dataset.name"] = enum_key("dataset.name", FIELD(c.data.name), identity, parse_dataset_name);
        m["dataset.train_size"] = int_key("dataset.train_size", FIELD(c.data.train_size));
        m["dataset.test_size"] = int_key("dataset.test_size", FIELD(c.data.test_size));
        m["dataset.seed"] = int_key("dataset.seed", FIELD(c.data.seed));
        m["dataset.synthetic.n"] = int_key("dataset.synthetic.n", FIELD(c.data.synthetic.n));
        m["dataset.synthetic.test_n"] = int_key("dataset.synthetic.test_n", FIELD(c.data.synthetic_test_n));
        m["dataset.synthetic.num_classes"] = int_key("dataset.synthetic.num_classes", FIELD(c.data.synthetic.num_classes));
        m["dataset.synthetic.side"] = int_key("dataset.synthetic.side", FIELD(c.data.synthetic.image_side));
        m["dataset.synthetic.channels"] = int_key("dataset.synthetic.channels", FIELD(c.data.synthetic.channels));
        m["dataset.synthetic.noise"] = float_key("dataset.synthetic.noise", FIELD(c.data.synthetic.noise));
        m["dataset.synthetic.margin"] = float_key("dataset.synthetic.margin", FIELD(c.data.synthetic.margin));

        m["model.kind"] = enum_key("model.kind", FIELD(c.train.model.kind), [](ModelKind k) { return to_string(k); },
                                   parse_model_kind);
        m["model.filters"] = int_key("model.filters", FIELD(c.train.model.filters));
        m["model.kernel"] = int_key("model.kernel", FIELD(c.train.model.kernel));
        m["model.stride"] = int_key("model.stride", FIELD(c.train.model.stride));
        m["model.pad"] = int_key("model.pad", FIELD(c.train.model.pad));
        m["model.hidden"] = int_key("model.hidden", FIELD(c.train.model.hidden));
        m["model.widths"] = {[](const ExperimentConfig& c) {
                                 std::string s = "[";
                                 for (std::size_t i = 0; i < c.train.model.widths.size(); ++i) {
                                     if (i) s += ", ";
                                     s += std::to_string(c.train.model.widths[i]);
                                 }
                                 return s + "]";
                             },
                             [](ExperimentConfig& c, const Value& v) {
                                 auto p = std::get_if<IntList>(&v);
                                 if (!p) bad("model.widths", "expected an array of integers");
                                 c.train.model.widths.assign(p->begin(), p->end());
                             }};

        m["init.kind"] = enum_key("init.kind", FIELD(c.train.init.kind), init_kind_name, parse_init_kind);
        m["init.sigma_w"] = float_key("init.sigma_w", FIELD(c.train.init.sigma_w));
        m["init.sigma_u"] = float_key("init.sigma_u", FIELD(c.train.init.sigma_u));

        m["method.kind"] = enum_key("method.kind", FIELD(c.train.method.kind), [](TrainMethod k) { return to_string(k); },
                                    parse_train_method);
        m["method.lambda"] = float_key("method.lambda", FIELD(c.train.method.lambda));
        m["method.steps"] = int_key("method.steps", FIELD(c.train.method.steps));
        m["method.replay"] = int_key("method.replay", FIELD(c.train.method.replay));
        m["method.stop_grad_second_arg"] = bool_key("method.stop_grad_second_arg", FIELD(c.train.method.stop_grad_second_arg));
        m["method.alpha_over_eps"] = {[](const ExperimentConfig& c) {
                                          const auto& a = c.train.method.alpha_over_eps;
                                          return a ? format_double(*a) : quote("auto");
                                      },
                                      [](ExperimentConfig& c, const Value& v) {
                                          if (auto p = std::get_if<std::string>(&v)) {
                                              if (*p != "auto") bad("method.alpha_over_eps", "expected a number or \"auto\"");
                                              c.train.method.alpha_over_eps.reset();
                                          } else {
                                              c.train.method.alpha_over_eps = as_float("method.alpha_over_eps", v);
                                          }
                                      }};

        m["optimizer.kind"] = enum_key("optimizer.kind", FIELD(c.train.optimizer.kind),
                                       [](OptimizerSpec::Kind k) { return to_string(k); }, parse_optimizer);
        m["optimizer.lr"] = {[](const ExperimentConfig& c) { return format_double(c.train.optimizer.lr); },
                             [](ExperimentConfig& c, const Value& v) {
                                 c.train.optimizer.lr = as_float("optimizer.lr", v);
                                 c.train.schedule.max_lr = c.train.optimizer.lr;
                             }};
        m["optimizer.beta1"] = float_key("optimizer.beta1", FIELD(c.train.optimizer.beta1));
        m["optimizer.beta2"] = float_key("optimizer.beta2", FIELD(c.train.optimizer.beta2));
        m["optimizer.adam_eps"] = float_key("optimizer.adam_eps", FIELD(c.train.optimizer.adam_eps));
        m["optimizer.momentum"] = float_key("optimizer.momentum", FIELD(c.train.optimizer.momentum));
        m["optimizer.weight_decay"] = float_key("optimizer.weight_decay", FIELD(c.train.optimizer.weight_decay));
        m["schedule.kind"] = enum_key("schedule.kind", FIELD(c.train.schedule.kind),
                                      [](ScheduleSpec::Kind k) { return to_string(k); }, parse_schedule);
        m["schedule.peak_fraction"] = float_key("schedule.peak_fraction", FIELD(c.train.schedule.peak_fraction));

        m["final_eval.enabled"] = bool_key("final_eval.enabled", FIELD(c.final_eval.enabled));
        m["final_eval.points"] = int_key("final_eval.points", FIELD(c.final_eval.points));
        m["final_eval.steps"] = int_key("final_eval.steps", FIELD(c.final_eval.steps));
        m["final_eval.restarts"] = int_key("final_eval.restarts", FIELD(c.final_eval.restarts));
        return m;
    }();
    return r;
}

#undef FIELD

[[noreturn]] void unknown_key(const std::string& key) {
    std::string msg = "unknown config key '" + key + "'; valid keys:";
    for (const auto& [k, _] : registry()) msg += " " + k;
    throw ConfigError(msg);
}

Value to_value(const std::string& key, const toml::node& n) {
    if (auto v = n.as_integer()) return v->get();
    if (auto v = n.as_floating_point()) return v->get();
    if (auto v = n.as_boolean()) return v->get();
    if (auto v = n.as_string()) return v->get();
    if (auto arr = n.as_array()) {
        IntList out;
        for (const auto& e : *arr) {
            auto i = e.as_integer();
            if (!i) bad(key, "expected an array of integers");
            out.push_back(i->get());
        }
        return out;
    }
    bad(key, "unsupported value type");
}

void apply_table(ExperimentConfig& cfg, const toml::table& t, const std::string& prefix) {
    for (const auto& [k, node] : t) {
        const std::string key = prefix.empty() ? std::string(k.str()) : prefix + "." + std::string(k.str());
        if (auto sub = node.as_table()) {
            apply_table(cfg, *sub, key);
            continue;
        }
        auto it = registry().find(key);
        if (it == registry().end()) unknown_key(key);
        it->second.set(cfg, to_value(key, node));
    }
}

}  // namespace

Quantity Quantity::parse(const std::string& raw) {
    std::string s;
    for (char c : raw)
        if (c != ' ') s += c;
    auto whole = [](const std::string& t, auto& out) {
        auto res = std::from_chars(t.data(), t.data() + t.size(), out);
        return res.ec == std::errc{} && res.ptr == t.data() + t.size();
    };
    const auto slash = s.find('/');
    if (slash != std::string::npos) {
        long long num = 0, den = 0;
        if (!whole(s.substr(0, slash), num) || !whole(s.substr(slash + 1), den) || den <= 0 || num < 0) {
            throw std::invalid_argument("expected a non-negative ratio like 8/255, got '" + raw + "'");
        }
        return Quantity{std::to_string(num) + "/" + std::to_string(den)};
    }
    double v = 0;
    if (!whole(s, v) || !(v >= 0.0)) throw std::invalid_argument("expected a non-negative number or k/255, got '" + raw + "'");
    return Quantity{format_double(v)};
}

double Quantity::value() const {
    const auto slash = text.find('/');
    if (slash == std::string::npos) return std::stod(text);
    return std::stod(text.substr(0, slash)) / std::stod(text.substr(slash + 1));
}

TrainConfig ExperimentConfig::resolved() const {
    TrainConfig t = train;
    t.eps = eps.value();
    t.schedule.max_lr = t.optimizer.lr;
    if (data.name == "synthetic") {
        t.model.channels = data.synthetic.channels;
        t.model.side = data.synthetic.image_side;
        t.model.num_classes = data.synthetic.num_classes;
    } else {
        t.model.channels = 3;
        t.model.side = 32;
        t.model.num_classes = 10;
    }
    return t;
}

void ExperimentConfig::validate() const {
    auto fail = [](const std::string& m) { throw ConfigError(m); };
    if (name.empty()) fail("name: must not be empty");
    if (data.train_size < 0) fail("dataset.train_size: must be >= 0");
    if (data.test_size < 0) fail("dataset.test_size: must be >= 0");
    if (data.name == "synthetic") {
        const auto& s = data.synthetic;
        if (s.num_classes < 2) fail("dataset.synthetic.num_classes: must be >= 2");
        if (s.n < s.num_classes) fail("dataset.synthetic.n: must be >= num_classes");
        if (data.synthetic_test_n < 1) fail("dataset.synthetic.test_n: must be >= 1");
        if (s.image_side < 1) fail("dataset.synthetic.side: must be >= 1");
        if (s.channels < 1) fail("dataset.synthetic.channels: must be >= 1");
        if (!(s.noise >= 0.0)) fail("dataset.synthetic.noise: must be >= 0");
        if (!(s.margin >= 0.0)) fail("dataset.synthetic.margin: must be >= 0");
    }
    const TrainConfig t = resolved();
    const auto& m = t.model;
    if (m.kind == ModelKind::single_layer_cnn) {
        if (m.filters < 1) fail("model.filters: must be >= 1");
        if (m.kernel < 1) fail("model.kernel: must be >= 1");
        if (m.stride < 1) fail("model.stride: must be >= 1");
        if (m.pad < 0) fail("model.pad: must be >= 0");
        if (m.side + 2 * m.pad < m.kernel) fail("model.kernel: larger than the padded input");
    }
    if (m.kind == ModelKind::small_conv_net) {
        if (m.widths.size() < 2 || m.widths.size() > 4) fail("model.widths: must have 2 to 4 entries");
        for (int w : m.widths)
            if (w < 1) fail("model.widths: entries must be >= 1");
        if (m.hidden < 1) fail("model.hidden: must be >= 1");
    }
    if (final_eval.points < 1) fail("final_eval.points: must be >= 1");
    if (final_eval.steps < 1) fail("final_eval.steps: must be >= 1");
    if (final_eval.restarts < 1) fail("final_eval.restarts: must be >= 1");
    try {
        t.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
}

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) { return serialize_config(a) == serialize_config(b); }

std::vector<std::string> config_keys() {
    std::vector<std::string> out;
    for (const auto& [k, _] : registry()) out.push_back(k);
    return out;
}

ExperimentConfig parse_config(const std::string& text) {
    toml::table t;
    try {
        t = toml::parse(text);
    } catch (const toml::parse_error& e) {
        throw ConfigError("config: parse error at line " + std::to_string(e.source().begin.line) + ": " +
                          std::string(e.description()));
    }
    ExperimentConfig cfg;
    apply_table(cfg, t, "");
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
    auto it = registry().find(key);
    if (it == registry().end()) unknown_key(key);
    Value v = value;
    try {
        auto t = toml::parse("v = " + value);
        v = to_value(key, *t.get("v"));
    } catch (const toml::parse_error&) {
        // Bare words such as fgsm_at or 10/255 are taken as strings.
    }
    it->second.set(cfg, v);
}

void apply_override(ExperimentConfig& cfg, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set: expected key=value, got '" + assignment + "'");
    set_config_value(cfg, assignment.substr(0, eq), assignment.substr(eq + 1));
}

std::string get_config_value(const ExperimentConfig& cfg, const std::string& key) {
    auto it = registry().find(key);
    if (it == registry().end()) unknown_key(key);
    return it->second.get(cfg);
}

std::string serialize_config(const ExperimentConfig& cfg) {
    std::map<std::string, std::vector<std::pair<std::string, std::string>>> sections;
    for (const auto& [key, def] : registry()) {
        const auto dot = key.rfind('.');
        const std::string section = dot == std::string::npos ? "" : key.substr(0, dot);
        const std::string leaf = dot == std::string::npos ? key : key.substr(dot + 1);
        sections[section].emplace_back(leaf, def.get(cfg));
    }
    std::string out;
    for (const auto& [section, entries] : sections) {
        if (!section.empty()) out += "\n[" + section + "]\n";
        for (const auto& [k, v] : entries) out += k + " = " + v + "\n";
    }
    return out;
}

std::string sha256_hex(const std::string& bytes) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
        throw std::runtime_error("sha256: digest failed");
    }
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[md[i] >> 4];
        out += hex[md[i] & 15];
    }
    return out;
}

std::string run_id(const ExperimentConfig& cfg) { return sha256_hex(serialize_config(cfg)); }

}  // namespace coat
