#include "afl/harness/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <toml.hpp>

#include "afl/error.hpp"
#include "afl/numerics/rng.hpp"

namespace afl::harness {

const std::vector<std::string>& known_methods()
{
    static const std::vector<std::string> names{
        "base",           "oracle",          "shared_expert",   "uniform_ensemble", "logit_ensemble", "sgd_ensemble",
        "lp_ensemble",    "distilled_ensemble", "uniform_merge", "fullrank_merge",  "global_sgd_merge", "layer_sgd_merge",
        "arrow_topk",     "sgd_routing",     "hc",              "arrow_hc",         "cluster_oracle", "cluster_arrow",
    };
    return names;
}

const std::vector<std::string>& known_analyses()
{
    static const std::vector<std::string> names{"error_matrix", "interpolation", "greedy", "calibration"};
    return names;
}

std::string hex64(std::uint64_t v)
{
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::uint64_t hash_json(const nlohmann::json& j) { return num::fnv1a64(j.dump()); }

void ExperimentConfig::validate() const
{
    require(schema_version == kSchemaVersion, ErrorKind::bad_version,
            "unsupported schema_version " + std::to_string(schema_version));
    base.validate();
    require(!tasks.empty(), ErrorKind::invalid_argument, "config lists no tasks");
    std::set<std::string> names;
    for (const auto& t : tasks) {
        t.validate();
        require(names.insert(t.name).second, ErrorKind::invalid_argument, "duplicate task name '" + t.name + "'");
        const std::size_t factor = t.family == Family::duplicate ? 3 : 2;
        require(factor * t.max_len <= base.max_len, ErrorKind::invalid_argument,
                "task '" + t.name + "' can exceed the model context");
    }
    require(expert.rank >= 1, ErrorKind::invalid_argument, "expert rank must be >= 1");
    require(expert.dropout >= 0.0 && expert.dropout < 1.0, ErrorKind::invalid_argument, "dropout must be in [0, 1)");
    require(fusion.top_k >= 1 && fusion.top_k <= tasks.size(), ErrorKind::invalid_argument, "top_k must lie in [1, N]");
    require(fusion.clusters >= 1 && fusion.clusters <= tasks.size(), ErrorKind::invalid_argument, "clusters must lie in [1, N]");
    require(analysis.greedy_k_max <= tasks.size(), ErrorKind::invalid_argument, "greedy_k_max exceeds N");
    require(analysis.interpolation_points >= 2, ErrorKind::invalid_argument, "interpolation needs at least 2 points");
    for (const auto& [a, b] : analysis.pairs) {
        require(a < tasks.size() && b < tasks.size(), ErrorKind::invalid_argument, "interpolation pair index out of range");
    }
    std::set<std::string> seen;
    for (const auto& m : methods) {
        require(std::find(known_methods().begin(), known_methods().end(), m) != known_methods().end(),
                ErrorKind::invalid_argument, "unknown method '" + m + "'");
        require(seen.insert(m).second, ErrorKind::invalid_argument, "method '" + m + "' listed twice");
    }
    for (const auto& a : analyses) {
        require(std::find(known_analyses().begin(), known_analyses().end(), a) != known_analyses().end(),
                ErrorKind::invalid_argument, "unknown analysis '" + a + "'");
    }
}

namespace {

nlohmann::json train_json(const fusion::TrainHyper& h)
{
    return {{"epochs", h.epochs}, {"lr_grid", h.lr_grid}, {"batch_size", h.batch_size}, {"optimizer", num::to_string(h.optimizer)}};
}

std::string similarity_name(experts::SimilarityBasis b) { return b == experts::SimilarityBasis::delta ? "delta" : "factors"; }

}  // namespace

nlohmann::json ExperimentConfig::to_json() const
{
    nlohmann::json tasks_j = nlohmann::json::array();
    for (const auto& t : tasks) {
        tasks_j.push_back({{"name", t.name},
                           {"family", to_string(t.family)},
                           {"param", t.param},
                           {"window_start", t.window_start},
                           {"window_size", t.window_size},
                           {"min_len", t.min_len},
                           {"max_len", t.max_len},
                           {"train", t.train},
                           {"val", t.val},
                           {"test", t.test}});
    }
    nlohmann::json pairs_j = nlohmann::json::array();
    for (const auto& [a, b] : analysis.pairs) {
        pairs_j.push_back({a, b});
    }
    auto expert_j = train_json(expert.train);
    expert_j.update({{"rank", expert.rank}, {"alpha", expert.alpha}, {"dropout", expert.dropout}, {"init_std", expert.init_std}});
    auto fusion_j = train_json(fusion.train);
    fusion_j.update({{"train_per_task", fusion.train_per_task},
                     {"val_per_task", fusion.val_per_task},
                     {"top_k", fusion.top_k},
                     {"clusters", fusion.clusters},
                     {"sparsity", fusion.sparsity},
                     {"similarity", similarity_name(fusion.similarity)}});
    return {{"schema_version", schema_version},
            {"seed", seed},
            {"methods", methods},
            {"analyses", analyses},
            {"base",
             {{"vocab", base.vocab}, {"width", base.width}, {"layers", base.layers}, {"ffn_width", base.ffn_width}, {"max_len", base.max_len}}},
            {"pretrain", {{"examples", pretrain.examples}, {"lr", pretrain.lr}, {"batch_size", pretrain.batch_size}}},
            {"expert", expert_j},
            {"fusion", fusion_j},
            {"analysis",
             {{"interpolation_points", analysis.interpolation_points}, {"pairs", pairs_j}, {"greedy_k_max", analysis.greedy_k_max}}},
            {"tasks", tasks_j}};
}

std::string ExperimentConfig::hash() const { return hex64(hash_json(to_json())); }

ExperimentConfig ExperimentConfig::reference()
{
    ExperimentConfig c;
    c.pretrain.examples = 60000;
    return c;
}

namespace {

class TableReader {
public:
    TableReader(const toml::table& t, std::string where) : t_(t), where_(std::move(where)) {}

    ~TableReader() noexcept(false)
    {
        if (std::uncaught_exceptions() > 0) {
            return;
        }
        for (auto&& [k, v] : t_) {
            if (!used_.count(std::string(k.str()))) {
                fail(ErrorKind::invalid_argument, "unknown key '" + std::string(k.str()) + "' in " + where_);
            }
        }
    }

    const toml::node* node(const std::string& key)
    {
        used_.insert(key);
        return t_.get(key);
    }

    template <class T>
    void get(const std::string& key, T& out)
    {
        const toml::node* n = node(key);
        if (!n) {
            return;
        }
        if constexpr (std::is_same_v<T, std::string>) {
            auto v = n->value<std::string>();
            require(v.has_value(), ErrorKind::bad_format, where_ + "." + key + " must be a string");
            out = *v;
        } else if constexpr (std::is_same_v<T, double>) {
            auto v = n->value<double>();
            require(v.has_value(), ErrorKind::bad_format, where_ + "." + key + " must be a number");
            out = *v;
        } else if constexpr (std::is_same_v<T, int>) {
            auto v = n->value<std::int64_t>();
            require(v.has_value() && n->is_integer(), ErrorKind::bad_format, where_ + "." + key + " must be an integer");
            out = static_cast<int>(*v);
        } else {
            auto v = n->value<std::int64_t>();
            require(v.has_value() && n->is_integer() && *v >= 0, ErrorKind::bad_format,
                    where_ + "." + key + " must be a non-negative integer");
            out = static_cast<T>(*v);
        }
    }

    void get_doubles(const std::string& key, std::vector<double>& out)
    {
        const toml::node* n = node(key);
        if (!n) {
            return;
        }
        const auto* arr = n->as_array();
        require(arr != nullptr, ErrorKind::bad_format, where_ + "." + key + " must be an array");
        out.clear();
        for (auto&& e : *arr) {
            auto v = e.value<double>();
            require(v.has_value(), ErrorKind::bad_format, where_ + "." + key + " must hold numbers");
            out.push_back(*v);
        }
    }

    void get_strings(const std::string& key, std::vector<std::string>& out)
    {
        const toml::node* n = node(key);
        if (!n) {
            return;
        }
        const auto* arr = n->as_array();
        require(arr != nullptr, ErrorKind::bad_format, where_ + "." + key + " must be an array");
        out.clear();
        for (auto&& e : *arr) {
            auto v = e.value<std::string>();
            require(v.has_value(), ErrorKind::bad_format, where_ + "." + key + " must hold strings");
            out.push_back(*v);
        }
    }

    const toml::table* sub(const std::string& key)
    {
        const toml::node* n = node(key);
        if (!n) {
            return nullptr;
        }
        const auto* tab = n->as_table();
        require(tab != nullptr, ErrorKind::bad_format, where_ + "." + key + " must be a table");
        return tab;
    }

    const std::string& where() const { return where_; }

private:
    const toml::table& t_;
    std::string where_;
    std::set<std::string> used_;
};

void read_train(TableReader& r, fusion::TrainHyper& h)
{
    r.get("epochs", h.epochs);
    r.get_doubles("lr_grid", h.lr_grid);
    r.get("batch_size", h.batch_size);
    std::string opt = num::to_string(h.optimizer);
    r.get("optimizer", opt);
    h.optimizer = num::parse_optimizer_kind(opt);
}

}  // namespace

ExperimentConfig ExperimentConfig::from_toml_string(const std::string& text, const std::string& origin)
{
    toml::table root;
    try {
        root = toml::parse(text, origin);
    } catch (const toml::parse_error& e) {
        std::ostringstream msg;
        msg << "cannot parse " << origin << ": " << e.description() << " (line " << e.source().begin.line << ")";
        fail(ErrorKind::bad_format, msg.str());
    }
    ExperimentConfig c = reference();
    {
        TableReader r(root, origin);
        int version = -1;
        r.get("schema_version", version);
        require(version != -1, ErrorKind::bad_format, origin + " is missing schema_version");
        require(version == kSchemaVersion, ErrorKind::bad_version, "unsupported schema_version " + std::to_string(version));
        c.schema_version = version;
        r.get("seed", c.seed);
        r.get("output_dir", c.output_dir);
        r.get_strings("methods", c.methods);
        r.get_strings("analyses", c.analyses);
        if (const auto* t = r.sub("base")) {
            TableReader b(*t, "[base]");
            b.get("vocab", c.base.vocab);
            b.get("width", c.base.width);
            b.get("layers", c.base.layers);
            b.get("ffn_width", c.base.ffn_width);
            b.get("max_len", c.base.max_len);
        }
        if (const auto* t = r.sub("pretrain")) {
            TableReader p(*t, "[pretrain]");
            p.get("examples", c.pretrain.examples);
            p.get("lr", c.pretrain.lr);
            p.get("batch_size", c.pretrain.batch_size);
        }
        if (const auto* t = r.sub("expert")) {
            TableReader e(*t, "[expert]");
            e.get("rank", c.expert.rank);
            e.get("alpha", c.expert.alpha);
            e.get("dropout", c.expert.dropout);
            e.get("init_std", c.expert.init_std);
            read_train(e, c.expert.train);
        }
        if (const auto* t = r.sub("fusion")) {
            TableReader f(*t, "[fusion]");
            read_train(f, c.fusion.train);
            f.get("train_per_task", c.fusion.train_per_task);
            f.get("val_per_task", c.fusion.val_per_task);
            f.get("top_k", c.fusion.top_k);
            f.get("clusters", c.fusion.clusters);
            f.get("sparsity", c.fusion.sparsity);
            std::string sim = similarity_name(c.fusion.similarity);
            f.get("similarity", sim);
            require(sim == "factors" || sim == "delta", ErrorKind::invalid_argument, "similarity must be 'factors' or 'delta'");
            c.fusion.similarity = sim == "delta" ? experts::SimilarityBasis::delta : experts::SimilarityBasis::factors;
        }
        if (const auto* t = r.sub("analysis")) {
            TableReader a(*t, "[analysis]");
            a.get("interpolation_points", c.analysis.interpolation_points);
            a.get("greedy_k_max", c.analysis.greedy_k_max);
            if (const auto* n = a.node("pairs")) {
                const auto* arr = n->as_array();
                require(arr != nullptr, ErrorKind::bad_format, "[analysis].pairs must be an array of [i, j]");
                c.analysis.pairs.clear();
                for (auto&& e : *arr) {
                    const auto* p = e.as_array();
                    require(p && p->size() == 2 && p->get(0)->is_integer() && p->get(1)->is_integer(), ErrorKind::bad_format,
                            "[analysis].pairs entries must be [i, j]");
                    c.analysis.pairs.emplace_back(static_cast<std::size_t>(*p->get(0)->value<std::int64_t>()),
                                                  static_cast<std::size_t>(*p->get(1)->value<std::int64_t>()));
                }
            }
        }
        if (const auto* n = r.node("tasks")) {
            const auto* arr = n->as_array();
            require(arr != nullptr, ErrorKind::bad_format, "tasks must be an array of tables ([[tasks]])");
            c.tasks.clear();
            for (auto&& e : *arr) {
                const auto* t = e.as_table();
                require(t != nullptr, ErrorKind::bad_format, "tasks must be an array of tables ([[tasks]])");
                TableReader tr(*t, "[[tasks]]");
                TaskSpec s;
                tr.get("name", s.name);
                std::string family;
                tr.get("family", family);
                s.family = parse_family(family);
                tr.get("param", s.param);
                tr.get("window_start", s.window_start);
                tr.get("window_size", s.window_size);
                tr.get("min_len", s.min_len);
                tr.get("max_len", s.max_len);
                tr.get("train", s.train);
                tr.get("val", s.val);
                tr.get("test", s.test);
                c.tasks.push_back(std::move(s));
            }
        }
    }
    c.validate();
    return c;
}

ExperimentConfig ExperimentConfig::from_toml_file(const std::string& path)
{
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorKind::missing_file, "missing file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_toml_string(ss.str(), path);
}

std::string ExperimentConfig::to_toml() const
{
    auto strings = [](const std::vector<std::string>& v) {
        std::string s = "[";
        for (std::size_t i = 0; i < v.size(); ++i) {
            s += (i ? ", \"" : "\"") + v[i] + "\"";
        }
        return s + "]";
    };
    auto num = [](double v) {
        char buf[32];
        const auto res = std::to_chars(buf, buf + sizeof buf, v);
        std::string out(buf, res.ptr);
        if (out.find_first_of(".e") == std::string::npos) {
            out += ".0";
        }
        return out;
    };
    auto doubles = [&](const std::vector<double>& v) {
        std::string s = "[";
        for (std::size_t i = 0; i < v.size(); ++i) {
            s += (i ? ", " : "") + num(v[i]);
        }
        return s + "]";
    };
    std::ostringstream o;
    o << "schema_version = " << schema_version << "\n";
    o << "seed = " << seed << "\n";
    o << "output_dir = \"" << output_dir << "\"\n";
    o << "methods = " << strings(methods) << "\n";
    o << "analyses = " << strings(analyses) << "\n\n";
    o << "[base]\nvocab = " << base.vocab << "\nwidth = " << base.width << "\nlayers = " << base.layers
      << "\nffn_width = " << base.ffn_width << "\nmax_len = " << base.max_len << "\n\n";
    o << "[pretrain]\nexamples = " << pretrain.examples << "\nlr = " << num(pretrain.lr) << "\nbatch_size = " << pretrain.batch_size
      << "\n\n";
    o << "[expert]\nrank = " << expert.rank << "\nalpha = " << num(expert.alpha) << "\ndropout = " << num(expert.dropout)
      << "\ninit_std = " << num(expert.init_std) << "\nepochs = " << expert.train.epochs
      << "\nlr_grid = " << doubles(expert.train.lr_grid) << "\nbatch_size = " << expert.train.batch_size << "\noptimizer = \""
      << num::to_string(expert.train.optimizer) << "\"\n\n";
    o << "[fusion]\nepochs = " << fusion.train.epochs << "\nlr_grid = " << doubles(fusion.train.lr_grid)
      << "\nbatch_size = " << fusion.train.batch_size << "\noptimizer = \"" << num::to_string(fusion.train.optimizer)
      << "\"\ntrain_per_task = " << fusion.train_per_task << "\nval_per_task = " << fusion.val_per_task
      << "\ntop_k = " << fusion.top_k << "\nclusters = " << fusion.clusters << "\nsparsity = " << num(fusion.sparsity)
      << "\nsimilarity = \"" << similarity_name(fusion.similarity) << "\"\n\n";
    o << "[analysis]\ninterpolation_points = " << analysis.interpolation_points << "\ngreedy_k_max = " << analysis.greedy_k_max
      << "\npairs = [";
    for (std::size_t i = 0; i < analysis.pairs.size(); ++i) {
        o << (i ? ", " : "") << '[' << analysis.pairs[i].first << ", " << analysis.pairs[i].second << ']';
    }
    o << "]\n";
    for (const auto& t : tasks) {
        o << "\n[[tasks]]\nname = \"" << t.name << "\"\nfamily = \"" << to_string(t.family) << "\"\nparam = " << t.param
          << "\nwindow_start = " << t.window_start << "\nwindow_size = " << t.window_size << "\nmin_len = " << t.min_len
          << "\nmax_len = " << t.max_len << "\ntrain = " << t.train << "\nval = " << t.val << "\ntest = " << t.test << "\n";
    }
    return o.str();
}

}  // namespace afl::harness
