#pragma once

// Run configuration: INI sections [synthetic] [model] [train] [probe] [fetch]
// [visualize] [paths] [seed]. Every key has a default; unknown sections and
// keys are rejected by name.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <nlohmann/json.hpp>

#include "mosaic/error.hpp"
#include "mosaic/evaluation.hpp"
#include "mosaic/model.hpp"
#include "mosaic/synthgen.hpp"
#include "mosaic/training.hpp"

namespace mosaic {

struct FetchConfig {
  std::size_t episodes = 20;
  std::vector<int> levels = {1, 2, 3, 4, 5};
};

struct VisualizeConfig {
  VisualizationConfig autoencoder;
  std::string behavior = "lift";
  std::string property = "category";
  std::size_t fold = 0;
};

struct PathsConfig {
  std::string archive = "run/archive";
  std::string checkpoints = "run/checkpoints";
  std::string reports = "run/reports";
};

struct RunConfig {
  SyntheticConfig synthetic;
  ModelConfig model;
  TrainConfig train;
  std::size_t folds = 5;
  bool shared_model = false;  // one model over all behaviors instead of one each
  ProbeConfig probe;
  FetchConfig fetch;
  VisualizeConfig visualize;
  PathsConfig paths;
  std::uint64_t seed = 1;
};

namespace detail {

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

inline std::string join_list(const std::vector<std::string>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + v[i];
  return s;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  std::istringstream in(text);
  T value{};
  in >> value;
  require(!in.fail() && in.eof(), ErrorKind::kConfiguration,
          "config key " + key + ": cannot parse '" + text + "'");
  return value;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  fail(ErrorKind::kConfiguration, "config key " + key + ": expected a boolean, got '" + text + "'");
}

// Binds "section.key" names to setters and getters over one RunConfig.
class Binder {
 public:
  using Set = std::function<void(const std::string& key, const std::string& text)>;
  using Get = std::function<nlohmann::json()>;

  void add(const std::string& name, Set set, Get get) {
    order_.push_back(name);
    entries_[name] = {std::move(set), std::move(get)};
  }
  template <typename T>
  void number(const std::string& name, T& field) {
    add(name, [&field](const std::string& k, const std::string& t) { field = parse_number<T>(k, t); },
        [&field] { return nlohmann::json(field); });
  }
  void flag(const std::string& name, bool& field) {
    add(name, [&field](const std::string& k, const std::string& t) { field = parse_bool(k, t); },
        [&field] { return nlohmann::json(field); });
  }
  void text(const std::string& name, std::string& field) {
    add(name, [&field](const std::string&, const std::string& t) { field = t; },
        [&field] { return nlohmann::json(field); });
  }
  void list(const std::string& name, std::vector<std::string>& field) {
    add(name, [&field](const std::string&, const std::string& t) { field = split_list(t); },
        [&field] { return nlohmann::json(field); });
  }

  void set(const std::string& name, const std::string& value) {
    auto it = entries_.find(name);
    require(it != entries_.end(), ErrorKind::kConfiguration, "unknown config key " + name);
    it->second.first(name, value);
  }

  nlohmann::json dump() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& name : order_) {
      const auto dot = name.find('.');
      j[name.substr(0, dot)][name.substr(dot + 1)] = entries_.at(name).second();
    }
    return j;
  }

 private:
  std::vector<std::string> order_;
  std::map<std::string, std::pair<Set, Get>> entries_;
};

inline Binder bind(RunConfig& c) {
  Binder b;
  auto& s = c.synthetic;
  b.number("synthetic.objects_per_category", s.objects_per_category);
  b.number("synthetic.categories", s.categories);
  b.list("synthetic.behaviors", s.behaviors);
  b.number("synthetic.d_z", s.d_z);
  b.number("synthetic.trials", s.trials);
  b.number("synthetic.noise_level", s.noise_level);
  b.number("synthetic.seed", s.seed);
  b.number("synthetic.descriptions", s.descriptions);
  b.number("synthetic.haptic_channels", s.haptic_channels);
  b.number("synthetic.property_dropout", s.property_dropout);
  b.number("synthetic.property_redraw", s.property_redraw);
  b.number("synthetic.category_rate", s.style.category_rate);
  b.number("synthetic.property_word_rate", s.style.property_word_rate);

  auto& m = c.model;
  b.number("model.heads", m.heads);
  b.number("model.mlp_hidden", m.mlp_hidden);
  b.add("model.conv_channels",
        [&m](const std::string& k, const std::string& t) {
          m.conv_channels.clear();
          for (const auto& x : split_list(t)) m.conv_channels.push_back(parse_number<std::size_t>(k, x));
        },
        [&m] { return nlohmann::json(m.conv_channels); });
  b.number("model.kernel", m.kernel);
  b.number("model.min_haptic_length", m.min_haptic_length);

  auto& t = c.train;
  b.number("train.epochs", t.epochs);
  b.number("train.learning_rate", t.learning_rate);
  b.number("train.batch_size", t.batch_size);
  b.flag("train.freeze_logit_scale", t.freeze_logit_scale);
  b.number("train.checkpoint_every", t.checkpoint_every);
  b.number("train.folds", c.folds);
  b.flag("train.shared_model", c.shared_model);

  auto& p = c.probe;
  b.number("probe.epochs", p.epochs);
  b.number("probe.learning_rate", p.learning_rate);
  b.number("probe.batch_size", p.batch_size);
  b.number("probe.hidden", p.hidden);

  auto& f = c.fetch;
  b.number("fetch.episodes", f.episodes);
  b.add("fetch.levels",
        [&f](const std::string& k, const std::string& text) {
          f.levels.clear();
          for (const auto& x : split_list(text)) f.levels.push_back(parse_number<int>(k, x));
        },
        [&f] { return nlohmann::json(f.levels); });

  auto& v = c.visualize;
  b.number("visualize.steps", v.autoencoder.steps);
  b.number("visualize.learning_rate", v.autoencoder.learning_rate);
  b.text("visualize.behavior", v.behavior);
  b.text("visualize.property", v.property);
  b.number("visualize.fold", v.fold);

  b.text("paths.archive", c.paths.archive);
  b.text("paths.checkpoints", c.paths.checkpoints);
  b.text("paths.reports", c.paths.reports);

  b.number("seed.seed", c.seed);
  return b;
}

}  // namespace detail

inline void validate(const RunConfig& c) {
  require(c.synthetic.d_z == c.model.d_z, ErrorKind::kConfiguration,
          "model d_z must equal synthetic.d_z");
  require(c.folds >= 2, ErrorKind::kConfiguration, "train.folds must be at least 2");
  require(c.fetch.episodes >= 1, ErrorKind::kConfiguration, "fetch.episodes must be positive");
  for (int l : c.fetch.levels)
    require(l >= 1 && l <= 5, ErrorKind::kConfiguration,
            "fetch.levels: level " + std::to_string(l) + " is outside 1..5");
  require(c.visualize.fold < c.folds, ErrorKind::kConfiguration,
          "visualize.fold must be below train.folds");
  c.train.validate();
  c.model.validate();
}

// Sets one "section.key" value; used for files and command-line overrides.
inline void set_config_value(RunConfig& c, const std::string& name, const std::string& value) {
  detail::bind(c).set(name, value);
  c.model.d_z = c.synthetic.d_z;
}

inline RunConfig parse_config(std::istream& in, const std::string& source = "config") {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    fail(ErrorKind::kConfiguration, source + ": " + e.what());
  }
  RunConfig c;
  for (const auto& [section, body] : tree) {
    require(!body.empty() || body.data().empty(), ErrorKind::kConfiguration,
            source + ": key '" + section + "' outside a section");
    for (const auto& [key, value] : body) set_config_value(c, section + "." + key, value.data());
  }
  validate(c);
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::kIo, "cannot read config file " + path.string());
  return parse_config(in, path.string());
}

inline nlohmann::json config_json(const RunConfig& c) {
  RunConfig copy = c;
  return detail::bind(copy).dump();
}

// INI text that parses back to `c`.
inline std::string config_ini(const RunConfig& c) {
  const auto j = config_json(c);
  std::string out;
  for (const auto& [section, body] : j.items()) {
    out += "[" + section + "]\n";
    for (const auto& [key, value] : body.items()) {
      std::string text;
      if (value.is_array()) {
        std::vector<std::string> parts;
        for (const auto& x : value) parts.push_back(x.is_string() ? x.get<std::string>() : x.dump());
        text = detail::join_list(parts);
      } else if (value.is_string()) {
        text = value.get<std::string>();
      } else {
        text = value.dump();
      }
      out += key + " = " + text + "\n";
    }
    out += "\n";
  }
  return out;
}

}  // namespace mosaic
