#include "optlens/config.hpp"

#include <fmt/format.h>
#include <openssl/evp.h>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "optlens/errors.hpp"

namespace optlens::harness {

Digest sha256(std::string_view text) {
  Digest d{};
  unsigned int len = 0;
  if (EVP_Digest(text.data(), text.size(), d.data(), &len, EVP_sha256(), nullptr) != 1 || len != d.size()) {
    throw Error("sha256 failed");
  }
  return d;
}

std::string hex(const Digest& d) {
  std::string s;
  for (auto b : d) {
    s += fmt::format("{:02x}", b);
  }
  return s;
}

std::string format_double(double x) { return fmt::format("{}", x); }

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) {
    return {};
  }
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(std::string_view key, std::string_view v) {
  v = trim(v);
  double x = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || p != v.data() + v.size() || !std::isfinite(x)) {
    throw ConfigError("config key '" + std::string(key) + "': expected a number, got '" + std::string(v) + "'");
  }
  return x;
}

std::uint64_t to_uint(std::string_view key, std::string_view v) {
  v = trim(v);
  std::uint64_t x = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("config key '" + std::string(key) + "': expected a non-negative integer, got '" +
                      std::string(v) + "'");
  }
  return x;
}

bool to_bool(std::string_view key, std::string_view v) {
  v = trim(v);
  if (v == "true" || v == "1" || v == "yes") {
    return true;
  }
  if (v == "false" || v == "0" || v == "no") {
    return false;
  }
  throw ConfigError("config key '" + std::string(key) + "': expected true/false");
}

std::vector<double> to_list(std::string_view key, std::string_view v) {
  std::vector<double> out;
  std::size_t start = 0;
  while (start <= v.size()) {
    const auto comma = v.find(',', start);
    const auto item = trim(v.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (item.empty()) {
      throw ConfigError("config key '" + std::string(key) + "': empty list item");
    }
    out.push_back(to_double(key, item));
    if (comma == std::string_view::npos) {
      break;
    }
    start = comma + 1;
  }
  return out;
}

std::string from_list(const std::vector<double>& xs) {
  std::string s;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    s += (i ? "," : "") + format_double(xs[i]);
  }
  return s;
}

struct Field {
  bool training;
  std::function<void(ExperimentConfig&, std::string_view key, std::string_view value)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <class M>
Field size_field(bool training, M member) {
  return {training,
          [member](ExperimentConfig& c, std::string_view k, std::string_view v) {
            c.*member = static_cast<std::size_t>(to_uint(k, v));
          },
          [member](const ExperimentConfig& c) { return std::to_string(c.*member); }};
}

const std::map<std::string, Field, std::less<>>& fields() {
  using C = ExperimentConfig;
  static const std::map<std::string, Field, std::less<>> kFields = [] {
    std::map<std::string, Field, std::less<>> f;
    f["model"] = {true, [](C& c, std::string_view, std::string_view v) {
                    c.model = std::string(models::family_name(models::parse_family(trim(v))));
                  },
                  [](const C& c) { return c.model; }};
    f["num_classes"] = {true,
                        [](C& c, std::string_view k, std::string_view v) {
                          c.num_classes = static_cast<std::size_t>(to_uint(k, v));
                          c.dataset.num_classes = c.num_classes;
                        },
                        [](const C& c) { return std::to_string(c.num_classes); }};
    f["optimizer"] = {true,
                      [](C& c, std::string_view, std::string_view v) { c.opt.kind = optim::parse_kind(trim(v)); },
                      [](const C& c) { return std::string(optim::kind_name(c.opt.kind)); }};
    const auto real = [](double optim::Hyperparams::*m) {
      return Field{true, [m](C& c, std::string_view k, std::string_view v) { c.opt.*m = to_double(k, v); },
                   [m](const C& c) { return format_double(c.opt.*m); }};
    };
    f["lr"] = real(&optim::Hyperparams::lr);
    f["weight_decay"] = real(&optim::Hyperparams::weight_decay);
    f["beta1"] = real(&optim::Hyperparams::beta1);
    f["beta2"] = real(&optim::Hyperparams::beta2);
    f["eps"] = real(&optim::Hyperparams::eps);
    f["muon_beta"] = real(&optim::Hyperparams::muon_beta);
    f["muon_scale"] = real(&optim::Hyperparams::muon_scale);
    f["ns_steps"] = {true,
                     [](C& c, std::string_view k, std::string_view v) {
                       c.opt.ns.steps = static_cast<std::size_t>(to_uint(k, v));
                     },
                     [](const C& c) { return std::to_string(c.opt.ns.steps); }};
    f["ns_polish_steps"] = {true,
                            [](C& c, std::string_view k, std::string_view v) {
                              c.opt.ns.polish_steps = static_cast<std::size_t>(to_uint(k, v));
                            },
                            [](const C& c) { return std::to_string(c.opt.ns.polish_steps); }};
    f["lr_schedule"] = {true,
                        [](C& c, std::string_view, std::string_view v) {
                          c.opt.schedule = optim::parse_schedule(trim(v));
                        },
                        [](const C& c) { return std::string(optim::schedule_name(c.opt.schedule)); }};
    f["routing"] = {true,
                    [](C& c, std::string_view k, std::string_view v) {
                      v = trim(v);
                      if (v != "default" && v != "adam") {
                        throw ConfigError("config key '" + std::string(k) + "': expected default or adam");
                      }
                      c.routing = std::string(v);
                    },
                    [](const C& c) { return c.routing; }};
    f["epochs"] = size_field(true, &C::epochs);
    f["batch_size"] = size_field(true, &C::batch_size);
    f["seed"] = {true, [](C& c, std::string_view k, std::string_view v) { c.seed = to_uint(k, v); },
                 [](const C& c) { return std::to_string(c.seed); }};
    f["data_seed"] = {true, [](C& c, std::string_view k, std::string_view v) { c.dataset.seed = to_uint(k, v); },
                      [](const C& c) { return std::to_string(c.dataset.seed); }};
    const auto data_size = [](std::size_t data::DatasetSpec::*m) {
      return Field{true,
                   [m](C& c, std::string_view k, std::string_view v) {
                     c.dataset.*m = static_cast<std::size_t>(to_uint(k, v));
                   },
                   [m](const C& c) { return std::to_string(c.dataset.*m); }};
    };
    f["points_per_cloud"] = data_size(&data::DatasetSpec::points_per_cloud);
    f["train_size"] = data_size(&data::DatasetSpec::train_size);
    f["val_size"] = data_size(&data::DatasetSpec::val_size);
    f["test_size"] = data_size(&data::DatasetSpec::test_size);

    f["lr_grid"] = {false, [](C& c, std::string_view k, std::string_view v) { c.lr_grid = to_list(k, v); },
                    [](const C& c) { return from_list(c.lr_grid); }};
    f["wd_grid"] = {false, [](C& c, std::string_view k, std::string_view v) { c.wd_grid = to_list(k, v); },
                    [](const C& c) { return from_list(c.wd_grid); }};
    f["num_seeds"] = size_field(false, &C::num_seeds);
    f["corruptions"] = {false, [](C& c, std::string_view k, std::string_view v) { c.corruptions = to_bool(k, v); },
                        [](const C& c) { return std::string(c.corruptions ? "true" : "false"); }};
    f["subset_size"] = size_field(false, &C::subset_size);
    f["analysis_seed"] = {false,
                          [](C& c, std::string_view k, std::string_view v) { c.analysis_seed = to_uint(k, v); },
                          [](const C& c) { return std::to_string(c.analysis_seed); }};
    f["hessian_tol"] = {false, [](C& c, std::string_view k, std::string_view v) { c.hessian_tol = to_double(k, v); },
                        [](const C& c) { return format_double(c.hessian_tol); }};
    f["hessian_max_iters"] = size_field(false, &C::hessian_max_iters);
    f["hessian_probes"] = size_field(false, &C::hessian_probes);
    f["slice_half_range"] = {false,
                             [](C& c, std::string_view k, std::string_view v) {
                               c.slice_half_range = to_double(k, v);
                             },
                             [](const C& c) { return format_double(c.slice_half_range); }};
    f["slice_resolution"] = size_field(false, &C::slice_resolution);
    return f;
  }();
  return kFields;
}

const Field& field(std::string_view key) {
  const auto& f = fields();
  const auto it = f.find(key);
  if (it == f.end()) {
    throw ConfigError("unknown config key '" + std::string(key) + "'");
  }
  return it->second;
}

std::string canonical_of(const ExperimentConfig& c, bool training_only) {
  std::string out;
  for (const auto& [key, f] : fields()) {
    if (!training_only || f.training) {
      out += key + "=" + f.get(c) + "\n";
    }
  }
  return out;
}

}  // namespace

void ExperimentConfig::set(std::string_view key, std::string_view value) { field(key).set(*this, key, value); }

std::string ExperimentConfig::get(std::string_view key) const { return field(key).get(*this); }

const std::vector<std::string>& ExperimentConfig::keys() {
  static const std::vector<std::string> kKeys = [] {
    std::vector<std::string> k;
    for (const auto& [name, f] : fields()) {
      k.push_back(name);
    }
    return k;
  }();
  return kKeys;
}

void ExperimentConfig::validate() const {
  model_spec().validate();
  opt.validate();
  dataset.validate();
  if (dataset.num_classes != num_classes) {
    throw ConfigError("num_classes disagrees with the dataset spec");
  }
  if (epochs == 0 || batch_size == 0) {
    throw ConfigError("epochs and batch_size must be positive");
  }
  if (lr_grid.empty() || wd_grid.empty()) {
    throw ConfigError("lr_grid and wd_grid must be non-empty");
  }
  if (num_seeds == 0) {
    throw ConfigError("num_seeds must be >= 1");
  }
  if (subset_size == 0 || hessian_probes < 2 || hessian_max_iters == 0 || !(hessian_tol > 0.0)) {
    throw ConfigError("analysis settings out of range");
  }
  if (slice_resolution < 2 || !(slice_half_range > 0.0)) {
    throw ConfigError("slice settings out of range");
  }
}

models::ModelSpec ExperimentConfig::model_spec() const {
  return models::parse_family(model) == models::Family::kPointNet ? models::ModelSpec::pointnet_tiny(num_classes)
                                                                  : models::ModelSpec::egnn_tiny(num_classes);
}

std::string ExperimentConfig::canonical_training() const { return canonical_of(*this, true); }

std::string ExperimentConfig::canonical() const { return canonical_of(*this, false); }

void ExperimentConfig::apply_text(std::string_view text) {
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) {
      end = text.size();
    }
    ++line_no;
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) {
      line = line.substr(0, hash);
    }
    line = trim(line);
    if (line.empty()) {
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

ExperimentConfig ExperimentConfig::parse(std::string_view text) {
  ExperimentConfig c;
  c.apply_text(text);
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot read config '" + path.string() + "'");
  }
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

}  // namespace optlens::harness
