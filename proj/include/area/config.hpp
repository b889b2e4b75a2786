#pragma once

// Run configuration: a flat set of scalar fields, read from `key = value`
// text and hashed through a canonical sorted rendering.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "area/digest.hpp"
#include "area/encoder.hpp"
#include "area/errors.hpp"
#include "area/expert.hpp"
#include "area/pga.hpp"
#include "area/routing.hpp"

namespace area {

enum class Variant : std::uint8_t { Full = 0, Pca = 1, SimOnly = 2, SingleTask = 3, Cosine = 4 };

inline const char* to_string(Variant v) {
  switch (v) {
    case Variant::Full: return "full";
    case Variant::Pca: return "pca";
    case Variant::SimOnly: return "sim_only";
    case Variant::SingleTask: return "single_task";
    case Variant::Cosine: return "cosine";
  }
  return "full";
}

inline Variant parse_variant(std::string_view s) {
  for (auto v : {Variant::Full, Variant::Pca, Variant::SimOnly, Variant::SingleTask, Variant::Cosine})
    if (s == to_string(v)) return v;
  throw ConfigError("unknown variant '" + std::string(s) + "' (expected full, pca, sim_only, single_task, cosine)");
}

struct Config {
  std::uint64_t d_in = 128;
  std::uint64_t d = 32;
  std::uint64_t K = 8;
  std::uint64_t B = 5;
  std::uint64_t classes_per_task = 4;
  std::uint64_t samples_per_class = 50;
  double spread_sigma = 0.05;
  double min_class_angle = 0.5;
  std::uint64_t epochs = 20;
  std::uint64_t batch_size = 64;
  double lr_init = 0.05;
  std::string lr_schedule = "cosine";
  double lambda_int = 0.8;
  double lambda_comp = 1.0;
  double tau_cont = 0.07;
  double epsilon = 0.1;
  double tau_route = 0.05;
  std::uint64_t M = 3;
  double rho_min = 0.02;
  double rho_max = 0.4;
  std::uint64_t seed = 1993;
  std::string variant = "full";
  std::string mean_mode = "approx";

  bool operator==(const Config&) const = default;

  using Field = std::variant<std::uint64_t Config::*, double Config::*, std::string Config::*>;

  static const std::vector<std::pair<std::string_view, Field>>& fields() {
    static const std::vector<std::pair<std::string_view, Field>> f = {
        {"B", &Config::B},
        {"K", &Config::K},
        {"M", &Config::M},
        {"batch_size", &Config::batch_size},
        {"classes_per_task", &Config::classes_per_task},
        {"d", &Config::d},
        {"d_in", &Config::d_in},
        {"epochs", &Config::epochs},
        {"epsilon", &Config::epsilon},
        {"lambda_comp", &Config::lambda_comp},
        {"lambda_int", &Config::lambda_int},
        {"lr_init", &Config::lr_init},
        {"lr_schedule", &Config::lr_schedule},
        {"mean_mode", &Config::mean_mode},
        {"min_class_angle", &Config::min_class_angle},
        {"rho_max", &Config::rho_max},
        {"rho_min", &Config::rho_min},
        {"samples_per_class", &Config::samples_per_class},
        {"seed", &Config::seed},
        {"spread_sigma", &Config::spread_sigma},
        {"tau_cont", &Config::tau_cont},
        {"tau_route", &Config::tau_route},
        {"variant", &Config::variant},
    };
    return f;
  }

  static bool has_key(std::string_view key) {
    const auto& f = fields();
    return std::any_of(f.begin(), f.end(), [&](const auto& kv) { return kv.first == key; });
  }

  void set(std::string_view key, std::string_view value) {
    for (const auto& [name, field] : fields()) {
      if (name != key) continue;
      std::visit([&](auto member) { assign(this->*member, key, value); }, field);
      return;
    }
    throw ConfigError("unknown config key '" + std::string(key) + "'");
  }

  std::string get(std::string_view key) const {
    for (const auto& [name, field] : fields()) {
      if (name != key) continue;
      return std::visit([&](auto member) { return render(this->*member); }, field);
    }
    throw ConfigError("unknown config key '" + std::string(key) + "'");
  }

  // Sorted `key = value` lines; reals rendered with 17 significant digits.
  std::string canonical() const {
    std::string out;
    for (const auto& [name, _] : fields()) {
      out += name;
      out += " = ";
      out += get(name);
      out += '\n';
    }
    return out;
  }

  std::uint64_t digest() const {
    Fnv1a64 h;
    h.text(canonical());
    return h.value();
  }

  void validate() const {
    auto need = [](bool ok, const std::string& msg) {
      if (!ok) throw ConfigError(msg);
    };
    need(d_in >= 4, "d_in must be >= 4");
    need(d >= 2, "d must be >= 2");
    need(K >= 1 && K < d, "K must satisfy 1 <= K < d");
    need(B >= 1, "B must be >= 1");
    need(classes_per_task >= 2, "classes_per_task must be >= 2");
    need(samples_per_class >= 3, "samples_per_class must be >= 3 (two training samples and one test sample)");
    need(spread_sigma >= 0.0 && spread_sigma < 1.0, "spread_sigma must lie in [0, 1)");
    need(min_class_angle >= 0.0 && min_class_angle < M_PI, "min_class_angle must lie in [0, pi)");
    need(epochs >= 1 && batch_size >= 1, "epochs and batch_size must be >= 1");
    need(lr_init >= 0.0 && std::isfinite(lr_init), "lr_init must be finite and >= 0");
    need(lr_schedule == "cosine" || lr_schedule == "step", "lr_schedule must be cosine or step");
    need(lambda_int >= 0.0 && lambda_comp >= 0.0, "lambda_int and lambda_comp must be >= 0");
    need(tau_cont > 0.0 && tau_route > 0.0 && epsilon > 0.0, "tau_cont, tau_route and epsilon must be > 0");
    need(M >= 1, "M must be >= 1");
    need(rho_min > 0.0 && rho_min < rho_max && rho_max < 1.0, "need 0 < rho_min < rho_max < 1");
    need(mean_mode == "approx" || mean_mode == "iterative", "mean_mode must be approx or iterative");
    parse_variant(variant);
  }

  Variant variant_kind() const { return parse_variant(variant); }
  MeanMode mean_kind() const { return mean_mode == "iterative" ? MeanMode::Iterative : MeanMode::Approx; }

  LossWeights loss_weights() const { return {lambda_int, lambda_comp, tau_cont}; }

  TrainConfig train_config() const {
    return {epochs, batch_size, lr_init, lr_schedule == "step" ? LrSchedule::Step : LrSchedule::Cosine};
  }

  OtParams ot_params() const {
    OtParams p;
    p.epsilon = epsilon;
    p.tau_route = tau_route;
    return p;
  }

  PerturbationSpec perturbation() const {
    PerturbationSpec s;
    s.rho_min = rho_min;
    s.rho_max = rho_max;
    s.views = M;
    return s;
  }

  // Parse flat `key = value` text. Blank lines and lines starting with '#'
  // are ignored; keys may appear once.
  static Config parse(std::string_view text) { return parse(text, Config()); }

  static Config parse(std::string_view text, Config base) {
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    std::map<std::string, std::size_t> seen;
    while (std::getline(in, line)) {
      ++lineno;
      const std::string t = trim(line);
      if (t.empty() || t.front() == '#') continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos) {
        throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
      }
      const std::string key = trim(t.substr(0, eq));
      const std::string value = trim(t.substr(eq + 1));
      if (auto [it, fresh] = seen.emplace(key, lineno); !fresh) {
        throw ConfigError("config line " + std::to_string(lineno) + ": duplicate key '" + key + "' (first on line " +
                          std::to_string(it->second) + ")");
      }
      try {
        base.set(key, value);
      } catch (const ConfigError& e) {
        throw ConfigError("config line " + std::to_string(lineno) + ": " + e.what());
      }
    }
    base.validate();
    return base;
  }

  static Config load(const std::string& path) { return load(path, Config()); }

  static Config load(const std::string& path, Config base) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open config file '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    return parse(ss.str(), std::move(base));
  }

 private:
  static std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
  }

  template <typename T>
  static void assign(T& dst, std::string_view key, std::string_view value) {
    if constexpr (std::is_same_v<T, std::string>) {
      dst = std::string(value);
    } else {
      T v{};
      const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
      if (ec != std::errc{} || ptr != value.data() + value.size() || value.empty()) {
        throw ConfigError("bad value '" + std::string(value) + "' for key '" + std::string(key) + "'");
      }
      if constexpr (std::is_floating_point_v<T>) {
        if (!std::isfinite(v)) throw ConfigError("non-finite value for key '" + std::string(key) + "'");
      }
      dst = v;
    }
  }

  static std::string render(const std::string& s) { return s; }
  static std::string render(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
  }
  template <typename T>
    requires std::is_integral_v<T>
  static std::string render(T x) {
    return std::to_string(x);
  }
};

}  // namespace area
