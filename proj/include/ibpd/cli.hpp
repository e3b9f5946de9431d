#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace ibpd {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

/// Every configurable value with its default. Sections: data, digits, split,
/// model, train, analysis; top-level keys: preset, out, dataset, checkpoint.
nlohmann::json default_run_config();

/// Applies IBPD_<SECTION>_<KEY>=value pairs (e.g. IBPD_TRAIN_EPOCHS=5) onto
/// `cfg`. Values are converted to the type of the default they replace.
void apply_env_overrides(nlohmann::json& cfg, const std::vector<std::pair<std::string, std::string>>& env);

/// Sets a dotted key ("train.epochs") from its text form. Throws ConfigError
/// for unknown keys or values of the wrong type.
void set_config_value(nlohmann::json& cfg, const std::string& dotted_key, const std::string& value);

/// `ibpd <command> [--config file.json] [--key value ...]`. Returns the exit
/// code: 0 on success, 1 on usage errors, 2 when a run aborts.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ibpd
