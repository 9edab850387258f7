#include <nlohmann/json.hpp>

#include "dvme/errors.hpp"
#include "dvme/evalbench.hpp"

namespace dvme {

using ojson = nlohmann::ordered_json;

std::string report_to_json(const RunReport& r) {
  ojson j;
  j["dataset"] = r.dataset;
  j["subtask"] = r.subtask;
  j["variant"] = r.variant;
  j["metric"] = r.metrics.metric;
  j["per_fold"] = r.metrics.per_fold;
  j["mean"] = r.metrics.mean;
  j["std"] = r.metrics.std;
  if (r.leaderboard_alpha) j["leaderboard_alpha"] = *r.leaderboard_alpha;
  if (r.leaderboard_score) j["leaderboard_score"] = *r.leaderboard_score;
  j["config"] = r.config_json.empty() ? ojson::object() : ojson::parse(r.config_json);
  return j.dump(2) + "\n";
}

RunReport report_from_json(const std::string& text) {
  ojson j;
  try {
    j = ojson::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed report: ") + e.what());
  }
  try {
    RunReport r;
    r.dataset = j.value("dataset", "");
    r.subtask = j.value("subtask", "");
    r.variant = j.value("variant", "");
    r.metrics.metric = j.at("metric").get<std::string>();
    r.metrics.per_fold = j.at("per_fold").get<std::vector<double>>();
    r.metrics.mean = j.at("mean").get<double>();
    r.metrics.std = j.at("std").get<double>();
    if (j.contains("leaderboard_alpha")) r.leaderboard_alpha = j["leaderboard_alpha"].get<double>();
    if (j.contains("leaderboard_score")) r.leaderboard_score = j["leaderboard_score"].get<double>();
    if (j.contains("config")) r.config_json = j["config"].dump();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("report is missing a field: ") + e.what());
  }
}

}  // namespace dvme
