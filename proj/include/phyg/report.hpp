#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "phyg/detector.hpp"
#include "phyg/trainer.hpp"

namespace phyg {

// Reports are canonical JSON: objects keep sorted keys and files are written
// with a fixed indent, so identical runs produce identical bytes. Wall-clock
// values live under the "timing" key, the only part allowed to differ.
using Json = nlohmann::json;

Json report_skeleton(const std::string& stage, const std::string& config_hash,
                     std::uint64_t seed,
                     const std::map<std::string, std::string>& config_echo);

void write_json_file(const std::string& path, const Json& j);
Json read_json_file(const std::string& path);

Json strip_timing(Json j);
bool reports_equal_modulo_timing(const Json& a, const Json& b);

Json metrics_to_json(const EvalMetrics& m);
Json detection_report_to_json(const DetectionReport& r);

// Merges stage reports (or prior merges) into one summary; rejects inputs
// whose schema version or config hash disagree.
Json merge_reports(const std::vector<Json>& reports);
std::string summary_markdown(const Json& merged);

std::string crc32_hex(const std::string& bytes);

}  // namespace phyg
