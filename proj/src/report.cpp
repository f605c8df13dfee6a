#include "phyg/report.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "phyg/config.hpp"
#include "phyg/model_io.hpp"
#include "phyg/version.hpp"

namespace phyg {

std::string crc32_hex(const std::string& bytes) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%08x", crc32(bytes.data(), bytes.size()));
    return buf;
}

Json report_skeleton(const std::string& stage, const std::string& config_hash, std::uint64_t seed,
                     const std::map<std::string, std::string>& config_echo) {
    Json j;
    j["artifact_version"] = kVersion;
    j["report_schema"] = kReportSchemaVersion;
    j["stage"] = stage;
    j["config_hash"] = config_hash;
    j["seed"] = seed;
    j["config_echo"] = config_echo;
    j["timing"] = Json::object();
    return j;
}

void write_json_file(const std::string& path, const Json& j) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write report file: " + path);
    out << j.dump(2) << "\n";
    if (!out) throw std::runtime_error("short write to report file: " + path);
}

Json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open report file: " + path);
    Json j;
    try {
        in >> j;
    } catch (const Json::parse_error& e) {
        throw std::runtime_error("bad JSON in " + path + ": " + e.what());
    }
    return j;
}

Json strip_timing(Json j) {
    j.erase("timing");
    if (j.contains("stages"))
        for (auto& [key, stage] : j["stages"].items()) stage.erase("timing");
    return j;
}

bool reports_equal_modulo_timing(const Json& a, const Json& b) {
    return strip_timing(a) == strip_timing(b);
}

Json metrics_to_json(const EvalMetrics& m) {
    Json j;
    j["classification_accuracy"] = m.classification_accuracy;
    j["attack_success_rate"] = m.attack_success_rate;
    j["per_class_accuracy"] = m.per_class_accuracy;
    return j;
}

Json detection_report_to_json(const DetectionReport& r) {
    Json j;
    j["model_infected"] = r.model_infected;
    Json verdicts = Json::array();
    for (const LabelVerdict& v : r.verdicts) {
        Json jv;
        jv["label"] = v.label;
        jv["prob"] = v.prob;
        jv["infected"] = v.infected;
        jv["reached_count"] = v.reached_count;
        jv["lambdas"] = v.lambdas;
        jv["gammas"] = v.gammas;
        verdicts.push_back(std::move(jv));
    }
    j["labels"] = std::move(verdicts);
    if (r.has_ground_truth) {
        j["ground_truth"] = r.ground_truth_labels;
        j["false_positive_rate"] = r.false_positive_rate;
        j["true_positives"] = r.true_positives;
    }
    return j;
}

Json merge_reports(const std::vector<Json>& reports) {
    if (reports.empty()) throw ConfigError("no reports to merge");

    Json merged;
    merged["artifact_version"] = kVersion;
    merged["report_schema"] = kReportSchemaVersion;
    merged["stage"] = "summary";
    merged["stages"] = Json::object();
    merged["timing"] = Json::object();

    std::string config_hash;
    auto add_stage = [&](const Json& r) {
        const std::string stage = r.value("stage", "");
        if (stage.empty()) throw ConfigError("report is missing its stage name");
        if (r.value("report_schema", -1) != kReportSchemaVersion)
            throw ConfigError("report schema version mismatch for stage '" + stage + "'");
        const std::string hash = r.value("config_hash", "");
        if (config_hash.empty())
            config_hash = hash;
        else if (config_hash != hash)
            throw ConfigError("config hash mismatch: reports come from different configs");
        // Idempotent: re-merging the same stage content is a no-op; a
        // different content under the same stage name is a conflict.
        if (merged["stages"].contains(stage)) {
            if (strip_timing(merged["stages"][stage]) != strip_timing(r))
                throw ConfigError("conflicting duplicate reports for stage '" + stage + "'");
            return;
        }
        merged["stages"][stage] = r;
    };

    for (const Json& r : reports) {
        if (r.value("stage", "") == "summary") {
            if (r.value("report_schema", -1) != kReportSchemaVersion)
                throw ConfigError("summary schema version mismatch");
            for (const auto& [key, stage] : r.at("stages").items()) add_stage(stage);
        } else {
            add_stage(r);
        }
    }
    merged["config_hash"] = config_hash;
    return merged;
}

std::string summary_markdown(const Json& merged) {
    std::ostringstream os;
    os << "# Run summary\n\n";
    os << "config hash: `" << merged.value("config_hash", "?") << "`\n\n";
    os << "| stage | key metrics |\n|---|---|\n";
    for (const auto& [name, stage] : merged.at("stages").items()) {
        os << "| " << name << " | ";
        std::vector<std::string> bits;
        if (stage.contains("metrics")) {
            const Json& m = stage["metrics"];
            if (m.contains("classification_accuracy"))
                bits.push_back("accuracy " +
                               std::to_string(m["classification_accuracy"].get<double>()));
            if (m.contains("attack_success_rate") &&
                m["attack_success_rate"].get<double>() >= 0.0)
                bits.push_back("asr " + std::to_string(m["attack_success_rate"].get<double>()));
        }
        if (stage.contains("detection")) {
            const Json& d = stage["detection"];
            bits.push_back(std::string("model ") +
                           (d["model_infected"].get<bool>() ? "INFECTED" : "clean"));
            std::vector<std::string> flagged;
            for (const auto& v : d["labels"])
                if (v["infected"].get<bool>())
                    flagged.push_back(std::to_string(v["label"].get<int>()));
            if (!flagged.empty()) {
                std::string lbls = "labels ";
                for (std::size_t i = 0; i < flagged.size(); ++i)
                    lbls += (i ? "," : "") + flagged[i];
                bits.push_back(lbls);
            }
        }
        if (stage.contains("mitigation")) {
            const Json& m = stage["mitigation"];
            bits.push_back("rounds " + std::to_string(m["rounds_used"].get<int>()));
            bits.push_back(m["resolved"].get<bool>() ? "resolved" : "UNRESOLVED");
        }
        if (bits.empty()) bits.push_back("-");
        for (std::size_t i = 0; i < bits.size(); ++i) os << (i ? "; " : "") << bits[i];
        os << " |\n";
    }
    return os.str();
}

}  // namespace phyg
