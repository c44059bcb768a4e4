#pragma once

#include <optional>

#include <json.hpp>

namespace draftedit {

// Throughput accounting for one decode (or an aggregate over several).
// tokens_generated excludes PAD filler after EOS; edits never count as
// generated tokens. tps/wall_time are informational and never asserted.
struct Metrics {
    long                  tokens_generated = 0;
    long                  forwards_used    = 0;
    long                  edits_applied    = 0;
    double                tpf              = 0.0;
    double                wall_time        = 0.0;
    double                tps              = 0.0;
    std::optional<double> task_score;

    void finalize() {
        tpf = forwards_used > 0 ? static_cast<double>(tokens_generated) / forwards_used : 0.0;
        tps = wall_time > 0.0 ? static_cast<double>(tokens_generated) / wall_time : 0.0;
    }

    nlohmann::json to_json() const {
        nlohmann::json j{ { "tokens_generated", tokens_generated },
                          { "forwards_used", forwards_used },
                          { "edits_applied", edits_applied },
                          { "tpf", tpf },
                          { "wall_time", wall_time },
                          { "tps", tps } };
        if (task_score) {
            j["task_score"] = *task_score;
        } else {
            j["task_score"] = nullptr;
        }
        return j;
    }
};

}  // namespace draftedit
