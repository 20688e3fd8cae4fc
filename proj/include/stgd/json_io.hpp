#ifndef STGD_JSON_IO_HPP
#define STGD_JSON_IO_HPP

#include <string>
#include <vector>

#include "stgd/pipeline.hpp"

namespace stgd {

// --- config ---
// Flat JSON object whose keys match the Config field names; unknown keys
// are rejected with the offending name.
Config config_from_json_text(const std::string& text);
std::string config_to_json_text(const Config& cfg);
std::string config_hash(const Config& cfg);  // FNV-1a of the canonical dump

// --- scenes ---
// JSON-lines, one frame per line:
// {"t": 3, "boxes": [[x,y,z,l,w,h,heading], ...], "ids": [...],
//  "classes": [...], "occluded": [...]}
std::string scene_to_jsonl(const SceneSequence& scene);
std::vector<FrameGt> frames_from_jsonl(const std::string& text);

// --- parameters ---
// {name: {"shape": [...], "data": [...]}}; round-trips bit-exactly.
std::string params_to_json_text(const ParamStore& store);
void params_from_json_text(ParamStore& store, const std::string& text);

// --- pipeline state ---
std::string state_to_json_text(const PipelineState& state);
PipelineState state_from_json_text(const std::string& text);

// --- metrics ---
std::string metrics_to_json_text(const SequenceMetrics& metrics, const Config& cfg);

// --- training trace ---
std::string train_trace_to_jsonl(const std::vector<TrainStep>& trace);

// file helpers
std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

}  // namespace stgd

#endif  // STGD_JSON_IO_HPP
