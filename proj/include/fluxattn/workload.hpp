#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fluxattn/kv_cache.hpp"
#include "fluxattn/matrix.hpp"

namespace fluxattn {

enum class Archetype : int { Streaming = 0, Retrieval = 1, SinkDecoy = 2, Diffuse = 3 };

const char* archetype_name(Archetype a);

struct WorkloadSpec {
    std::uint64_t seed = 1;
    int layers = 4;
    int heads = 8;
    int group_size = 4; // query heads per KV group; 1 = MHA
    int head_dim = 64;
    int context_len = 4096;
    int sink_tokens = 64;
    int local_tokens = 256;
    int decode_steps = 8;

    // archetype mix; fractions must sum to 1
    double streaming_frac = 0.5;
    double retrieval_frac = 0.5;
    double sink_frac = 0.0;
    double diffuse_frac = 0.0;

    // planted-structure knobs
    int needles = 1;
    int needle_tokens = 16;
    double needle_strength = 10.0; // key alignment of needle tokens
    double payload_gain = 3.0;     // coherent value magnitude of planted payloads
    double local_boost = 7.0;      // shared local-direction key lift for streaming heads
    double query_jitter = 0.2;     // off-axis mix of retrieval/sink queries
    double streaming_jitter = 0.45;
    double decoy_strength = 6.0;   // sink archetype: high-score, low-value decoys
    double decoy_payload_strength = 4.0;
    int decoy_tokens = 160;
    int decoy_payload_tokens = 64;
    double query_drift = 0.98; // cosine between successive decode queries

    std::size_t cpu_tokens() const {
        return std::size_t(context_len - sink_tokens - local_tokens);
    }
    int groups() const { return heads / group_size; }

    std::string to_json() const;
    static WorkloadSpec from_json(const std::string& text);
};

struct HeadGroundTruth {
    Archetype archetype = Archetype::Diffuse;
    // token ranges inside the cpu segment holding this head's needles
    std::vector<std::pair<std::uint32_t, std::uint32_t>> needle_ranges;
};

struct LayerWorkload {
    std::vector<SegmentedKvCache> group_caches; // one per KV group, New empty
    Matrix anchor_queries;                      // [H x D], last prefill query per head
    std::vector<Matrix> step_queries;           // per decode step, [H x D]
    std::vector<Matrix> step_new_k;             // per step, [groups x D]
    std::vector<Matrix> step_new_v;
    std::vector<HeadGroundTruth> heads;
};

struct Workload {
    WorkloadSpec spec;
    std::vector<LayerWorkload> layers;

    int group_of_head(int head) const { return head / spec.group_size; }
};

Workload generate(const WorkloadSpec& spec);

void export_trace(const Workload& w, const std::string& path, std::uint64_t input_hash = 0);
Workload import_trace(const std::string& path, std::uint64_t* input_hash = nullptr);

} // namespace fluxattn
