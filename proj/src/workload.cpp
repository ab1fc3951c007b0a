#include "fluxattn/workload.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "fluxattn/io_util.hpp"
#include "fluxattn/rng.hpp"

namespace fluxattn {

namespace {

using json = nlohmann::json;

std::vector<float> unit_vec(Rng& rng, std::size_t d) {
    std::vector<float> v = rng.normal_vec(d);
    const double n = l2_norm(v);
    for (auto& x : v) x = float(double(x) / n);
    return v;
}

// sqrt(1-j^2)*base + j*noise, renormalized. Keeps cos(result, base) ~ sqrt(1-j^2).
std::vector<float> mix_direction(Rng& rng, std::span<const float> base, double j) {
    std::vector<float> n = unit_vec(rng, base.size());
    const double a = std::sqrt(std::max(0.0, 1.0 - j * j));
    std::vector<float> v(base.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = float(a * base[i] + j * n[i]);
    const double norm = l2_norm(v);
    for (auto& x : v) x = float(double(x) / norm);
    return v;
}

void scale_to(std::vector<float>& v, double target_norm) {
    const double n = l2_norm(v);
    for (auto& x : v) x = float(double(x) * target_norm / n);
}

std::vector<Archetype> layer_archetypes(const WorkloadSpec& spec, Rng& rng) {
    const int h = spec.heads;
    const auto count = [&](double f) { return int(std::lround(f * h)); };
    std::vector<Archetype> arch;
    for (int i = 0; i < count(spec.streaming_frac); ++i) arch.push_back(Archetype::Streaming);
    for (int i = 0; i < count(spec.retrieval_frac); ++i) arch.push_back(Archetype::Retrieval);
    for (int i = 0; i < count(spec.sink_frac); ++i) arch.push_back(Archetype::SinkDecoy);
    while (int(arch.size()) < h) arch.push_back(Archetype::Diffuse);
    arch.resize(std::size_t(h));
    rng.shuffle(arch);
    return arch;
}

} // namespace

const char* archetype_name(Archetype a) {
    switch (a) {
        case Archetype::Streaming: return "streaming";
        case Archetype::Retrieval: return "retrieval";
        case Archetype::SinkDecoy: return "sink";
        case Archetype::Diffuse: return "diffuse";
    }
    return "?";
}

std::string WorkloadSpec::to_json() const {
    json j;
    j["seed"] = seed;
    j["layers"] = layers;
    j["heads"] = heads;
    j["group_size"] = group_size;
    j["head_dim"] = head_dim;
    j["context_len"] = context_len;
    j["sink_tokens"] = sink_tokens;
    j["local_tokens"] = local_tokens;
    j["decode_steps"] = decode_steps;
    j["streaming_frac"] = streaming_frac;
    j["retrieval_frac"] = retrieval_frac;
    j["sink_frac"] = sink_frac;
    j["diffuse_frac"] = diffuse_frac;
    j["needles"] = needles;
    j["needle_tokens"] = needle_tokens;
    j["needle_strength"] = needle_strength;
    j["payload_gain"] = payload_gain;
    j["local_boost"] = local_boost;
    j["query_jitter"] = query_jitter;
    j["streaming_jitter"] = streaming_jitter;
    j["decoy_strength"] = decoy_strength;
    j["decoy_payload_strength"] = decoy_payload_strength;
    j["decoy_tokens"] = decoy_tokens;
    j["decoy_payload_tokens"] = decoy_payload_tokens;
    j["query_drift"] = query_drift;
    return j.dump(2);
}

WorkloadSpec WorkloadSpec::from_json(const std::string& text) {
    const json j = json::parse(text);
    WorkloadSpec s;
    s.seed = j.value("seed", s.seed);
    s.layers = j.value("layers", s.layers);
    s.heads = j.value("heads", s.heads);
    s.group_size = j.value("group_size", s.group_size);
    s.head_dim = j.value("head_dim", s.head_dim);
    s.context_len = j.value("context_len", s.context_len);
    s.sink_tokens = j.value("sink_tokens", s.sink_tokens);
    s.local_tokens = j.value("local_tokens", s.local_tokens);
    s.decode_steps = j.value("decode_steps", s.decode_steps);
    s.streaming_frac = j.value("streaming_frac", s.streaming_frac);
    s.retrieval_frac = j.value("retrieval_frac", s.retrieval_frac);
    s.sink_frac = j.value("sink_frac", s.sink_frac);
    s.diffuse_frac = j.value("diffuse_frac", s.diffuse_frac);
    s.needles = j.value("needles", s.needles);
    s.needle_tokens = j.value("needle_tokens", s.needle_tokens);
    s.needle_strength = j.value("needle_strength", s.needle_strength);
    s.payload_gain = j.value("payload_gain", s.payload_gain);
    s.local_boost = j.value("local_boost", s.local_boost);
    s.query_jitter = j.value("query_jitter", s.query_jitter);
    s.streaming_jitter = j.value("streaming_jitter", s.streaming_jitter);
    s.decoy_strength = j.value("decoy_strength", s.decoy_strength);
    s.decoy_payload_strength = j.value("decoy_payload_strength", s.decoy_payload_strength);
    s.decoy_tokens = j.value("decoy_tokens", s.decoy_tokens);
    s.decoy_payload_tokens = j.value("decoy_payload_tokens", s.decoy_payload_tokens);
    s.query_drift = j.value("query_drift", s.query_drift);
    return s;
}

namespace {

void validate_spec(const WorkloadSpec& spec) {
    if (spec.context_len <= spec.sink_tokens + spec.local_tokens)
        throw std::runtime_error("infeasible-spec: context shorter than sink+local defaults");
    if (spec.heads <= 0 || spec.group_size <= 0 || spec.heads % spec.group_size != 0)
        throw std::runtime_error("infeasible-spec: heads must be a multiple of group_size");
    const double fsum =
        spec.streaming_frac + spec.retrieval_frac + spec.sink_frac + spec.diffuse_frac;
    if (std::abs(fsum - 1.0) > 1e-9)
        throw std::runtime_error("infeasible-spec: archetype fractions must sum to 1");
    if (spec.query_drift < -1.0 || spec.query_drift > 1.0)
        throw std::runtime_error("infeasible-spec: query drift outside [-1, 1]");
    if (spec.sink_frac > 0.0 &&
        spec.cpu_tokens() < std::size_t(spec.decoy_tokens + spec.decoy_payload_tokens + 256))
        throw std::runtime_error("infeasible-spec: cpu segment too small for decoy runs");
    if (spec.retrieval_frac > 0.0 &&
        spec.cpu_tokens() < std::size_t(spec.needles * spec.needle_tokens))
        throw std::runtime_error("infeasible-spec: cpu segment too small for needles");
}

struct GroupTensors {
    Matrix k, v; // [context_len x dim], position order: sink | cpu | local
};

} // namespace

Workload generate(const WorkloadSpec& spec) {
    validate_spec(spec);
    const std::size_t d = std::size_t(spec.head_dim);
    const std::size_t l = std::size_t(spec.context_len);
    const std::size_t l_cpu = spec.cpu_tokens();
    const std::size_t cpu0 = std::size_t(spec.sink_tokens);
    const std::size_t local0 = cpu0 + l_cpu;
    const double qnorm = std::sqrt(double(d));

    Workload w;
    w.spec = spec;
    Rng base(spec.seed);

    for (int layer = 0; layer < spec.layers; ++layer) {
        Rng rng_l = base.fork(std::uint64_t(layer));
        LayerWorkload lw;
        std::vector<Archetype> arch = layer_archetypes(spec, rng_l);
        lw.heads.resize(std::size_t(spec.heads));
        lw.anchor_queries = Matrix(std::size_t(spec.heads), d);

        for (int g = 0; g < spec.groups(); ++g) {
            Rng rng = rng_l.fork(std::uint64_t(g) + 1000);
            GroupTensors t;
            t.k = Matrix(l, d);
            t.v = Matrix(l, d);
            for (std::size_t i = 0; i < l; ++i) {
                for (std::size_t j = 0; j < d; ++j) {
                    t.k(i, j) = float(rng.normal());
                    t.v(i, j) = float(rng.normal());
                }
            }

            const int h0 = g * spec.group_size;
            const bool has_streaming = std::any_of(
                arch.begin() + h0, arch.begin() + h0 + spec.group_size,
                [](Archetype a) { return a == Archetype::Streaming; });

            // shared local direction; lifts local-window scores for queries
            // aligned with it
            const std::vector<float> w_local = unit_vec(rng, d);
            if (has_streaming) {
                for (std::size_t i = local0; i < l; ++i)
                    for (std::size_t j = 0; j < d; ++j)
                        t.k(i, j) += float(spec.local_boost * w_local[j]);
            }

            const std::size_t needle_slots = std::max<std::size_t>(1, l_cpu / 128);
            int retrieval_idx = 0;
            for (int hg = 0; hg < spec.group_size; ++hg) {
                const int head = h0 + hg;
                Rng hrng = rng.fork(std::uint64_t(hg) + 7);
                HeadGroundTruth& gt = lw.heads[std::size_t(head)];
                gt.archetype = arch[std::size_t(head)];
                std::vector<float> q;

                switch (gt.archetype) {
                    case Archetype::Streaming: {
                        q = mix_direction(hrng, w_local, spec.streaming_jitter);
                        break;
                    }
                    case Archetype::Retrieval: {
                        const std::vector<float> u = unit_vec(hrng, d);
                        const double alpha = spec.needle_strength * hrng.uniform(0.85, 1.15);
                        const double gamma = spec.payload_gain * hrng.uniform(0.85, 1.15);
                        for (int nn = 0; nn < spec.needles; ++nn) {
                            const int slot = retrieval_idx++;
                            std::size_t start =
                                std::size_t(slot) % needle_slots * 128 +
                                std::size_t(slot) / needle_slots * std::size_t(spec.needle_tokens);
                            start = std::min(start, l_cpu - std::size_t(spec.needle_tokens));
                            const std::size_t end = start + std::size_t(spec.needle_tokens);
                            const std::vector<float> w_pay = unit_vec(hrng, d);
                            for (std::size_t i = cpu0 + start; i < cpu0 + end; ++i) {
                                for (std::size_t j = 0; j < d; ++j) {
                                    t.k(i, j) += float(alpha * u[j]);
                                    t.v(i, j) = float(gamma * w_pay[j] + 0.3 * hrng.normal());
                                }
                            }
                            gt.needle_ranges.emplace_back(std::uint32_t(start), std::uint32_t(end));
                        }
                        q = mix_direction(hrng, u, spec.query_jitter);
                        break;
                    }
                    case Archetype::SinkDecoy: {
                        const std::vector<float> u = unit_vec(hrng, d);
                        const std::size_t dstart = std::min<std::size_t>(128, l_cpu / 4);
                        const std::size_t pstart =
                            std::min<std::size_t>(384, l_cpu - std::size_t(spec.decoy_payload_tokens));
                        for (std::size_t i = cpu0 + dstart;
                             i < cpu0 + dstart + std::size_t(spec.decoy_tokens); ++i) {
                            for (std::size_t j = 0; j < d; ++j) {
                                t.k(i, j) += float(spec.decoy_strength * u[j]);
                                t.v(i, j) *= 0.1f;
                            }
                        }
                        const std::vector<float> w_pay = unit_vec(hrng, d);
                        for (std::size_t i = cpu0 + pstart;
                             i < cpu0 + pstart + std::size_t(spec.decoy_payload_tokens); ++i) {
                            for (std::size_t j = 0; j < d; ++j) {
                                t.k(i, j) += float(spec.decoy_payload_strength * u[j]);
                                t.v(i, j) = float(spec.payload_gain * w_pay[j] + 0.3 * hrng.normal());
                            }
                        }
                        // classic sink texture on the default sink segment
                        for (std::size_t i = 0; i < cpu0; ++i)
                            for (std::size_t j = 0; j < d; ++j) t.v(i, j) *= 0.1f;
                        q = mix_direction(hrng, u, spec.query_jitter);
                        break;
                    }
                    case Archetype::Diffuse: {
                        q = unit_vec(hrng, d);
                        break;
                    }
                }
                scale_to(q, qnorm);
                std::copy(q.begin(), q.end(), lw.anchor_queries.row(std::size_t(head)).begin());
            }

            lw.group_caches.emplace_back(
                t.k.slice_rows(0, cpu0), t.v.slice_rows(0, cpu0),
                t.k.slice_rows(cpu0, local0), t.v.slice_rows(cpu0, local0),
                t.k.slice_rows(local0, l), t.v.slice_rows(local0, l));
        }

        // decode trace: drifting queries plus one appended token per group
        Rng drng = rng_l.fork(0xdecull);
        Matrix prev = lw.anchor_queries;
        const double rho = spec.query_drift;
        for (int step = 0; step < spec.decode_steps; ++step) {
            Matrix qs(std::size_t(spec.heads), d);
            for (int head = 0; head < spec.heads; ++head) {
                std::vector<float> noise = unit_vec(drng, d);
                std::vector<float> q(d);
                const auto p = prev.row(std::size_t(head));
                for (std::size_t j = 0; j < d; ++j)
                    q[j] = float(rho * p[j] +
                                 std::sqrt(1.0 - rho * rho) * qnorm * noise[j]);
                scale_to(q, qnorm);
                std::copy(q.begin(), q.end(), qs.row(std::size_t(head)).begin());
            }
            Matrix nk(std::size_t(spec.groups()), d), nv(std::size_t(spec.groups()), d);
            for (int g = 0; g < spec.groups(); ++g)
                for (std::size_t j = 0; j < d; ++j) {
                    nk(std::size_t(g), j) = float(drng.normal());
                    nv(std::size_t(g), j) = float(drng.normal());
                }
            prev = qs;
            lw.step_queries.push_back(std::move(qs));
            lw.step_new_k.push_back(std::move(nk));
            lw.step_new_v.push_back(std::move(nv));
        }
        w.layers.push_back(std::move(lw));
    }
    return w;
}

// ---------------------------------------------------------------------------
// FXT1 trace format (all fields little-endian):
//   magic "FXT1" | version u32 | input_hash u64 | seed u64
//   layers, heads, group_size, head_dim, context_len, sink, local, steps (u32)
//   per layer:
//     per head: archetype u32, needle_count u32, (start u32, end u32)*
//     per group: K [context_len x dim] f32, V [context_len x dim] f32
//     anchor queries [heads x dim] f32
//     per step: queries [heads x dim] f32,
//               new K [groups x dim] f32, new V [groups x dim] f32
// ---------------------------------------------------------------------------

namespace {
constexpr char kTraceMagic[4] = {'F', 'X', 'T', '1'};
constexpr std::uint32_t kTraceVersion = 1;

void write_matrix(BinaryWriter& bw, const Matrix& m) { bw.f32_span(m.data(), m.size()); }

Matrix read_matrix(BinaryReader& br, std::size_t rows, std::size_t cols) {
    Matrix m(rows, cols);
    br.f32_span(m.data(), m.size());
    return m;
}
} // namespace

void export_trace(const Workload& w, const std::string& path, std::uint64_t input_hash) {
    const auto& s = w.spec;
    BinaryWriter bw(path);
    bw.magic(kTraceMagic);
    bw.u32(kTraceVersion);
    bw.u64(input_hash);
    bw.u64(s.seed);
    for (int v : {s.layers, s.heads, s.group_size, s.head_dim, s.context_len, s.sink_tokens,
                  s.local_tokens, s.decode_steps})
        bw.u32(std::uint32_t(v));

    const std::size_t d = std::size_t(s.head_dim);
    for (const auto& lw : w.layers) {
        for (const auto& gt : lw.heads) {
            bw.u32(std::uint32_t(int(gt.archetype)));
            bw.u32(std::uint32_t(gt.needle_ranges.size()));
            for (auto [a, b] : gt.needle_ranges) {
                bw.u32(a);
                bw.u32(b);
            }
        }
        for (const auto& cache : lw.group_caches) {
            // position order: sink | cpu | local
            for (auto seg : {Segment::Sink, Segment::Cpu, Segment::Local})
                write_matrix(bw, cache.keys(seg));
            for (auto seg : {Segment::Sink, Segment::Cpu, Segment::Local})
                write_matrix(bw, cache.values(seg));
        }
        write_matrix(bw, lw.anchor_queries);
        for (int step = 0; step < s.decode_steps; ++step) {
            write_matrix(bw, lw.step_queries[std::size_t(step)]);
            write_matrix(bw, lw.step_new_k[std::size_t(step)]);
            write_matrix(bw, lw.step_new_v[std::size_t(step)]);
        }
        (void)d;
    }
}

Workload import_trace(const std::string& path, std::uint64_t* input_hash) {
    BinaryReader br(path);
    br.expect_magic(kTraceMagic, "corrupt-trace");
    if (br.u32() != kTraceVersion) throw std::runtime_error("corrupt-trace: bad version");

    WorkloadSpec s;
    const std::uint64_t hash = br.u64();
    if (input_hash) *input_hash = hash;
    s.seed = br.u64();
    s.layers = int(br.u32());
    s.heads = int(br.u32());
    s.group_size = int(br.u32());
    s.head_dim = int(br.u32());
    s.context_len = int(br.u32());
    s.sink_tokens = int(br.u32());
    s.local_tokens = int(br.u32());
    s.decode_steps = int(br.u32());
    if (s.layers <= 0 || s.heads <= 0 || s.group_size <= 0 || s.head_dim <= 0 ||
        s.context_len <= s.sink_tokens + s.local_tokens || s.heads % s.group_size != 0)
        throw std::runtime_error("corrupt-trace: implausible dimensions");

    const std::size_t d = std::size_t(s.head_dim);
    const std::size_t l = std::size_t(s.context_len);
    const std::size_t cpu0 = std::size_t(s.sink_tokens);
    const std::size_t local0 = l - std::size_t(s.local_tokens);

    Workload w;
    w.spec = s;
    for (int layer = 0; layer < s.layers; ++layer) {
        LayerWorkload lw;
        lw.heads.resize(std::size_t(s.heads));
        for (auto& gt : lw.heads) {
            gt.archetype = Archetype(int(br.u32()));
            const std::uint32_t n = br.u32();
            for (std::uint32_t i = 0; i < n; ++i) {
                const std::uint32_t a = br.u32();
                const std::uint32_t b = br.u32();
                gt.needle_ranges.emplace_back(a, b);
            }
        }
        for (int g = 0; g < s.groups(); ++g) {
            Matrix ks = read_matrix(br, cpu0, d);
            Matrix kc = read_matrix(br, local0 - cpu0, d);
            Matrix kl = read_matrix(br, l - local0, d);
            Matrix vs = read_matrix(br, cpu0, d);
            Matrix vc = read_matrix(br, local0 - cpu0, d);
            Matrix vl = read_matrix(br, l - local0, d);
            lw.group_caches.emplace_back(std::move(ks), std::move(vs), std::move(kc),
                                         std::move(vc), std::move(kl), std::move(vl));
        }
        lw.anchor_queries = read_matrix(br, std::size_t(s.heads), d);
        for (int step = 0; step < s.decode_steps; ++step) {
            lw.step_queries.push_back(read_matrix(br, std::size_t(s.heads), d));
            lw.step_new_k.push_back(read_matrix(br, std::size_t(s.groups()), d));
            lw.step_new_v.push_back(read_matrix(br, std::size_t(s.groups()), d));
        }
        w.layers.push_back(std::move(lw));
    }
    if (!br.eof_clean()) throw std::runtime_error("corrupt-trace: trailing bytes");
    return w;
}

} // namespace fluxattn
