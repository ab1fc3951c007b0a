#include "fluxattn/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <sstream>

#include "fluxattn/attention.hpp"
#include "fluxattn/block_index.hpp"
#include "fluxattn/features.hpp"
#include "fluxattn/parallel.hpp"
#include "fluxattn/selector.hpp"

namespace fluxattn {

std::vector<std::vector<double>> step_full_outputs(const LayerWorkload& lw,
                                                   const Matrix& queries, int group_size) {
    std::vector<std::vector<double>> outs(queries.rows());
    for (std::size_t h = 0; h < queries.rows(); ++h) {
        const auto& cache = lw.group_caches[h / std::size_t(group_size)];
        outs[h] = cache_attention(queries.row(h), cache);
    }
    return outs;
}

namespace {

std::array<double, 5> scan_budgets(std::span<const float> q, const SegmentedKvCache& cache,
                                   std::span<const double> o_full, double normalizer,
                                   const ErrorBudgetConfig& cfg) {
    std::array<double, 5> budgets{};
    for (std::size_t i = 0; i < cfg.label_blocks.size(); ++i)
        budgets[i] = min_budget(q, cache, cfg.label_blocks[i], o_full, normalizer, cfg).budget;
    return budgets;
}

std::array<double, 4> anchor_budget_features(std::span<const float> q,
                                             const SegmentedKvCache& cache,
                                             std::span<const double> o_full, double normalizer,
                                             const ErrorBudgetConfig& cfg) {
    std::array<double, 4> budgets{};
    for (std::size_t i = 0; i < cfg.selector_blocks.size(); ++i)
        budgets[i] =
            min_budget(q, cache, cfg.selector_blocks[i], o_full, normalizer, cfg).budget;
    return budgets;
}

struct LayerPrefill {
    std::vector<PrefillStats> stats; // per head
    double cross_head_max_anchor = 0.0;
};

LayerPrefill prefill_layer(const LayerWorkload& lw, int layer, int group_size,
                           const ErrorBudgetConfig& cfg, int threads) {
    const std::size_t n_heads = lw.anchor_queries.rows();
    const auto anchors = lw.anchor_queries;

    std::vector<std::vector<double>> anchor_outputs =
        step_full_outputs(lw, anchors, group_size);
    const double normalizer = max_output_norm(anchor_outputs);

    LayerPrefill pf;
    for (std::size_t h = 0; h < n_heads; ++h) {
        const auto& cache = lw.group_caches[h / std::size_t(group_size)];
        pf.cross_head_max_anchor =
            std::max(pf.cross_head_max_anchor, gpu_output_norm(anchors.row(h), cache));
    }

    pf.stats.resize(n_heads);
    parallel_for(n_heads, threads, [&](std::size_t h) {
        const auto& cache = lw.group_caches[h / std::size_t(group_size)];
        const auto q = anchors.row(h);
        const auto budget_feats =
            anchor_budget_features(q, cache, anchor_outputs[h], normalizer, cfg);
        pf.stats[h] =
            prefill_stats(layer, int(h), cache, q, budget_feats, pf.cross_head_max_anchor);
    });
    return pf;
}

void append_step_tokens(std::vector<SegmentedKvCache>& caches, const LayerWorkload& lw,
                        int step) {
    for (std::size_t g = 0; g < caches.size(); ++g)
        caches[g].append_new(lw.step_new_k[std::size_t(step)].row(g),
                             lw.step_new_v[std::size_t(step)].row(g));
}

} // namespace

ScanDataset build_scan_dataset(const Workload& w, const LabelRunConfig& cfg) {
    const int group_size = w.spec.group_size;
    const std::size_t n_heads = std::size_t(w.spec.heads);
    ScanDataset ds;
    ds.rows.resize(std::size_t(w.spec.layers) * std::size_t(w.spec.decode_steps) * n_heads);

    for (int layer = 0; layer < w.spec.layers; ++layer) {
        const LayerWorkload& lw = w.layers[std::size_t(layer)];
        std::vector<SegmentedKvCache> caches = lw.group_caches;
        const LayerPrefill pf = prefill_layer(lw, layer, group_size, cfg.budget, cfg.threads);

        for (int step = 0; step < w.spec.decode_steps; ++step) {
            const Matrix& queries = lw.step_queries[std::size_t(step)];
            std::vector<std::vector<double>> outs(n_heads);
            for (std::size_t h = 0; h < n_heads; ++h)
                outs[h] = cache_attention(queries.row(h), caches[h / std::size_t(group_size)]);
            const double normalizer = max_output_norm(outs);

            double cross_max_now = 0.0;
            for (std::size_t h = 0; h < n_heads; ++h)
                cross_max_now = std::max(
                    cross_max_now,
                    gpu_output_norm(queries.row(h), caches[h / std::size_t(group_size)]));

            parallel_for(n_heads, cfg.threads, [&](std::size_t h) {
                const auto& cache = caches[h / std::size_t(group_size)];
                const auto q = queries.row(h);
                ScanRow row;
                row.sample = cfg.sample;
                row.layer = std::uint32_t(layer);
                row.head = std::uint32_t(h);
                row.step = std::uint32_t(step);
                row.features = decode_features(q, cache, pf.stats[h], cross_max_now);
                const auto budgets = scan_budgets(q, cache, outs[h], normalizer, cfg.budget);
                for (std::size_t i = 0; i < 5; ++i) row.budgets[i] = float(budgets[i]);
                row.streaming =
                    label_streaming(q, cache, outs[h], normalizer, cfg.budget) ? 1.0f : 0.0f;
                const std::size_t slot =
                    (std::size_t(layer) * std::size_t(w.spec.decode_steps) + std::size_t(step)) *
                        n_heads +
                    h;
                ds.rows[slot] = std::move(row);
            });
            append_step_tokens(caches, lw, step);
        }
    }
    return ds;
}

std::string PlanRecord::to_json() const {
    std::ostringstream os;
    os.precision(17);
    os << "{\"step\":" << step << ",\"layer\":" << layer << ",\"group\":" << plan.group_id
       << ",\"streaming\":" << (plan.streaming_group ? "true" : "false");
    os << ",\"blk\":" << plan.block_size << ",\"volume\":" << plan.volume;
    os << ",\"candidate_volumes\":[";
    for (std::size_t i = 0; i < plan.candidate_volumes.size(); ++i)
        os << (i ? "," : "") << plan.candidate_volumes[i];
    os << "],\"budgets\":[";
    for (std::size_t i = 0; i < plan.budgets.size(); ++i) os << (i ? "," : "") << plan.budgets[i];
    os << "]}";
    return os.str();
}

double DecodeReport::mean_makespan() const {
    if (steps.empty()) return 0.0;
    double s = 0.0;
    for (const auto& st : steps) s += st.makespan;
    return s / double(steps.size());
}

double DecodeReport::mean_allocated_budget() const {
    if (steps.empty()) return 0.0;
    double s = 0.0;
    for (const auto& st : steps) s += st.mean_allocated_budget;
    return s / double(steps.size());
}

double DecodeReport::deviation_quantile_at_tau(double tau) const {
    std::size_t n = 0, ok = 0;
    for (const auto& st : steps)
        for (double d : st.head_deviations) {
            ++n;
            if (d <= tau) ++ok;
        }
    return n == 0 ? 1.0 : double(ok) / double(n);
}

DecodeReport run_decode(const Workload& w, const DecodeConfig& cfg) {
    if (cfg.source == PropertySource::Predictor && cfg.model == nullptr)
        throw std::runtime_error("no-model: predictor source requires a model");

    const int group_size = w.spec.group_size;
    const int groups = w.spec.groups();
    const std::size_t n_heads = std::size_t(w.spec.heads);
    const std::size_t head_dim = std::size_t(w.spec.head_dim);
    ErrorBudgetConfig budget_cfg;
    budget_cfg.tau = cfg.tau;
    budget_cfg.sink_tokens = w.spec.sink_tokens;
    budget_cfg.local_tokens = w.spec.local_tokens;

    struct LayerState {
        std::vector<SegmentedKvCache> caches;
        std::vector<PrefillStats> stats;
        // metadata memo per (group, candidate granularity)
        std::vector<std::array<std::unique_ptr<BlockMetadata>, 4>> meta;
    };
    std::vector<LayerState> states(std::size_t(w.spec.layers));
    for (int layer = 0; layer < w.spec.layers; ++layer) {
        auto& st = states[std::size_t(layer)];
        st.caches = w.layers[std::size_t(layer)].group_caches;
        st.meta.resize(std::size_t(groups));
        if (cfg.source == PropertySource::Predictor)
            st.stats =
                prefill_layer(w.layers[std::size_t(layer)], layer, group_size, budget_cfg, 0)
                    .stats;
    }

    auto metadata_for = [&](LayerState& st, int g, int blk) -> const BlockMetadata* {
        const auto it = std::find(kCandidateBlocks.begin(), kCandidateBlocks.end(), blk);
        if (it == kCandidateBlocks.end())
            throw std::runtime_error("invalid-granularity: blk must be one of 16/32/64/128");
        const std::size_t ci = std::size_t(it - kCandidateBlocks.begin());
        auto& slot = st.meta[std::size_t(g)][ci];
        if (!slot)
            slot = std::make_unique<BlockMetadata>(
                build_metadata(st.caches[std::size_t(g)].keys(Segment::Cpu), blk));
        return slot.get();
    };

    DecodeReport report;
    for (int step = 0; step < w.spec.decode_steps; ++step) {
        StepReport sr;
        sr.step = step;
        std::vector<SparseTask> tasks;
        double allocated_sum = 0.0;

        // per-layer full outputs kept for deviation measurement
        std::vector<std::vector<std::vector<double>>> full_outs(std::size_t(w.spec.layers));
        std::vector<double> normalizers(std::size_t(w.spec.layers), 0.0);

        for (int layer = 0; layer < w.spec.layers; ++layer) {
            auto& st = states[std::size_t(layer)];
            const LayerWorkload& lw = w.layers[std::size_t(layer)];
            const Matrix& queries = lw.step_queries[std::size_t(step)];
            const std::size_t l_cpu = st.caches.front().len(Segment::Cpu);

            const bool need_oracle =
                cfg.source == PropertySource::Oracle || cfg.measure_deviation;
            if (need_oracle) {
                auto& outs = full_outs[std::size_t(layer)];
                outs.resize(n_heads);
                for (std::size_t h = 0; h < n_heads; ++h)
                    outs[h] =
                        cache_attention(queries.row(h), st.caches[h / std::size_t(group_size)]);
                normalizers[std::size_t(layer)] = max_output_norm(outs);
            }

            // head properties
            const bool need_props =
                !cfg.full && !cfg.fixed &&
                !(cfg.source == PropertySource::Oracle &&
                  cfg.criterion == BudgetCriterion::ScoreCoverage);
            std::vector<HeadProperties> props(n_heads);
            if (!need_props) {
                // plans built directly below
            } else if (cfg.source == PropertySource::Oracle) {
                parallel_for(n_heads, 0, [&](std::size_t h) {
                    const auto& cache = st.caches[h / std::size_t(group_size)];
                    const auto q = queries.row(h);
                    const auto& o_full = full_outs[std::size_t(layer)][h];
                    const double normalizer =
                        cfg.criterion == BudgetCriterion::OutputOnly
                            ? l2_norm(o_full)
                            : normalizers[std::size_t(layer)];
                    const bool streaming =
                        label_streaming(q, cache, o_full, normalizer, budget_cfg);
                    if (streaming) {
                        props[h] = HeadProperties{0.0, 0.0, true};
                        return;
                    }
                    const auto budgets = scan_budgets(q, cache, o_full, normalizer, budget_cfg);
                    std::array<std::pair<int, double>, 4> points;
                    for (std::size_t i = 0; i < 4; ++i)
                        points[i] = {budget_cfg.label_blocks[i + 1], budgets[i + 1]};
                    props[h] = fit_curve(points, budgets[0], false).props;
                });
            } else {
                double cross_max_now = 0.0;
                for (std::size_t h = 0; h < n_heads; ++h)
                    cross_max_now = std::max(
                        cross_max_now,
                        gpu_output_norm(queries.row(h), st.caches[h / std::size_t(group_size)]));
                for (std::size_t h = 0; h < n_heads; ++h) {
                    const auto& cache = st.caches[h / std::size_t(group_size)];
                    const FeatureVector fv =
                        decode_features(queries.row(h), cache, st.stats[h], cross_max_now);
                    const Prediction p = predict(*cfg.model, fv);
                    props[h] = HeadProperties{p.bgt0, p.k, p.s_prob >= 0.5};
                }
            }

            // group plans and tasks
            for (int g = 0; g < groups; ++g) {
                const int gid = layer * groups + g;
                std::span<const HeadProperties> gp(props.data() + g * group_size,
                                                   std::size_t(group_size));
                GroupPlan plan;
                if (cfg.full) {
                    plan.group_id = gid;
                    plan.block_size = 128;
                    plan.budgets.assign(std::size_t(group_size), 1.0);
                    plan.volume = 2.0 * double(l_cpu); // whole segment, no metadata scan
                    plan.candidate_volumes.fill(plan.volume);
                } else if (cfg.fixed) {
                    plan.group_id = gid;
                    plan.block_size = cfg.fixed->first;
                    plan.budgets.assign(std::size_t(group_size), cfg.fixed->second);
                    plan.volume = volume(plan.block_size, l_cpu, plan.budgets);
                    for (std::size_t c = 0; c < kCandidateBlocks.size(); ++c)
                        plan.candidate_volumes[c] =
                            volume(kCandidateBlocks[c], l_cpu, plan.budgets);
                } else if (cfg.source == PropertySource::Oracle &&
                           cfg.criterion == BudgetCriterion::ScoreCoverage) {
                    plan.group_id = gid;
                    plan.block_size = 32;
                    const BlockMetadata* meta = metadata_for(st, g, 32);
                    for (int hg = 0; hg < group_size; ++hg) {
                        const auto q = queries.row(std::size_t(g * group_size + hg));
                        plan.budgets.push_back(
                            score_coverage_budget(q, st.caches[std::size_t(g)], *meta,
                                                  cfg.coverage)
                                .budget);
                    }
                    plan.volume = volume(plan.block_size, l_cpu, plan.budgets);
                    for (std::size_t c = 0; c < kCandidateBlocks.size(); ++c)
                        plan.candidate_volumes[c] =
                            volume(kCandidateBlocks[c], l_cpu, plan.budgets);
                } else {
                    plan = plan_group(gid, gp, l_cpu);
                }
                report.plans.push_back({step, layer, plan});

                for (double b : plan.budgets) allocated_sum += b;
                if (plan.streaming_group) {
                    ++sr.streaming_groups;
                    continue;
                }
                SparseTask task = make_task(plan, l_cpu, head_dim);
                task.cache = &st.caches[std::size_t(g)];
                task.metadata = metadata_for(st, g, plan.block_size);
                for (int hg = 0; hg < group_size; ++hg) {
                    const auto q = queries.row(std::size_t(g * group_size + hg));
                    task.queries.emplace_back(q.begin(), q.end());
                }
                sr.total_volume += plan.volume;
                tasks.push_back(std::move(task));
            }
        }

        sr.mean_allocated_budget =
            allocated_sum / double(std::size_t(w.spec.layers) * n_heads);
        sr.scheduled_tasks = tasks.size();

        TaskQueue queue = enqueue_batch(std::move(tasks));
        ScheduleReport sched;
        if (cfg.mode == RunMode::Executed) {
            std::vector<TaskResult> results;
            sched = run(queue, cfg.profile, RunMode::Executed, &results);
        } else if (cfg.policy == Policy::Priority) {
            sched = run(queue, cfg.profile, RunMode::Simulated);
        } else {
            sched = run_baseline(queue, cfg.profile, cfg.policy);
        }
        sr.makespan = sched.makespan;
        sr.accel_idle_ratio = sched.accel_idle_ratio();

        if (cfg.measure_deviation) {
            for (int layer = 0; layer < w.spec.layers; ++layer) {
                auto& st = states[std::size_t(layer)];
                const LayerWorkload& lw = w.layers[std::size_t(layer)];
                const Matrix& queries = lw.step_queries[std::size_t(step)];
                const std::size_t l_cpu = st.caches.front().len(Segment::Cpu);
                for (int g = 0; g < groups; ++g) {
                    const int gid = layer * groups + g;
                    const GroupPlan* plan = nullptr;
                    for (auto it = report.plans.rbegin(); it != report.plans.rend(); ++it)
                        if (it->plan.group_id == gid && it->step == step) {
                            plan = &it->plan;
                            break;
                        }
                    for (int hg = 0; hg < group_size; ++hg) {
                        const std::size_t h = std::size_t(g * group_size + hg);
                        const auto q = queries.row(h);
                        const auto& cache = st.caches[std::size_t(g)];
                        PartialOutput acc = default_kv_attention(q, cache);
                        if (plan && !plan->streaming_group && plan->budgets[std::size_t(hg)] > 0.0) {
                            const std::size_t kblocks = blocks_for_budget(
                                plan->budgets[std::size_t(hg)], l_cpu, plan->block_size);
                            const BlockMetadata* meta =
                                metadata_for(st, g, plan->block_size);
                            const SelectionResult sel = topk_blocks(q, *meta, kblocks);
                            detail::merge_into(acc, sparse_attention(q, cache, sel));
                        }
                        const auto& o_full = full_outs[std::size_t(layer)][h];
                        const double dev = acc.empty()
                                               ? l2_norm(o_full) / normalizers[std::size_t(layer)]
                                               : l2_distance(acc.o, o_full) /
                                                     normalizers[std::size_t(layer)];
                        sr.head_deviations.push_back(dev);
                    }
                }
            }
        }

        report.steps.push_back(std::move(sr));
        for (int layer = 0; layer < w.spec.layers; ++layer)
            append_step_tokens(states[std::size_t(layer)].caches,
                               w.layers[std::size_t(layer)], step);
    }
    return report;
}

} // namespace fluxattn
