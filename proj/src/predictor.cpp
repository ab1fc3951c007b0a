#include "fluxattn/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "fluxattn/io_util.hpp"
#include "fluxattn/rng.hpp"

namespace fluxattn {

namespace {

constexpr std::size_t kHidden1 = 256;
constexpr std::size_t kHidden2 = 384;
constexpr std::size_t kOutputs = 3;

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// stable BCE with logits
double bce(double z, double y) {
    return std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
}

DenseLayer make_layer(std::size_t in, std::size_t out, Rng* rng) {
    DenseLayer l;
    l.in = in;
    l.out = out;
    l.w.assign(in * out, 0.0);
    l.b.assign(out, 0.0);
    if (rng) {
        const double scale = std::sqrt(2.0 / double(in));
        for (auto& w : l.w) w = rng->normal() * scale;
    }
    return l;
}

// C[rows x out] = A[rows x in] * W^T + b
void linear_forward(const DenseLayer& l, const std::vector<double>& a, std::size_t rows,
                    std::vector<double>& c) {
    c.assign(rows * l.out, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* ar = a.data() + r * l.in;
        double* cr = c.data() + r * l.out;
        for (std::size_t o = 0; o < l.out; ++o) {
            const double* wr = l.w.data() + o * l.in;
            double s = l.b[o];
            for (std::size_t i = 0; i < l.in; ++i) s += ar[i] * wr[i];
            cr[o] = s;
        }
    }
}

void relu_inplace(std::vector<double>& v) {
    for (auto& x : v) x = x > 0.0 ? x : 0.0;
}

// grads: dW += dC^T A, db += colsum(dC), dA = dC W (masked by relu later)
void linear_backward(const DenseLayer& l, const std::vector<double>& a,
                     const std::vector<double>& dc, std::size_t rows, DenseLayer& grad,
                     std::vector<double>* da) {
    if (da) da->assign(rows * l.in, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* ar = a.data() + r * l.in;
        const double* dcr = dc.data() + r * l.out;
        double* dar = da ? da->data() + r * l.in : nullptr;
        for (std::size_t o = 0; o < l.out; ++o) {
            const double g = dcr[o];
            if (g == 0.0) continue;
            grad.b[o] += g;
            double* gw = grad.w.data() + o * l.in;
            const double* wr = l.w.data() + o * l.in;
            for (std::size_t i = 0; i < l.in; ++i) {
                gw[i] += g * ar[i];
                if (dar) dar[i] += g * wr[i];
            }
        }
    }
}

struct BatchLoss {
    double loss = 0.0;
};

// Forward/backward over the given rows; gradients accumulated when grads
// is non-null. Loss is the batch mean of the weighted three-task loss.
BatchLoss batch_pass(const PredictorModel& model, const LabelDataset& ds,
                     std::span<const std::size_t> rows, const TrainConfig& cfg,
                     std::vector<DenseLayer>* grads) {
    const std::size_t b = rows.size();
    const auto& l1 = model.layers[0];
    const auto& l2 = model.layers[1];
    const auto& l3 = model.layers[2];

    std::vector<double> x(b * l1.in);
    for (std::size_t r = 0; r < b; ++r) {
        const FeatureVector nf = normalize(ds.rows[rows[r]].features, model.norms);
        std::copy(nf.begin(), nf.end(), x.begin() + r * l1.in);
    }

    std::vector<double> a1, a2, z;
    linear_forward(l1, x, b, a1);
    relu_inplace(a1);
    linear_forward(l2, a1, b, a2);
    relu_inplace(a2);
    linear_forward(l3, a2, b, z);

    BatchLoss out;
    std::vector<double> dz(b * kOutputs, 0.0);
    for (std::size_t r = 0; r < b; ++r) {
        const auto& row = ds.rows[rows[r]];
        const double z0 = z[r * 3 + 0], z1 = z[r * 3 + 1], z2 = z[r * 3 + 2];
        const double y0 = double(row.bgt0), y1 = double(row.k), ys = double(row.streaming);
        out.loss += cfg.w_bgt * (z0 - y0) * (z0 - y0);
        out.loss += cfg.w_k * (z1 - y1) * (z1 - y1);
        out.loss += cfg.w_s * bce(z2, ys);
        if (grads) {
            dz[r * 3 + 0] = 2.0 * cfg.w_bgt * (z0 - y0) / double(b);
            dz[r * 3 + 1] = 2.0 * cfg.w_k * (z1 - y1) / double(b);
            dz[r * 3 + 2] = cfg.w_s * (sigmoid(z2) - ys) / double(b);
        }
    }
    out.loss /= double(b);
    if (!grads) return out;

    std::vector<double> da2, da1;
    linear_backward(l3, a2, dz, b, (*grads)[2], &da2);
    for (std::size_t i = 0; i < da2.size(); ++i)
        if (a2[i] <= 0.0) da2[i] = 0.0;
    linear_backward(l2, a1, da2, b, (*grads)[1], &da1);
    for (std::size_t i = 0; i < da1.size(); ++i)
        if (a1[i] <= 0.0) da1[i] = 0.0;
    linear_backward(l1, x, da1, b, (*grads)[0], nullptr);
    return out;
}

} // namespace

PredictorModel make_model(std::uint64_t seed) {
    Rng rng(seed ^ 0xf1c5a77e5eedULL);
    PredictorModel m;
    m.layers.push_back(make_layer(kFeatureCount, kHidden1, &rng));
    m.layers.push_back(make_layer(kHidden1, kHidden2, &rng));
    m.layers.push_back(make_layer(kHidden2, kOutputs, &rng));
    m.norms.mu.assign(kFeatureCount, 0.0);
    m.norms.sigma.assign(kFeatureCount, 1.0);
    return m;
}

PredictorModel make_zero_model() {
    PredictorModel m;
    m.layers.push_back(make_layer(kFeatureCount, kHidden1, nullptr));
    m.layers.push_back(make_layer(kHidden1, kHidden2, nullptr));
    m.layers.push_back(make_layer(kHidden2, kOutputs, nullptr));
    m.norms.mu.assign(kFeatureCount, 0.0);
    m.norms.sigma.assign(kFeatureCount, 1.0);
    return m;
}

std::array<double, 3> forward_raw(const PredictorModel& model, const FeatureVector& fv) {
    std::vector<double> x(fv.begin(), fv.end());
    std::vector<double> a1, a2, z;
    linear_forward(model.layers[0], x, 1, a1);
    relu_inplace(a1);
    linear_forward(model.layers[1], a1, 1, a2);
    relu_inplace(a2);
    linear_forward(model.layers[2], a2, 1, z);
    return {z[0], z[1], z[2]};
}

Prediction forward(const PredictorModel& model, const FeatureVector& normalized_fv) {
    for (double v : normalized_fv)
        if (!std::isfinite(v)) throw std::runtime_error("non-finite: predictor input");
    const auto z = forward_raw(model, normalized_fv);
    Prediction p;
    p.bgt0 = std::clamp(z[0], 0.0, 1.0);
    p.k = z[1];
    p.s_prob = sigmoid(z[2]);
    return p;
}

Prediction predict(const PredictorModel& model, const FeatureVector& raw_fv) {
    return forward(model, normalize(raw_fv, model.norms));
}

double dataset_loss(const PredictorModel& model, const LabelDataset& rows,
                    const TrainConfig& cfg) {
    if (rows.rows.empty()) return 0.0;
    std::vector<std::size_t> idx(rows.rows.size());
    std::iota(idx.begin(), idx.end(), 0);
    return batch_pass(model, rows, idx, cfg, nullptr).loss;
}

double loss_and_gradients(const PredictorModel& model, const LabelDataset& rows,
                          const TrainConfig& cfg, std::vector<DenseLayer>& grads) {
    grads.clear();
    for (const auto& l : model.layers) grads.push_back(make_layer(l.in, l.out, nullptr));
    std::vector<std::size_t> idx(rows.rows.size());
    std::iota(idx.begin(), idx.end(), 0);
    return batch_pass(model, rows, idx, cfg, &grads).loss;
}

std::pair<std::vector<std::uint32_t>, std::vector<std::uint32_t>>
split_samples(const LabelDataset& ds, double val_fraction, std::uint64_t seed) {
    std::vector<std::uint32_t> ids;
    for (const auto& r : ds.rows) ids.push_back(r.sample);
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());

    Rng rng(seed ^ 0x5917ULL);
    rng.shuffle(ids);
    std::size_t n_val = 0;
    if (val_fraction > 0.0 && ids.size() > 1)
        n_val = std::max<std::size_t>(1, std::size_t(std::lround(val_fraction * double(ids.size()))));
    n_val = std::min(n_val, ids.size() - 1);

    std::vector<std::uint32_t> val(ids.begin(), ids.begin() + long(n_val));
    std::vector<std::uint32_t> train(ids.begin() + long(n_val), ids.end());
    std::sort(val.begin(), val.end());
    std::sort(train.begin(), train.end());
    return {train, val};
}

TrainResult train(const LabelDataset& dataset, const TrainConfig& cfg) {
    if (dataset.rows.empty()) throw std::runtime_error("no-data: empty training dataset");

    const auto [train_ids, val_ids] = split_samples(dataset, cfg.val_fraction, cfg.seed);
    const auto in_set = [](const std::vector<std::uint32_t>& ids, std::uint32_t v) {
        return std::binary_search(ids.begin(), ids.end(), v);
    };

    std::vector<std::size_t> train_rows, val_rows;
    for (std::size_t i = 0; i < dataset.rows.size(); ++i) {
        if (in_set(val_ids, dataset.rows[i].sample))
            val_rows.push_back(i);
        else
            train_rows.push_back(i);
    }
    if (train_rows.empty()) throw std::runtime_error("no-data: empty training split");

    TrainResult res;
    res.train_rows = train_rows.size();
    res.val_rows = val_rows.size();
    res.model = make_model(cfg.seed);

    // normalization statistics from the training split only
    auto& norms = res.model.norms;
    norms.mu.assign(kFeatureCount, 0.0);
    norms.sigma.assign(kFeatureCount, 0.0);
    for (std::size_t i : train_rows)
        for (std::size_t j = 0; j < kFeatureCount; ++j)
            norms.mu[j] += dataset.rows[i].features[j];
    for (auto& m : norms.mu) m /= double(train_rows.size());
    for (std::size_t i : train_rows)
        for (std::size_t j = 0; j < kFeatureCount; ++j) {
            const double d = dataset.rows[i].features[j] - norms.mu[j];
            norms.sigma[j] += d * d;
        }
    for (auto& s : norms.sigma) s = std::sqrt(s / double(train_rows.size()));

    const LabelDataset* ds = &dataset;
    auto subset_loss = [&](const std::vector<std::size_t>& rows) {
        if (rows.empty()) return 0.0;
        return batch_pass(res.model, *ds, rows, cfg, nullptr).loss;
    };
    res.val_loss_initial = subset_loss(val_rows.empty() ? train_rows : val_rows);

    // Adam
    std::vector<DenseLayer> m1, m2;
    for (const auto& l : res.model.layers) {
        m1.push_back(make_layer(l.in, l.out, nullptr));
        m2.push_back(make_layer(l.in, l.out, nullptr));
    }
    const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    Rng shuffle_rng(cfg.seed ^ 0xbadcafeULL);
    std::vector<std::size_t> order = train_rows;
    shuffle_rng.shuffle(order);
    std::size_t cursor = 0;
    const std::size_t batch = std::min(cfg.batch, order.size());
    double lr = cfg.lr;

    std::vector<DenseLayer> grads;
    for (const auto& l : res.model.layers) grads.push_back(make_layer(l.in, l.out, nullptr));

    for (std::size_t step = 1; step <= cfg.steps; ++step) {
        if (cursor + batch > order.size()) {
            shuffle_rng.shuffle(order);
            cursor = 0;
        }
        std::span<const std::size_t> rows(order.data() + cursor, batch);
        cursor += batch;

        for (auto& g : grads) {
            std::fill(g.w.begin(), g.w.end(), 0.0);
            std::fill(g.b.begin(), g.b.end(), 0.0);
        }
        const BatchLoss bl = batch_pass(res.model, *ds, rows, cfg, &grads);
        res.loss_curve.push_back(bl.loss);

        const double bc1 = 1.0 - std::pow(beta1, double(step));
        const double bc2 = 1.0 - std::pow(beta2, double(step));
        for (std::size_t li = 0; li < res.model.layers.size(); ++li) {
            auto& layer = res.model.layers[li];
            auto adam = [&](std::vector<double>& p, const std::vector<double>& g,
                            std::vector<double>& m, std::vector<double>& v) {
                for (std::size_t i = 0; i < p.size(); ++i) {
                    m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                    v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                    p[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
                }
            };
            adam(layer.w, grads[li].w, m1[li].w, m2[li].w);
            adam(layer.b, grads[li].b, m1[li].b, m2[li].b);
        }
        lr *= cfg.lr_decay;
    }

    res.val_loss_final = subset_loss(val_rows.empty() ? train_rows : val_rows);
    return res;
}

EvalMetrics evaluate(const PredictorModel& model, const LabelDataset& heldout) {
    EvalMetrics m;
    const std::size_t n = heldout.rows.size();
    if (n == 0) return m;

    std::vector<std::pair<double, int>> scored; // (s_prob, label)
    std::size_t correct = 0;
    for (const auto& row : heldout.rows) {
        const Prediction p = predict(model, row.features);
        m.mse_bgt0 += (p.bgt0 - double(row.bgt0)) * (p.bgt0 - double(row.bgt0));
        m.mse_k += (p.k - double(row.k)) * (p.k - double(row.k));
        const int label = row.streaming != 0.0f ? 1 : 0;
        if ((p.s_prob >= 0.5) == (label == 1)) ++correct;
        scored.emplace_back(p.s_prob, label);
    }
    m.mse_bgt0 /= double(n);
    m.mse_k /= double(n);
    m.s_accuracy = double(correct) / double(n);

    // rank-based AUC with tie handling
    std::sort(scored.begin(), scored.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    double rank_sum_pos = 0.0;
    std::size_t n_pos = 0;
    std::size_t i = 0;
    while (i < scored.size()) {
        std::size_t j = i;
        while (j < scored.size() && scored[j].first == scored[i].first) ++j;
        const double avg_rank = 0.5 * (double(i + 1) + double(j)); // 1-based
        for (std::size_t t = i; t < j; ++t)
            if (scored[t].second == 1) {
                rank_sum_pos += avg_rank;
                ++n_pos;
            }
        i = j;
    }
    const std::size_t n_neg = n - n_pos;
    if (n_pos > 0 && n_neg > 0)
        m.s_auc = (rank_sum_pos - double(n_pos) * double(n_pos + 1) / 2.0) /
                  (double(n_pos) * double(n_neg));
    return m;
}

namespace {
constexpr char kModelMagic[4] = {'F', 'X', 'P', '1'};
constexpr std::uint32_t kModelVersion = 1;
} // namespace

void save_model(const PredictorModel& model, const std::string& path,
                std::uint64_t input_hash) {
    BinaryWriter bw(path);
    bw.magic(kModelMagic);
    bw.u32(kModelVersion);
    bw.u64(input_hash);
    bw.u32(std::uint32_t(model.layers.size()));
    for (const auto& l : model.layers) {
        bw.u32(std::uint32_t(l.in));
        bw.u32(std::uint32_t(l.out));
    }
    for (const auto& l : model.layers) {
        for (double w : l.w) bw.f32(float(w));
        for (double b : l.b) bw.f32(float(b));
    }
    bw.u32(std::uint32_t(model.norms.mu.size()));
    for (std::size_t i = 0; i < model.norms.mu.size(); ++i) {
        bw.f32(float(model.norms.mu[i]));
        bw.f32(float(model.norms.sigma[i]));
    }
}

PredictorModel load_model(const std::string& path, std::uint64_t* input_hash) {
    BinaryReader br(path);
    br.expect_magic(kModelMagic, "version-mismatch");
    if (br.u32() != kModelVersion) throw std::runtime_error("version-mismatch: model file");
    PredictorModel m;
    const std::uint64_t hash = br.u64();
    if (input_hash) *input_hash = hash;
    const std::uint32_t n_layers = br.u32();
    std::vector<std::pair<std::uint32_t, std::uint32_t>> shapes(n_layers);
    for (auto& s : shapes) {
        s.first = br.u32();
        s.second = br.u32();
    }
    for (auto [in, out] : shapes) {
        DenseLayer l;
        l.in = in;
        l.out = out;
        l.w.resize(std::size_t(in) * out);
        l.b.resize(out);
        for (auto& w : l.w) w = double(br.f32());
        for (auto& b : l.b) b = double(br.f32());
        m.layers.push_back(std::move(l));
    }
    const std::uint32_t n_norms = br.u32();
    m.norms.mu.resize(n_norms);
    m.norms.sigma.resize(n_norms);
    for (std::uint32_t i = 0; i < n_norms; ++i) {
        m.norms.mu[i] = double(br.f32());
        m.norms.sigma[i] = double(br.f32());
    }
    return m;
}

} // namespace fluxattn
