#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "eitdiff/core/error.hpp"
#include "eitdiff/core/rng.hpp"
#include "eitdiff/diffusion/schedule.hpp"
#include "eitdiff/models/fvcn.hpp"
#include "eitdiff/models/norm.hpp"
#include "eitdiff/models/scorenet.hpp"
#include "eitdiff/nn/adam.hpp"
#include "eitdiff/nn/checkpoint.hpp"
#include "eitdiff/phantom/dataset.hpp"

namespace eitdiff {

struct TrainOptions {
    int epochs = 100;
    int max_steps = 0; // 0: run all epochs
    int batch = 16;
    double lr = 1e-3;
    std::uint64_t seed = 0;
    int eval_every = 50;
    int eval_batch = 64; // score: size of the fixed evaluation batch
    double val_fraction = 0.1; // fvcn: trailing share of records held out for early stopping
    int patience = 20;         // fvcn: evaluations without improvement before stopping
    std::function<void(int step, double loss, double eval)> progress;
};

inline nlohmann::json to_json(const TrainOptions& o) {
    return {{"epochs", o.epochs},         {"max_steps", o.max_steps},       {"batch", o.batch},
            {"lr", o.lr},                 {"seed", o.seed},                 {"eval_every", o.eval_every},
            {"eval_batch", o.eval_batch}, {"val_fraction", o.val_fraction}, {"patience", o.patience}};
}

struct TrainReport {
    std::vector<double> loss;                      // one minibatch loss per optimizer step
    std::vector<std::pair<int, double>> eval;      // (step, evaluation loss), step 0 = untrained
    int steps = 0;
    bool early_stopped = false;
    double best_eval = 0.0;
    double train_mse = 0.0; // fvcn: held-in per-entry MSE of the returned parameters
    double val_mse = 0.0;   // fvcn: validation per-entry MSE (equals train_mse when nothing is held out)
};

inline nlohmann::json to_json(const TrainReport& r) {
    nlohmann::json ev = nlohmann::json::array();
    for (const auto& [s, l] : r.eval) ev.push_back({s, l});
    return {{"steps", r.steps},   {"early_stopped", r.early_stopped}, {"best_eval", r.best_eval},
            {"eval", ev},         {"train_mse", r.train_mse},         {"val_mse", r.val_mse},
            {"initial_loss", r.loss.empty() ? 0.0 : r.loss.front()},
            {"final_loss", r.loss.empty() ? 0.0 : r.loss.back()}};
}

inline NormStats norm_from_dataset(const Dataset& ds) {
    return norm_from_json(ds.manifest.at("normalization"));
}

// Trained network plus everything needed to use it.
struct ScoreModel {
    std::unique_ptr<ScoreNet> net;
    NormStats norm;
    NoiseSchedule schedule;
    double schedule_s = 0.008;
};

struct FvcnModel {
    std::unique_ptr<Fvcn> net;
    NormStats norm;
};

namespace detail {

inline void check_loss(double loss, int step, const char* what) {
    if (!std::isfinite(loss))
        throw NumericalError(std::string(what) + ": loss became non-finite at optimizer step " + std::to_string(step) +
                             "; lower train.lr or check the dataset normalization");
}

inline void write_loss_csv(const std::filesystem::path& path, const TrainReport& r) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << "step,loss\n" << std::setprecision(9);
    for (std::size_t i = 0; i < r.loss.size(); ++i) out << i + 1 << ',' << r.loss[i] << '\n';
}

inline std::vector<nn::Tensor> snapshot(const nn::ParamList<float>& ps) {
    std::vector<nn::Tensor> out;
    for (auto* p : ps) out.push_back(p->value);
    return out;
}

inline void restore(const nn::ParamList<float>& ps, const std::vector<nn::Tensor>& snap) {
    for (std::size_t k = 0; k < ps.size(); ++k) ps[k]->value = snap[k];
}

inline int total_steps(const TrainOptions& o, std::size_t n) {
    require(o.batch >= 1 && o.epochs >= 1, "train: batch and epochs must be >= 1");
    require(o.lr > 0.0, "train: learning rate must be positive");
    const long per_epoch = static_cast<long>((n + static_cast<std::size_t>(o.batch) - 1) / static_cast<std::size_t>(o.batch));
    long steps = per_epoch * o.epochs;
    if (o.max_steps > 0) steps = std::min<long>(steps, o.max_steps);
    return static_cast<int>(steps);
}

// Epoch-wise shuffled index stream.
class BatchSampler {
public:
    BatchSampler(std::vector<std::size_t> pool, Rng& rng) : pool_(std::move(pool)), rng_(rng) {}

    std::vector<std::size_t> next(int batch) {
        std::vector<std::size_t> out;
        for (int k = 0; k < batch; ++k) {
            if (pos_ == 0) std::shuffle(pool_.begin(), pool_.end(), rng_);
            out.push_back(pool_[pos_]);
            pos_ = (pos_ + 1) % pool_.size();
        }
        return out;
    }

private:
    std::vector<std::size_t> pool_;
    Rng& rng_;
    std::size_t pos_ = 0;
};

} // namespace detail

// Noise-prediction network input for a batch: channel 0 the noised image,
// channel 1 the normalized initial reconstruction.
struct ScoreBatch {
    nn::Tensor input;
    nn::Tensor eps;
    std::vector<int> t;
};

inline ScoreBatch make_score_batch(const Dataset& ds, const NormStats& norm, const NoiseSchedule& sch,
                                   const std::vector<std::size_t>& idx, Rng& rng) {
    const int g = ds.grid, n = static_cast<int>(idx.size());
    const std::size_t px = ds.pixels();
    ScoreBatch b{nn::Tensor({n, 2, g, g}), nn::Tensor({n, 1, g, g}), std::vector<int>(idx.size())};
    std::uniform_int_distribution<int> pick_t(1, sch.T);
    for (int k = 0; k < n; ++k) {
        const auto rec = idx[static_cast<std::size_t>(k)];
        const int t = pick_t(rng);
        b.t[static_cast<std::size_t>(k)] = t;
        const double a = std::sqrt(sch.alpha_bar[static_cast<std::size_t>(t)]);
        const double s = std::sqrt(1.0 - sch.alpha_bar[static_cast<std::size_t>(t)]);
        const auto truth = ds.truth_of(rec), init = ds.initial_of(rec);
        float* x = b.input.plane(k, 0);
        float* c = b.input.plane(k, 1);
        float* e = b.eps.plane(k, 0);
        for (std::size_t i = 0; i < px; ++i) {
            const double eps = standard_normal(rng);
            e[i] = static_cast<float>(eps);
            x[i] = static_cast<float>(a * truth[i] / norm.image_scale + s * eps);
            c[i] = static_cast<float>(init[i] / norm.image_scale);
        }
    }
    return b;
}

// Mean squared error over all entries and its gradient.
inline double mse_loss(const nn::Tensor& pred, const nn::Tensor& target, nn::Tensor* grad) {
    require(pred.same_shape(target), "mse: shape mismatch " + nn::shape_string(pred.shape) + " vs " +
                                         nn::shape_string(target.shape));
    double acc = 0.0;
    const double scale = 2.0 / static_cast<double>(pred.numel());
    if (grad) *grad = nn::Tensor(pred.shape);
    for (std::size_t i = 0; i < pred.numel(); ++i) {
        const double d = static_cast<double>(pred.data[i]) - target.data[i];
        acc += d * d;
        if (grad) grad->data[i] = static_cast<float>(scale * d);
    }
    return acc / static_cast<double>(pred.numel());
}

inline double score_eval_loss(ScoreNet& net, const std::vector<ScoreBatch>& eval) {
    double acc = 0.0;
    std::size_t n = 0;
    for (const auto& b : eval) {
        acc += mse_loss(net.forward(b.input, b.t), b.eps, nullptr) * b.eps.n();
        n += static_cast<std::size_t>(b.eps.n());
    }
    return acc / static_cast<double>(n);
}

// eps-objective E|eps_theta(sigma_t, I, t) - eps|^2 with t uniform on 1..T.
// The evaluation loss is computed on a fixed batch (fixed records, t and eps)
// so successive values are comparable.
inline TrainReport train_score(ScoreModel& model, const Dataset& ds, const TrainOptions& opts) {
    require(model.net != nullptr, "train_score: no network");
    require(model.net->arch().image == ds.grid, "train_score: network image size differs from the dataset grid");
    require(ds.size() >= 1, "train_score: empty dataset");
    ScoreNet& net = *model.net;
    const auto& sch = model.schedule;
    const int steps = detail::total_steps(opts, ds.size());

    std::vector<ScoreBatch> eval;
    {
        Rng erng = make_rng(opts.seed ^ 0x5eed'e7a1ULL);
        const std::size_t m = std::min<std::size_t>(ds.size(), static_cast<std::size_t>(std::max(1, opts.eval_batch)));
        std::vector<std::size_t> idx;
        for (std::size_t k = 0; k < m; ++k) idx.push_back(k * ds.size() / m);
        for (std::size_t start = 0; start < idx.size(); start += 16) {
            std::vector<std::size_t> part(idx.begin() + static_cast<std::ptrdiff_t>(start),
                                          idx.begin() + static_cast<std::ptrdiff_t>(std::min(idx.size(), start + 16)));
            eval.push_back(make_score_batch(ds, model.norm, sch, part, erng));
        }
    }

    Rng rng = make_rng(opts.seed);
    std::vector<std::size_t> pool(ds.size());
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    detail::BatchSampler sampler(pool, rng);
    nn::Adam<float> adam(net.params(), {.lr = opts.lr});
    net.set_frozen(false);

    TrainReport rep;
    rep.eval.emplace_back(0, score_eval_loss(net, eval));
    rep.best_eval = rep.eval.back().second;
    nn::Tensor grad;
    for (int step = 1; step <= steps; ++step) {
        const auto b = make_score_batch(ds, model.norm, sch, sampler.next(opts.batch), rng);
        nn::zero_grads(adam.params());
        const double loss = mse_loss(net.forward(b.input, b.t), b.eps, &grad);
        detail::check_loss(loss, step, "train_score");
        net.backward(grad);
        adam.step();
        rep.loss.push_back(loss);
        rep.steps = step;
        if (step % opts.eval_every == 0 || step == steps) {
            const double ev = score_eval_loss(net, eval);
            detail::check_loss(ev, step, "train_score (evaluation)");
            rep.eval.emplace_back(step, ev);
            rep.best_eval = std::min(rep.best_eval, ev);
            if (opts.progress) opts.progress(step, loss, ev);
        }
    }
    return rep;
}

struct FvcnBatch {
    nn::Tensor image;
    nn::Tensor volt;
};

// Index ds.size() stands for the anchor pair (zero image, zero difference frame).
inline FvcnBatch make_fvcn_batch(const Dataset& ds, const NormStats& norm, const std::vector<std::size_t>& idx) {
    const int g = ds.grid, n = static_cast<int>(idx.size());
    const int m = static_cast<int>(ds.measurements);
    FvcnBatch b{nn::Tensor({n, 1, g, g}), nn::Tensor({n, m})};
    const std::vector<double> zero_frame(ds.measurements, 0.0);
    for (int k = 0; k < n; ++k) {
        const auto rec = idx[static_cast<std::size_t>(k)];
        float* v = b.volt.item(k);
        if (rec == ds.size()) {
            const auto z = norm.normalize_voltage(std::span<const double>(zero_frame));
            std::copy(z.begin(), z.end(), v);
            continue;
        }
        const auto truth = ds.truth_of(rec);
        float* x = b.image.item(k);
        for (std::size_t i = 0; i < ds.pixels(); ++i) x[i] = static_cast<float>(truth[i] / norm.image_scale);
        const auto z = norm.normalize_voltage(ds.voltage_of(rec));
        std::copy(z.begin(), z.end(), v);
    }
    return b;
}

// Per-entry MSE of normalized voltages over a record set.
inline double fvcn_mse(Fvcn& net, const Dataset& ds, const NormStats& norm, const std::vector<std::size_t>& idx) {
    if (idx.empty()) return 0.0;
    double acc = 0.0;
    for (std::size_t start = 0; start < idx.size(); start += 32) {
        std::vector<std::size_t> part(idx.begin() + static_cast<std::ptrdiff_t>(start),
                                      idx.begin() + static_cast<std::ptrdiff_t>(std::min(idx.size(), start + 32)));
        const auto b = make_fvcn_batch(ds, norm, part);
        acc += mse_loss(net.forward(b.image), b.volt, nullptr) * static_cast<double>(part.size());
    }
    return acc / static_cast<double>(idx.size());
}

// Minimizes the per-entry MSE between F(sigma_true) and the normalized
// frame. The trailing val_fraction of each setting block is held out; the
// parameters with the best validation loss are returned.
inline TrainReport train_fvcn(FvcnModel& model, const Dataset& ds, const TrainOptions& opts) {
    require(model.net != nullptr, "train_fvcn: no network");
    require(model.net->arch().image == ds.grid, "train_fvcn: network image size differs from the dataset grid");
    require(model.net->arch().outputs == static_cast<int>(ds.measurements),
            "train_fvcn: network output length differs from the measurement count");
    require(opts.val_fraction >= 0.0 && opts.val_fraction < 1.0, "train_fvcn: val_fraction must be in [0, 1)");
    Fvcn& net = *model.net;

    std::vector<std::size_t> train, val;
    {
        const auto& part = ds.manifest.at("partition");
        for (const auto& blk : part) {
            const auto first = blk.at("first").get<std::size_t>(), count = blk.at("count").get<std::size_t>();
            const auto hold = static_cast<std::size_t>(std::floor(opts.val_fraction * static_cast<double>(count)));
            for (std::size_t k = 0; k < count; ++k) (k < count - hold ? train : val).push_back(first + k);
        }
    }
    require(!train.empty(), "train_fvcn: no training records left after the validation split");
    std::vector<std::size_t> pool = train;
    pool.push_back(ds.size()); // anchor: background maps to no signal
    const std::vector<std::size_t>& monitor = val.empty() ? train : val;

    const int steps = detail::total_steps(opts, pool.size());
    Rng rng = make_rng(opts.seed);
    detail::BatchSampler sampler(pool, rng);
    nn::Adam<float> adam(net.params(), {.lr = opts.lr});
    net.set_frozen(false);

    TrainReport rep;
    rep.eval.emplace_back(0, fvcn_mse(net, ds, model.norm, monitor));
    rep.best_eval = rep.eval.back().second;
    auto best = detail::snapshot(adam.params());
    int stale = 0;
    nn::Tensor grad;
    for (int step = 1; step <= steps; ++step) {
        const auto b = make_fvcn_batch(ds, model.norm, sampler.next(opts.batch));
        nn::zero_grads(adam.params());
        const double loss = mse_loss(net.forward(b.image), b.volt, &grad);
        detail::check_loss(loss, step, "train_fvcn");
        net.backward(grad);
        adam.step();
        rep.loss.push_back(loss);
        rep.steps = step;
        if (step % opts.eval_every == 0 || step == steps) {
            const double ev = fvcn_mse(net, ds, model.norm, monitor);
            detail::check_loss(ev, step, "train_fvcn (validation)");
            rep.eval.emplace_back(step, ev);
            if (opts.progress) opts.progress(step, loss, ev);
            if (ev < rep.best_eval * (1.0 - 1e-4)) {
                rep.best_eval = ev;
                best = detail::snapshot(adam.params());
                stale = 0;
            } else if (++stale >= opts.patience) {
                rep.early_stopped = true;
                break;
            }
        }
    }
    detail::restore(adam.params(), best);
    rep.train_mse = fvcn_mse(net, ds, model.norm, train);
    rep.val_mse = val.empty() ? rep.train_mse : fvcn_mse(net, ds, model.norm, val);
    return rep;
}

inline void save_score_model(const std::filesystem::path& dir, ScoreModel& model, const TrainReport* report = nullptr,
                             const nlohmann::json& extra = {}) {
    nlohmann::json meta = {{"arch", to_json(model.net->arch())},
                           {"norm", to_json(model.norm)},
                           {"schedule", {{"kind", "cosine"}, {"T", model.schedule.T}, {"s", model.schedule_s}}}};
    if (report) meta["train"] = to_json(*report);
    if (!extra.is_null()) meta["extra"] = extra;
    nn::save_checkpoint(dir, "scorenet", model.net->params(), meta);
    if (report) detail::write_loss_csv(dir / "loss.csv", *report);
}

inline ScoreModel load_score_model(const std::filesystem::path& dir) {
    const auto manifest = nn::read_checkpoint_manifest(dir, "scorenet");
    const auto& meta = manifest.at("meta");
    ScoreModel m;
    m.net = std::make_unique<ScoreNet>(scorenet_arch_from_json(meta.at("arch")));
    m.norm = norm_from_json(meta.at("norm"));
    m.schedule_s = meta.at("schedule").at("s").get<double>();
    m.schedule = cosine_schedule(meta.at("schedule").at("T").get<int>(), m.schedule_s);
    nn::load_params(dir, manifest, m.net->params());
    return m;
}

inline void save_fvcn_model(const std::filesystem::path& dir, FvcnModel& model, const TrainReport* report = nullptr,
                            const nlohmann::json& extra = {}) {
    nlohmann::json meta = {{"arch", to_json(model.net->arch())}, {"norm", to_json(model.norm)}};
    if (report) meta["train"] = to_json(*report);
    if (!extra.is_null()) meta["extra"] = extra;
    nn::save_checkpoint(dir, "fvcn", model.net->params(), meta);
    if (report) detail::write_loss_csv(dir / "loss.csv", *report);
}

inline FvcnModel load_fvcn_model(const std::filesystem::path& dir) {
    const auto manifest = nn::read_checkpoint_manifest(dir, "fvcn");
    const auto& meta = manifest.at("meta");
    FvcnModel m;
    m.net = std::make_unique<Fvcn>(fvcn_arch_from_json(meta.at("arch")));
    m.norm = norm_from_json(meta.at("norm"));
    nn::load_params(dir, manifest, m.net->params());
    return m;
}

} // namespace eitdiff
