#include <gtest/gtest.h>

#include <filesystem>

#include "eitdiff/diffusion/process.hpp"
#include "eitdiff/models/train.hpp"
#include "toy.hpp"

using namespace eitdiff;

namespace {

ScoreModel toy_score(const Dataset& ds, std::uint64_t seed) {
    ScoreModel m;
    m.norm = norm_from_dataset(ds);
    m.schedule = cosine_schedule(1000);
    m.net = std::make_unique<ScoreNet>(
        ScoreNetArch{.channels = {8, 16}, .res_blocks = 1, .groups = 4, .time_dim = 16, .image = ds.grid});
    Rng rng = make_rng(seed);
    m.net->init(rng);
    return m;
}

FvcnModel toy_fvcn(const Dataset& ds, std::uint64_t seed) {
    FvcnModel m;
    m.norm = norm_from_dataset(ds);
    m.net = std::make_unique<Fvcn>(FvcnArch{.image = ds.grid,
                                            .channels = {8, 16},
                                            .hidden = 64,
                                            .outputs = static_cast<int>(ds.measurements)});
    Rng rng = make_rng(seed);
    m.net->init(rng);
    return m;
}

} // namespace

TEST(EpsScore, ConversionRoundTripIsBitExact) {
    const auto sch = cosine_schedule(1000);
    Rng rng = make_rng(1);
    std::vector<float> eps(4096);
    for (auto& e : eps) e = static_cast<float>(3.0 * standard_normal(rng));
    for (int t = 1; t <= 1000; ++t) {
        const auto s = score_from_eps(eps, t, sch);
        ASSERT_EQ(eps_from_score(s, t, sch), eps) << "t=" << t;
    }
}

TEST(TrainScore, PerfectPredictorHasZeroLoss) {
    nn::Tensor e({2, 1, 4, 4});
    Rng rng = make_rng(2);
    for (auto& v : e.data) v = static_cast<float>(standard_normal(rng));
    EXPECT_EQ(mse_loss(e, e, nullptr), 0.0);
}

TEST(TrainScore, FixedSeedGivesIdenticalLossTrace) {
    const auto ds = toy::make_dataset(12, 8, 12, 3);
    TrainOptions opts{.epochs = 5, .batch = 4, .lr = 1e-3, .seed = 9, .eval_every = 5};
    auto a = toy_score(ds, 1), b = toy_score(ds, 1);
    const auto ra = train_score(a, ds, opts), rb = train_score(b, ds, opts);
    EXPECT_EQ(ra.loss, rb.loss);
    EXPECT_EQ(ra.eval, rb.eval);
    EXPECT_EQ(ra.steps, 15);
}

TEST(TrainScore, OverfitsOneBatch) {
    // one batch of 4 records, 500 steps: the fixed evaluation batch draws
    // its own t and noise, so this measures the learned denoiser
    const auto ds = toy::make_dataset(4, 8, 12, 4);
    auto m = toy_score(ds, 2);
    TrainOptions opts{.epochs = 500, .batch = 4, .lr = 2e-3, .seed = 1, .eval_every = 100, .eval_batch = 4};
    const auto rep = train_score(m, ds, opts);
    EXPECT_EQ(rep.steps, 500);
    EXPECT_LT(rep.eval.back().second, 0.2 * rep.eval.front().second)
        << "initial " << rep.eval.front().second << " final " << rep.eval.back().second;
}

TEST(TrainScore, SixtyFourSampleCorpusReachesTenthOfInitialLoss) {
    const auto ds = toy::make_dataset(64, 16, 12, 5);
    ScoreModel m = toy_score(ds, 3);
    TrainOptions opts{.epochs = 1000, .max_steps = 2000, .batch = 16, .lr = 2e-3, .seed = 2, .eval_every = 250};
    const auto rep = train_score(m, ds, opts);
    std::cout << "eval loss: initial " << rep.eval.front().second << ", after " << rep.steps << " steps "
              << rep.eval.back().second << '\n';
    EXPECT_LT(rep.eval.back().second, 0.1 * rep.eval.front().second);
}

TEST(TrainScore, NonFiniteLossAborts) {
    auto ds = toy::make_dataset(4, 8, 12, 6);
    ds.sigma_true[3] = std::numeric_limits<float>::quiet_NaN();
    auto m = toy_score(ds, 1);
    TrainOptions opts{.epochs = 2, .batch = 4};
    EXPECT_THROW(train_score(m, ds, opts), NumericalError);
}

TEST(TrainFvcn, IdenticalSamplesOverfitAndZeroImageMapsToZeroVoltage) {
    const auto ds = toy::make_dataset(16, 8, 12, 7, /*identical=*/true);
    auto m = toy_fvcn(ds, 4);
    TrainOptions opts{.epochs = 400, .batch = 8, .lr = 1e-3, .seed = 3, .eval_every = 20, .val_fraction = 0.0,
                      .patience = 1000};
    const auto rep = train_fvcn(m, ds, opts);
    EXPECT_LT(rep.train_mse, 1e-3);

    std::vector<std::size_t> anchor{ds.size()};
    const auto b = make_fvcn_batch(ds, m.norm, anchor);
    const auto volts = m.norm.denormalize_voltage(m.net->forward(b.image).data);
    double vmax = 0.0, pred = 0.0;
    for (float v : ds.voltage) vmax = std::max(vmax, std::abs(static_cast<double>(v)));
    for (double v : volts) pred = std::max(pred, std::abs(v));
    EXPECT_LT(pred, 0.05 * vmax);
}

TEST(TrainFvcn, FixedSeedReproducesAndEarlyStops) {
    const auto ds = toy::make_dataset(20, 8, 12, 8);
    TrainOptions opts{.epochs = 200, .batch = 4, .lr = 1e-3, .seed = 5, .eval_every = 5, .val_fraction = 0.25,
                      .patience = 3};
    auto a = toy_fvcn(ds, 1), b = toy_fvcn(ds, 1);
    const auto ra = train_fvcn(a, ds, opts), rb = train_fvcn(b, ds, opts);
    EXPECT_EQ(ra.loss, rb.loss);
    EXPECT_EQ(ra.val_mse, rb.val_mse);
    EXPECT_TRUE(ra.early_stopped);
    EXPECT_LT(ra.steps, 200 * 5);
    // the returned parameters are the best seen on the validation records
    double best = ra.eval.front().second;
    for (const auto& [s, v] : ra.eval) best = std::min(best, v);
    EXPECT_EQ(ra.val_mse, ra.best_eval);
    EXPECT_LE(ra.val_mse, best * (1.0 + 1e-4));
}

TEST(Checkpoints, ModelRoundTripIsBitIdentical) {
    const auto dir = std::filesystem::temp_directory_path() / "eitdiff_test_models";
    std::filesystem::remove_all(dir);
    const auto ds = toy::make_dataset(8, 8, 12, 9);
    auto score = toy_score(ds, 5);
    auto fvcn = toy_fvcn(ds, 6);
    TrainOptions opts{.epochs = 2, .batch = 4};
    const auto rep = train_score(score, ds, opts);
    save_score_model(dir / "score", score, &rep);
    save_fvcn_model(dir / "fvcn", fvcn);
    auto s2 = load_score_model(dir / "score");
    auto f2 = load_fvcn_model(dir / "fvcn");
    EXPECT_TRUE(std::filesystem::exists(dir / "score" / "loss.csv"));
    EXPECT_EQ(s2.norm.voltage_mean, score.norm.voltage_mean);
    EXPECT_EQ(s2.schedule.alpha_bar, score.schedule.alpha_bar);

    Rng rng = make_rng(7);
    const auto batch = make_score_batch(ds, score.norm, score.schedule, {0, 1, 2}, rng);
    EXPECT_EQ(score.net->forward(batch.input, batch.t).data, s2.net->forward(batch.input, batch.t).data);
    const auto fb = make_fvcn_batch(ds, fvcn.norm, {0, 1});
    EXPECT_EQ(fvcn.net->forward(fb.image).data, f2.net->forward(fb.image).data);
    EXPECT_THROW(load_fvcn_model(dir / "score"), IoError);
    std::filesystem::remove_all(dir);
}
