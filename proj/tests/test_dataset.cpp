#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "eitdiff/fem/forward.hpp"
#include "eitdiff/phantom/dataset.hpp"

using namespace eitdiff;
namespace fs = std::filesystem;

namespace {

DatasetConfig small_config() {
    DatasetConfig cfg;
    cfg.settings = {setting_from_name("triangle_3")};
    cfg.per_setting = 2;
    cfg.seed = 2024;
    cfg.fine_refinement = 5;
    cfg.coarse_refinement = 3;
    cfg.grid = 32;
    return cfg;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

fs::path fresh_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("eitdiff_" + name);
    fs::remove_all(dir);
    return dir;
}

} // namespace

TEST(Dataset, RerunIsByteIdentical) {
    const auto a = fresh_dir("ds_a");
    const auto b = fresh_dir("ds_b");
    auto cfg = small_config();
    generate_dataset(cfg, a);
    cfg.threads = 2;
    generate_dataset(cfg, b);
    for (const char* f : {"manifest.json", "sigma_true.f32", "initial.f32", "voltage.f32", "phantoms.jsonl"}) {
        const auto x = slurp(a / f);
        EXPECT_FALSE(x.empty()) << f;
        EXPECT_EQ(x, slurp(b / f)) << f;
    }
}

TEST(Dataset, StoredVoltageRegeneratesFromPhantom) {
    const auto dir = fresh_dir("ds_regen");
    const auto cfg = small_config();
    generate_dataset(cfg, dir);
    const Dataset d = load_dataset(dir);
    ASSERT_EQ(d.size(), 2u);

    // independent re-solve on a freshly built mesh
    const Mesh fine = build_disk_mesh(1.0, cfg.fine_refinement, 16, cfg.electrode_coverage);
    const auto protocol = StimulationProtocol::adjacent();
    for (std::size_t i = 0; i < d.size(); ++i) {
        const Phantom p = d.phantom(i);
        const auto v2 = solve_forward(fine, phantom_to_field(p, fine), protocol);
        const auto v1 = solve_forward(fine, ConductivityField::uniform(fine.element_count(), 0.6), protocol);
        const auto dv = time_difference(v2, v1);
        const auto stored = d.voltage_of(i);
        ASSERT_EQ(stored.size(), 208u);
        double scale = 0.0;
        for (double x : dv.values) scale = std::max(scale, std::abs(x));
        EXPECT_GT(scale, 0.0);
        for (std::size_t k = 0; k < stored.size(); ++k) {
            // float storage rounds at ~6e-8 relative; the solver tolerance is 1e-10
            EXPECT_NEAR(stored[k], dv.values[k], 1e-10 + 6e-8 * std::abs(dv.values[k]));
        }
    }
}

TEST(Dataset, RecordSeedsFollowIndex) {
    const auto dir = fresh_dir("ds_seed");
    auto cfg = small_config();
    cfg.settings = {setting_from_name("circle_2"), setting_from_name("L_1")};
    generate_dataset(cfg, dir);
    const Dataset d = load_dataset(dir);
    ASSERT_EQ(d.size(), 4u);
    for (std::size_t i = 0; i < d.size(); ++i) {
        EXPECT_EQ(d.phantoms[i].at("seed").get<std::uint64_t>(), cfg.seed ^ i);
        EXPECT_EQ(d.phantoms[i].at("index").get<std::size_t>(), i);
        Rng rng = make_rng(cfg.seed ^ i);
        EXPECT_EQ(to_json(sample_phantom(setting_from_name(d.setting(i)), rng)).dump(),
                  d.phantoms[i].at("phantom").dump());
    }
    EXPECT_EQ(d.setting(0), "circle_2");
    EXPECT_EQ(d.setting(1), "circle_2");
    EXPECT_EQ(d.setting(2), "L_1");
    EXPECT_EQ(d.setting(3), "L_1");
}

TEST(Dataset, ThirteenSettingsPartition) {
    const auto dir = fresh_dir("ds_13");
    auto cfg = small_config();
    cfg.settings = standard_settings();
    cfg.per_setting = 1;
    cfg.fine_refinement = 4;
    cfg.grid = 16;
    const auto manifest = generate_dataset(cfg, dir);
    EXPECT_EQ(manifest.at("records").get<int>(), 13);
    ASSERT_EQ(manifest.at("partition").size(), 13u);
    for (std::size_t s = 0; s < 13; ++s) {
        EXPECT_EQ(manifest["partition"][s]["first"].get<std::size_t>(), s);
        EXPECT_EQ(manifest["partition"][s]["count"].get<int>(), 1);
    }
    const Dataset d = load_dataset(dir);
    const float level = static_cast<float>(0.003 - 0.6);
    for (float v : d.sigma_true) EXPECT_TRUE(v == 0.0f || v == level);
    for (float v : d.initial) EXPECT_TRUE(std::isfinite(v));
    const auto& stdev = d.manifest.at("normalization").at("voltage_std");
    ASSERT_EQ(stdev.size(), 208u);
    for (const auto& s : stdev) EXPECT_GT(s.get<double>(), 0.0);
}

TEST(Dataset, FailureLeavesPartialMarker) {
    const auto dir = fresh_dir("ds_fail");
    fs::create_directories(dir / "voltage.f32"); // a directory where a file must go
    EXPECT_THROW(generate_dataset(small_config(), dir), IoError);
    const auto manifest = io::read_json(dir / "manifest.json");
    EXPECT_FALSE(manifest.at("complete").get<bool>());
    EXPECT_EQ(manifest.at("records_written").get<int>(), 0);
    EXPECT_THROW(load_dataset(dir), IoError);
}
