#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "nvwb/formats.hpp"

using namespace nvwb;

namespace {

double ugly(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    return u(rng) * std::pow(10.0, 12.0 * u(rng));
}

}  // namespace

TEST(FormatDouble, RoundTripsBitExact) {
    std::mt19937_64 rng(3);
    for (int k = 0; k < 2000; ++k) {
        const double v = ugly(rng);
        EXPECT_EQ(detail::parse_double(format_double(v), "v"), v);
    }
    EXPECT_EQ(detail::parse_double(format_double(0.1), "v"), 0.1);
    EXPECT_THROW(detail::parse_double("1.5x", "v"), ValidationError);
    EXPECT_THROW(detail::parse_double("", "v"), ValidationError);
}

TEST(NumberList, RangeListAndSingle) {
    EXPECT_EQ(parse_number_list("0:400:50").size(), 9u);
    EXPECT_EQ(parse_number_list("0:15e-3:1e-4").size(), 151u);
    EXPECT_EQ(parse_number_list("1, 2.5,4"), (std::vector<double>{1.0, 2.5, 4.0}));
    EXPECT_EQ(parse_number_list("7"), (std::vector<double>{7.0}));
    EXPECT_EQ(parse_number_list("0:10:3"), (std::vector<double>{0, 3, 6, 9}));
    EXPECT_THROW(parse_number_list(""), ValidationError);
    EXPECT_THROW(parse_number_list("0:1"), ValidationError);
    EXPECT_THROW(parse_number_list("1:0:1"), ValidationError);
    EXPECT_THROW(parse_number_list("0:1:0"), ValidationError);
}

TEST(KeyValueConfig, ParseAccessAndOverride) {
    auto cfg = KeyValueConfig::parse("# comment\n a = 1.5 \nflag = yes\nn = 12\nname = rabi\n\n");
    EXPECT_EQ(cfg.number("a"), 1.5);
    EXPECT_TRUE(cfg.boolean("flag"));
    EXPECT_EQ(cfg.integer("n"), 12);
    EXPECT_EQ(cfg.text("name"), "rabi");
    EXPECT_EQ(cfg.number_or("missing", 3.0), 3.0);
    EXPECT_THROW(cfg.text("missing"), ValidationError);
    cfg.apply_override("a=2");
    cfg.apply_override("extra = 4");
    EXPECT_EQ(cfg.number("a"), 2.0);
    EXPECT_EQ(cfg.keys().back(), "extra");
    EXPECT_THROW(cfg.apply_override("novalue"), ValidationError);
    EXPECT_EQ(KeyValueConfig::parse(cfg.serialize()).serialize(), cfg.serialize());
}

TEST(KeyValueConfig, Errors) {
    EXPECT_THROW(KeyValueConfig::parse("a = 1\na = 2\n"), ValidationError);
    EXPECT_THROW(KeyValueConfig::parse("just words\n"), ValidationError);
    EXPECT_THROW(KeyValueConfig::parse(" = 3\n"), ValidationError);
    const auto cfg = KeyValueConfig::parse("n = 1.5\nb = maybe\n");
    EXPECT_THROW(cfg.integer("n"), ValidationError);
    EXPECT_THROW(cfg.boolean("b"), ValidationError);
    EXPECT_THROW(KeyValueConfig::load("/nonexistent/dir/x.cfg"), IoError);
}

TEST(RateTableFile, RoundTripIsBitExact) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int n = 0; n < 50; ++n) {
        RateTable t = RateTable::nv_default(u(rng) * 1e7);
        t.set(7, 8, u(rng) * 1e9).set(4, 1, 1e7 + u(rng)).set(1, 3, u(rng) * 100.0);
        const auto back = parse_rate_table(format_rate_table(t));
        EXPECT_EQ(build_rate_matrix(back), build_rate_matrix(t));
        EXPECT_EQ(format_rate_table(back), format_rate_table(t));
    }
}

TEST(RateTableFile, KeysAndErrors) {
    const auto t = parse_rate_table("eta = 5e3\ngamma_sl = 65\nk_4_1 = 7.5e7\nk_1_2 = 10\n");
    EXPECT_EQ(t.pump(), 5e3);
    EXPECT_EQ(t.rate(1, 2), 10.0);
    EXPECT_EQ(t.rate(2, 1), 65.0);
    EXPECT_EQ(t.rate(4, 1), 7.5e7);
    EXPECT_EQ(t.rate(5, 2), 0.0);
    EXPECT_THROW(parse_rate_table("k_9_1 = 3\n"), ValidationError);
    EXPECT_THROW(parse_rate_table("k_4_1 = -3\n"), InvalidRateError);
    EXPECT_THROW(parse_rate_table("color = red\n"), ValidationError);
}

TEST(EffectiveRatesFile, WritesAllNineEntries) {
    const auto r = eliminate(RateTable::nv_default(5e3));
    const auto cfg = KeyValueConfig::parse(format_effective_rates(r));
    EXPECT_EQ(cfg.keys().size(), 9u);
    EXPECT_EQ(cfg.number("ktilde_2_1"), r.transfer[1][0]);
    EXPECT_EQ(cfg.number("ktilde_1_1"), r.return_rate[0]);
}

TEST(TrajectoryCsv, RoundTripIsBitExact) {
    const auto table = RateTable::nv_default(10e6);
    const auto traj = propagate(build_rate_matrix(table), PopulationState::thermal_ground(), phase_grid(3e-6, 150));
    const auto text = format_trajectory_csv(traj, table);
    const auto back = parse_trajectory_csv(text);
    ASSERT_EQ(back.times.size(), traj.times.size());
    for (std::size_t k = 0; k < traj.times.size(); ++k) {
        EXPECT_EQ(back.times[k], traj.times[k]);
        EXPECT_EQ(back.states[k].vector(), traj.states[k].vector());
    }
    EXPECT_EQ(format_trajectory_csv(back, table), text);
}

TEST(ContrastCsv, RoundTripAndJson) {
    ContrastCurve c;
    std::mt19937_64 rng(8);
    for (int k = 1; k <= 50; ++k) {
        c.windows.push_back(k * 1.1e-7);
        c.contrast.push_back(-std::abs(ugly(rng)) * 1e-13);
    }
    const auto back = parse_contrast_csv(format_contrast_csv(c));
    EXPECT_EQ(back.windows, c.windows);
    EXPECT_EQ(back.contrast, c.contrast);
    EXPECT_THROW(parse_contrast_csv("window,contrast\n1,2\n"), ValidationError);

    const auto j = readout_json(5e3, c, std::nullopt);
    EXPECT_EQ(j["eta_hz"].get<double>(), 5e3);
    EXPECT_TRUE(j["decay_time_s"].is_null());
    EXPECT_EQ(j["windows_s"].size(), 50u);
    EXPECT_EQ(j["extremum"]["c"].get<double>(), c.extremum().contrast);
    EXPECT_EQ(readout_json(5e3, c, 1.2e-3)["decay_time_s"].get<double>(), 1.2e-3);
}

TEST(DatasetCsv, RoundTripWithAndWithoutSigma) {
    Dataset d;
    std::mt19937_64 rng(9);
    for (int k = 0; k < 40; ++k) {
        d.x.push_back(2.8e9 + k * 3.3e5);
        d.y.push_back(ugly(rng));
    }
    auto f = parse_dataset_csv(format_dataset_csv(d, "Hz"));
    EXPECT_EQ(f.data.x, d.x);
    EXPECT_EQ(f.data.y, d.y);
    EXPECT_TRUE(f.data.sigma.empty());
    EXPECT_EQ(f.x_units, "Hz");
    d.sigma.assign(d.size(), 0.0137);
    f = parse_dataset_csv(format_dataset_csv(d, "s"));
    EXPECT_EQ(f.data.sigma, d.sigma);
    EXPECT_EQ(f.x_units, "s");
    EXPECT_THROW(parse_dataset_csv("x,y\n1,2,3\n"), ValidationError);
    EXPECT_THROW(parse_dataset_csv("1,2\n"), ValidationError);
}

TEST(FitJson, ModelRoundTrip) {
    FitResult r;
    r.model.kind = ModelKind::hahn;
    r.model.theta.resize(6);
    r.model.theta << -0.014, 21e-6, 0.61, 46.7e-6, 7.2e-6, -0.0214;
    r.model.revivals = 3;
    r.uncertainty = {1e-4, 2e-6, std::numeric_limits<double>::infinity(), 1e-7, 1e-7, 1e-5};
    r.converged = true;
    const auto j = fit_result_json(r, ResidualStats{0.001, 0.003, std::nullopt});
    EXPECT_TRUE(j["uncertainty"]["p"].is_null());
    EXPECT_EQ(j["revivals"].get<int>(), 3);
    const auto text = j.dump();
    const auto m = fit_model_from_json(parse_json(text, "fit"));
    EXPECT_EQ(m.kind, ModelKind::hahn);
    EXPECT_EQ(m.theta, r.model.theta);
    EXPECT_EQ(m.revivals, 3);
    EXPECT_THROW(parse_json("{", "fit"), ValidationError);
    EXPECT_THROW(fit_model_from_json(parse_json(R"({"model":"t1_exp","theta":{"C0":1}})", "fit")), ValidationError);
}

TEST(Files, WriteReadAndErrors) {
    const auto dir = std::filesystem::temp_directory_path() / "nvwb_formats_test";
    std::filesystem::create_directories(dir);
    const auto path = dir / "x.txt";
    write_text_file(path, "hello\n");
    EXPECT_EQ(read_text_file(path), "hello\n");
    std::filesystem::remove_all(dir);
    EXPECT_THROW(read_text_file(dir / "missing.txt"), IoError);
    EXPECT_THROW(write_text_file("/nonexistent/dir/x.txt", "a"), IoError);
}
