#include <gtest/gtest.h>

#include <random>

#include <enhanceppg/postprocess.hpp>

using namespace enhanceppg;

namespace {

HRSeries series(std::vector<double> p) {
    HRSeries s;
    s.subject_id = "S1";
    s.predictions = std::move(p);
    return s;
}

// Random walk with occasional spikes, the shape clipping is meant for.
HRSeries random_series(std::mt19937& gen) {
    std::uniform_int_distribution<int> len(1, 200);
    std::normal_distribution<double> step(0.0, 3.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> p(static_cast<std::size_t>(len(gen)));
    double hr = 60.0 + 80.0 * u(gen);
    for (auto& v : p) {
        hr = std::clamp(hr + step(gen), 40.0, 200.0);
        v = u(gen) < 0.1 ? hr * (0.5 + u(gen)) : hr;
    }
    return series(std::move(p));
}

} // namespace

TEST(Clip, ForcedExamples) {
    std::vector<double> p(10, 100.0);
    p.push_back(115.0);
    EXPECT_DOUBLE_EQ(clip_postprocess(series(p)).predictions.back(), 110.0);
    p.back() = 105.0;
    EXPECT_DOUBLE_EQ(clip_postprocess(series(p)).predictions.back(), 105.0);
    p.back() = 80.0;
    EXPECT_DOUBLE_EQ(clip_postprocess(series(p)).predictions.back(), 90.0);
    const std::vector<double> flat(50, 72.5);
    EXPECT_EQ(clip_postprocess(series(flat)).predictions, flat);
}

TEST(Clip, WarmupPassesThroughAndHistoryHoldsOutputs) {
    const std::vector<double> p{100, 300, 50, 100, 200, 100, 100, 100, 100, 100, 500, 500};
    const auto out = clip_postprocess(series(p)).predictions;
    for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(out[i], p[i]);
    const double m0 = 1250.0 / 10.0;
    EXPECT_DOUBLE_EQ(out[10], m0 * 1.1);
    // the second spike is judged against a history that contains the clipped first one
    const double m1 = (1250.0 - 100.0 + out[10]) / 10.0;
    EXPECT_DOUBLE_EQ(out[11], m1 * 1.1);
}

TEST(Clip, ArgumentChecks) {
    EXPECT_THROW(clip_postprocess(series({1, 2}), 0, 0.1), ArgumentError);
    EXPECT_THROW(clip_postprocess(series({1, 2}), 10, 0.0), ArgumentError);
    EXPECT_THROW(clip_postprocess(series({1, 2}), 10, 1.0), ArgumentError);
    EXPECT_EQ(clip_postprocess(series({})).predictions.size(), 0u);
}

TEST(Clip, BoundedAndIdempotentOnRandomSeries) {
    std::mt19937 gen(2024);
    for (int trial = 0; trial < 1000; ++trial) {
        const auto in = random_series(gen);
        const auto once = clip_postprocess(in);
        const auto& y = once.predictions;
        ASSERT_EQ(y.size(), in.predictions.size());
        for (std::size_t i = 10; i < y.size(); ++i) {
            double m = 0.0;
            for (std::size_t j = i - 10; j < i; ++j) m += y[j];
            m /= 10.0;
            ASSERT_LE(std::abs(y[i] - m), 0.1 * m * (1.0 + 1e-12)) << "trial " << trial << " index " << i;
        }
        ASSERT_EQ(clip_postprocess(once).predictions, y) << "trial " << trial;
    }
}

TEST(Mae, Examples) {
    const std::vector<double> a{80, 90}, b{84, 88};
    EXPECT_DOUBLE_EQ(mae(a, a), 0.0);
    EXPECT_DOUBLE_EQ(mae(std::vector<double>{80}, std::vector<double>{84}), 4.0);
    EXPECT_DOUBLE_EQ(mae(a, b), 3.0);
    EXPECT_THROW(mae(a, std::vector<double>{1}), ArgumentError);
    EXPECT_THROW(mae(std::vector<double>{}, std::vector<double>{}), ArgumentError);
}

TEST(Report, MeanAndOrdering) {
    EXPECT_DOUBLE_EQ(aggregate_report({{"S1", 4.0}}).mean_mae, 4.0);
    const auto r = aggregate_report({{"S10", 1.0}, {"S2", 2.0}, {"S1", 3.0}});
    ASSERT_EQ(r.per_subject_mae.size(), 3u);
    EXPECT_EQ(r.per_subject_mae[0].first, "S1");
    EXPECT_EQ(r.per_subject_mae[1].first, "S2");
    EXPECT_EQ(r.per_subject_mae[2].first, "S10");
    EXPECT_NEAR(r.mean_mae, 2.0, 1e-9);
    EXPECT_THROW(aggregate_report({}), ArgumentError);
}

TEST(Report, MeanIsArithmeticMeanProperty) {
    std::mt19937 gen(5);
    std::uniform_real_distribution<double> u(0.5, 12.0);
    for (int trial = 0; trial < 200; ++trial) {
        std::map<std::string, double> m;
        const int n = 1 + trial % 15;
        double sum = 0.0;
        for (int s = 1; s <= n; ++s) sum += (m["S" + std::to_string(s)] = u(gen));
        EXPECT_NEAR(aggregate_report(m).mean_mae, sum / n, 1e-9);
    }
}

TEST(Report, TableAndChart) {
    const auto baselines = parse_baselines("Model,S1,S2,Mean\n# comment\nOld,5.00,3.00,9.99\nPartial,-,2.5,2.5\n");
    ASSERT_EQ(baselines.size(), 2u);
    EXPECT_EQ(baselines[1].per_subject.size(), 1u);
    const auto r = aggregate_report({{"S1", 3.0}, {"S2", 4.5}}, baselines);
    EXPECT_DOUBLE_EQ(r.baselines[0].mean, 4.0);  // recomputed, the file's Mean column is ignored
    const auto table = render_table(r);
    EXPECT_EQ(table,
              "Model,S1,S2,Mean\n"
              "Old,5.00,3.00,4.00\n"
              "Partial,-,2.50,2.50\n"
              "EnhancePPG,3.00,4.50,3.75\n");
    const auto svg = render_svg(r);
    EXPECT_EQ(svg.rfind("<svg", 0), 0u);
    EXPECT_NE(svg.find("3.75"), std::string::npos);
    EXPECT_NE(svg.find("Old"), std::string::npos);
    std::size_t dots = 0;
    for (auto p = svg.find("<circle"); p != std::string::npos; p = svg.find("<circle", p + 1)) ++dots;
    EXPECT_EQ(dots, 5u);
}

TEST(Report, BaselineParseErrors) {
    EXPECT_THROW(parse_baselines("Model,S1\nA,1,2\n"), FormatError);
    EXPECT_THROW(parse_baselines("Model,S1\nA,x\n"), FormatError);
    EXPECT_THROW(read_baselines("/nonexistent/baselines.csv"), LoadError);
}
