#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <fstream>

#include <enhanceppg/loaders.hpp>
#include <enhanceppg/pickle.hpp>

#include "support.hpp"

using namespace enhanceppg;
using namespace testsupport;

namespace {

// Closed forms used by tests/data/make_fixtures.py.
double bvp_at(std::size_t i) { return std::sin(2.0 * std::numbers::pi * 1.5 * static_cast<double>(i) / 64.0); }
double acc_at(std::size_t i, int axis) { return (axis + 1) * 0.5 + 0.001 * static_cast<double>(i); }
constexpr std::size_t kFixtureSeconds = 40;

void expect_fixture_streams(const SubjectRecording& rec, double tol) {
    ASSERT_EQ(rec.ppg.samples.size(), kFixtureSeconds * 64);
    EXPECT_EQ(rec.ppg.rate_hz, 64.0);
    for (std::size_t i = 0; i < rec.ppg.samples.size(); i += 37) EXPECT_NEAR(rec.ppg.samples[i], bvp_at(i), tol);
    const Stream* axes[] = {&rec.acc_x, &rec.acc_y, &rec.acc_z};
    for (int a = 0; a < 3; ++a) {
        ASSERT_EQ(axes[a]->samples.size(), kFixtureSeconds * 32);
        EXPECT_EQ(axes[a]->rate_hz, 32.0);
        for (std::size_t i = 0; i < axes[a]->samples.size(); i += 29)
            EXPECT_NEAR(axes[a]->samples[i], acc_at(i, a), tol) << "axis " << a << " sample " << i;
    }
}

// Literal with embedded NULs, length taken from the array.
template <std::size_t N>
std::string lit(const char (&s)[N]) {
    return std::string(s, N - 1);
}

// A Python 2 era pickle: SHORT_BINSTRING keys and a BINSTRING ndarray payload.
std::string py2_pickle() {
    const double values[3] = {1.5, -2.0, 70.25};
    std::string payload(reinterpret_cast<const char*>(values), sizeof values);
    std::string b = lit("\x80\x02}q\x00(");
    b += lit("U\x07subjectq\x01U\x02S7U\x05label");
    b += lit("cnumpy.core.multiarray\n_reconstruct\nq\x02" "cnumpy\nndarray\nq\x03");
    b += lit("K\x00\x85U\x01" "b\x87Rq\x04(K\x01K\x03\x85");
    b += lit("cnumpy\ndtype\n");
    b += lit("U\x02" "f8K\x00K\x01\x87R(K\x03U\x01<NNNJ\xff\xff\xff\xffJ\xff\xff\xff\xffK\x00tb\x89T");
    b += lit("\x18\x00\x00\x00") + payload + "tbu.";
    return b;
}

} // namespace

TEST(Pickle, DecodesPython2Strings) {
    const auto s = py2_pickle();
    const auto root = pickle::load(std::span<const char>(s.data(), s.size()));
    const auto subj = pickle::find(root, "subject");
    ASSERT_TRUE(subj);
    const auto label = pickle::as_array(pickle::find(root, "label"));
    ASSERT_NE(label, nullptr);
    ASSERT_EQ(label->shape, std::vector<std::size_t>{3});
    EXPECT_EQ(label->values, (std::vector<double>{1.5, -2.0, 70.25}));
}

TEST(Pickle, TruncatedStreamIsCorruptArchive) {
    const auto s = py2_pickle();
    const auto cut = s.substr(0, s.size() / 2);
    try {
        pickle::load(std::span<const char>(cut.data(), cut.size()));
        FAIL() << "expected LoadError";
    } catch (const LoadError& e) {
        EXPECT_NE(std::string(e.what()).find("corrupt archive"), std::string::npos);
    }
}

TEST(Loaders, DaliaPickleProtocol2) {
    const auto rec = load_subject(fixture("dalia/S1"), Source::Dalia);
    EXPECT_EQ(rec.subject_id, "S1");
    EXPECT_EQ(rec.source, Source::Dalia);
    expect_fixture_streams(rec, 1e-6);  // float64 source, Fortran-ordered ACC
    ASSERT_TRUE(rec.hr_labels);
    ASSERT_EQ(rec.hr_labels->size(), 17u);
    for (std::size_t w = 0; w < 17; ++w) EXPECT_EQ((*rec.hr_labels)[w], 70.0f + static_cast<float>(w));
}

TEST(Loaders, WesadPickleProtocol4HasNoHeartRate) {
    const auto rec = load_subject(fixture("wesad/S2/S2.pkl"), Source::Wesad);
    EXPECT_EQ(rec.subject_id, "S2");
    expect_fixture_streams(rec, 1e-6);
    EXPECT_FALSE(rec.hr_labels);  // its 700 Hz affect codes are not heart rate
}

TEST(Loaders, MissingAccelerometerIsNamed) {
    try {
        load_subject(fixture("wesad_missing_acc.pkl"), Source::Wesad);
        FAIL() << "expected LoadError";
    } catch (const LoadError& e) {
        EXPECT_STREQ(e.what(), "missing channel acc_x");
    }
}

TEST(Loaders, DaliaWithoutLabelIsNamed) {
    try {
        load_subject(fixture("dalia_no_label.pkl"), Source::Dalia);
        FAIL() << "expected LoadError";
    } catch (const LoadError& e) {
        EXPECT_STREQ(e.what(), "missing field label");
    }
}

TEST(Loaders, CorruptArchiveFile) {
    ScratchDir dir("corrupt");
    const auto bytes = io::read_file(fixture("dalia/S1/S1.pkl"));
    {
        std::ofstream out(dir / "S5.pkl", std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 3));
    }
    try {
        load_subject(dir / "S5.pkl", Source::Dalia);
        FAIL() << "expected LoadError";
    } catch (const LoadError& e) {
        EXPECT_NE(std::string(e.what()).find("corrupt archive"), std::string::npos);
    }
    EXPECT_THROW(load_subject(dir / "nope.pkl", Source::Dalia), LoadError);
}

TEST(Loaders, EmpaticaCsvExport) {
    const auto rec = load_subject(fixture("unlabeled/U1"), Source::Unlabeled);
    EXPECT_EQ(rec.subject_id, "U1");
    expect_fixture_streams(rec, 1e-6);
    EXPECT_FALSE(rec.hr_labels);
}

TEST(Loaders, DiscoverAndIngest) {
    const auto dalia = discover_subjects(fixture("dalia"), Source::Dalia);
    ASSERT_EQ(dalia.size(), 1u);
    const auto ds = ingest_subject(load_subject(dalia[0], Source::Dalia));
    // 40 s at 32 Hz: floor((40 - 8) / 2) + 1 = 17 windows, matching the 17 labels
    ASSERT_EQ(ds.size(), 17u);
    EXPECT_TRUE(ds.all_labeled());
    EXPECT_EQ(*ds.windows[3].label, 73.0f);
    // ACC is already at 32 Hz and passes through resampling unchanged
    EXPECT_NEAR(ds.windows[1].channel(1)[0], acc_at(64, 0), 1e-6);
    EXPECT_EQ(discover_subjects(fixture("unlabeled"), Source::Unlabeled).size(), 1u);
}
