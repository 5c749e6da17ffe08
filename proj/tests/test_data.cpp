#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "mulan/data.hpp"

using namespace mulan;

TEST_CASE("container round trip is bitwise exact") {
    Rng rng(1, 1);
    auto t = Tensor::zeros({7, 8, 3});
    for (int64_t i = 0; i < t.size(); ++i) (*t.data)[i] = float(rng.normal());
    auto path = (std::filesystem::temp_directory_path() / "mulan_rt.mltn").string();
    write_container(path, t);
    auto back = read_container(path);
    CHECK(back.shape == t.shape);
    for (int64_t i = 0; i < t.size(); ++i) CHECK((*back.data)[i] == (*t.data)[i]);
    std::filesystem::remove(path);
}

TEST_CASE("container rejects corruption") {
    auto dir = std::filesystem::temp_directory_path();
    auto path = (dir / "mulan_bad.mltn").string();
    write_container(path, Tensor::from({2, 2}, {1, 2, 3, 4}));

    // corrupt the magic
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.write("XXXX", 4);
    }
    CHECK_THROWS_WITH_AS(read_container(path), doctest::Contains("magic"), std::runtime_error);

    // truncate the payload
    write_container(path, Tensor::from({2, 2}, {1, 2, 3, 4}));
    std::filesystem::resize_file(path, std::filesystem::file_size(path) - 6);
    CHECK_THROWS_WITH_AS(read_container(path), doctest::Contains("truncated"), std::runtime_error);

    // rank 0 is rejected on write
    Tensor scalarish;
    scalarish.shape = {};
    scalarish.data = std::make_shared<std::vector<float>>(1, 0.5f);
    CHECK_THROWS(write_container(path, scalarish));
    std::filesystem::remove(path);
}

TEST_CASE("datasets are deterministic and bounded") {
    DatasetSpec spec;
    spec.kind = DatasetKind::Blobs;
    spec.h = spec.w = 8;
    spec.n_train = 16;
    spec.seed = 7;
    auto a = generate_train(spec);
    auto b = generate_train(spec);
    CHECK(a.shape == std::vector<int>{16, 64});
    for (int64_t i = 0; i < a.size(); ++i) {
        CHECK((*a.data)[i] == (*b.data)[i]);
        CHECK((*a.data)[i] >= -1.0f);
        CHECK((*a.data)[i] <= 1.0f);
    }

    // eval split uses disjoint streams
    auto ev = generate_eval(spec);
    bool differs = false;
    for (int j = 0; j < 64 && !differs; ++j) differs = ev.at(0, j) != a.at(0, j);
    CHECK(differs);

    for (auto kind : {DatasetKind::Frequency, DatasetKind::Intensity, DatasetKind::Mask}) {
        spec.kind = kind;
        auto t = generate_train(spec);
        for (int64_t i = 0; i < t.size(); ++i) {
            CHECK((*t.data)[i] >= -1.0f);
            CHECK((*t.data)[i] <= 1.0f);
        }
    }
}

TEST_CASE("intensity and mask transforms have the stated forms") {
    DatasetSpec base;
    base.kind = DatasetKind::Blobs;
    base.h = base.w = 8;
    base.seed = 11;
    DatasetSpec spec = base;
    spec.kind = DatasetKind::Intensity;

    int low_count = 0;
    const int n = 400;
    for (int i = 0; i < n; ++i) {
        auto raw = generate_example(base, i);
        auto tr = generate_example(spec, i);
        // either 0.5x or 0.5x + 0.5; decide by the first pixel
        bool low = std::abs(tr[0] - 0.5f * raw[0]) < 1e-6f;
        if (low) ++low_count;
        for (int j = 0; j < 64; ++j) {
            float want = low ? 0.5f * raw[j] : 0.5f * raw[j] + 0.5f;
            CHECK(tr[j] == doctest::Approx(want).epsilon(1e-5));
        }
    }
    CHECK(low_count > n / 2 - 60);
    CHECK(low_count < n / 2 + 60);

    spec.kind = DatasetKind::Mask;
    int top_count = 0;
    for (int i = 0; i < n; ++i) {
        auto tr = generate_example(spec, i);
        bool top_zero = true, bottom_zero = true;
        for (int r = 0; r < 4; ++r)
            for (int cidx = 0; cidx < 8; ++cidx) {
                if (tr[r * 8 + cidx] != 0.0f) top_zero = false;
                if (tr[(r + 4) * 8 + cidx] != 0.0f) bottom_zero = false;
            }
        CHECK((top_zero || bottom_zero));
        if (top_zero) ++top_count;
    }
    CHECK(top_count > n / 2 - 60);
    CHECK(top_count < n / 2 + 60);
}

TEST_CASE("frequency split concentrates spectral energy in one quadrant") {
    DatasetSpec spec;
    spec.kind = DatasetKind::Frequency;
    spec.h = spec.w = 8;
    spec.seed = 3;
    int low_kind = 0;
    const int n = 200;
    for (int i = 0; i < n; ++i) {
        auto ex = generate_example(spec, i);
        std::vector<double> img(ex.begin(), ex.end());
        auto coeffs = dct2d(img, 8, 8);
        double low_e = 0, total = 0;
        for (int u = 0; u < 8; ++u)
            for (int v = 0; v < 8; ++v) {
                double e = coeffs[u * 8 + v] * coeffs[u * 8 + v];
                total += e;
                if (u < 4 && v < 4) low_e += e;
            }
        REQUIRE(total > 0);
        double frac = low_e / total;
        CHECK((frac > 0.95 || frac < 0.05));  // all-in or all-out
        if (frac > 0.95) ++low_kind;
    }
    CHECK(low_kind > n / 2 - 45);
    CHECK(low_kind < n / 2 + 45);
}

TEST_CASE("class balance within 2% at n = 10^4") {
    DatasetSpec spec;
    spec.kind = DatasetKind::Mask;
    spec.h = spec.w = 8;
    spec.seed = 5;
    const int n = 10000;
    int top = 0;
    for (int i = 0; i < n; ++i) {
        auto tr = generate_example(spec, i);
        bool top_zero = true;
        for (int j = 0; j < 32; ++j)
            if (tr[j] != 0.0f) top_zero = false;
        if (top_zero) ++top;
    }
    CHECK(std::abs(top / double(n) - 0.5) < 0.02);
}

TEST_CASE("dct round trip and orthonormality") {
    Rng rng(9, 9);
    std::vector<double> img(64);
    for (auto& v : img) v = rng.normal();
    auto coeffs = dct2d(img, 8, 8);
    auto back = idct2d(coeffs, 8, 8);
    double e_img = 0, e_coef = 0;
    for (int i = 0; i < 64; ++i) {
        CHECK(back[i] == doctest::Approx(img[i]).epsilon(1e-9));
        e_img += img[i] * img[i];
        e_coef += coeffs[i] * coeffs[i];
    }
    CHECK(e_img == doctest::Approx(e_coef).epsilon(1e-9));  // Parseval
}
