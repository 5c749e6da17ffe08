#pragma once

// Deterministic synthetic image datasets (Gaussian-bump base images plus the
// frequency / intensity / mask transform variants) and the on-disk tensor
// container. Every example is generated from its own counter-keyed stream,
// so datasets are reproducible elementwise no matter how they are batched.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mulan/rng.hpp"
#include "mulan/tensor.hpp"

namespace mulan {

enum class DatasetKind { Blobs, Frequency, Intensity, Mask };

struct DatasetSpec {
    DatasetKind kind = DatasetKind::Blobs;
    int h = 8, w = 8, c = 1;
    int n_train = 4096;
    int n_eval = 256;
    uint64_t seed = 1;
    int d() const { return h * w * c; }
};

namespace detail {

// orthonormal DCT-II along one axis (direct evaluation; images are tiny)
inline std::vector<double> dct1d(const std::vector<double>& x) {
    const int n = static_cast<int>(x.size());
    std::vector<double> out(static_cast<size_t>(n), 0.0);
    for (int u = 0; u < n; ++u) {
        double acc = 0.0;
        for (int i = 0; i < n; ++i) acc += x[static_cast<size_t>(i)] * std::cos(M_PI * (i + 0.5) * u / n);
        out[static_cast<size_t>(u)] = acc * (u == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n));
    }
    return out;
}

inline std::vector<double> idct1d(const std::vector<double>& X) {
    const int n = static_cast<int>(X.size());
    std::vector<double> out(static_cast<size_t>(n), 0.0);
    for (int i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int u = 0; u < n; ++u) {
            double cu = (u == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n));
            acc += cu * X[static_cast<size_t>(u)] * std::cos(M_PI * (i + 0.5) * u / n);
        }
        out[static_cast<size_t>(i)] = acc;
    }
    return out;
}

}  // namespace detail

// separable 2-D orthonormal DCT-II of an h*w image (row-major)
inline std::vector<double> dct2d(const std::vector<double>& img, int h, int w) {
    std::vector<double> tmp(img.size());
    for (int r = 0; r < h; ++r) {
        std::vector<double> row(img.begin() + r * w, img.begin() + (r + 1) * w);
        auto t = detail::dct1d(row);
        for (int cidx = 0; cidx < w; ++cidx) tmp[static_cast<size_t>(r) * w + cidx] = t[static_cast<size_t>(cidx)];
    }
    std::vector<double> out(img.size());
    for (int cidx = 0; cidx < w; ++cidx) {
        std::vector<double> col(static_cast<size_t>(h));
        for (int r = 0; r < h; ++r) col[static_cast<size_t>(r)] = tmp[static_cast<size_t>(r) * w + cidx];
        auto t = detail::dct1d(col);
        for (int r = 0; r < h; ++r) out[static_cast<size_t>(r) * w + cidx] = t[static_cast<size_t>(r)];
    }
    return out;
}

inline std::vector<double> idct2d(const std::vector<double>& coeffs, int h, int w) {
    std::vector<double> tmp(coeffs.size());
    for (int cidx = 0; cidx < w; ++cidx) {
        std::vector<double> col(static_cast<size_t>(h));
        for (int r = 0; r < h; ++r) col[static_cast<size_t>(r)] = coeffs[static_cast<size_t>(r) * w + cidx];
        auto t = detail::idct1d(col);
        for (int r = 0; r < h; ++r) tmp[static_cast<size_t>(r) * w + cidx] = t[static_cast<size_t>(r)];
    }
    std::vector<double> out(coeffs.size());
    for (int r = 0; r < h; ++r) {
        std::vector<double> row(tmp.begin() + r * w, tmp.begin() + (r + 1) * w);
        auto t = detail::idct1d(row);
        for (int cidx = 0; cidx < w; ++cidx) out[static_cast<size_t>(r) * w + cidx] = t[static_cast<size_t>(cidx)];
    }
    return out;
}

namespace detail {

// 1-3 Gaussian bumps, normalized to [-1, 1]
inline std::vector<double> blob_image(int h, int w, Rng& rng) {
    std::vector<double> img(static_cast<size_t>(h) * w, 0.0);
    const int bumps = 1 + static_cast<int>(rng.below(3));
    for (int b = 0; b < bumps; ++b) {
        double cx = rng.uniform() * h;
        double cy = rng.uniform() * w;
        double sc = (0.08 + 0.27 * rng.uniform()) * h;
        double amp = 0.5 + 0.5 * rng.uniform();
        for (int r = 0; r < h; ++r)
            for (int cidx = 0; cidx < w; ++cidx) {
                double dx = r - cx, dy = cidx - cy;
                img[static_cast<size_t>(r) * w + cidx] += amp * std::exp(-(dx * dx + dy * dy) / (2 * sc * sc));
            }
    }
    double mx = 0.0;
    for (double v : img) mx = std::max(mx, v);
    for (auto& v : img) v = 2.0 * (v / mx) - 1.0;
    return img;
}

inline void rescale_maxabs(std::vector<double>& img) {
    double mx = 0.0;
    for (double v : img) mx = std::max(mx, std::abs(v));
    if (mx > 1e-9)
        for (auto& v : img) v /= mx;
}

}  // namespace detail

// One example of the requested kind; `index` keys the RNG stream.
inline std::vector<float> generate_example(const DatasetSpec& spec, uint64_t index) {
    std::vector<float> out(static_cast<size_t>(spec.d()));
    Rng rng = Rng::keyed(spec.seed, 0xda7a, index);
    for (int ch = 0; ch < spec.c; ++ch) {
        auto img = detail::blob_image(spec.h, spec.w, rng);
        switch (spec.kind) {
            case DatasetKind::Blobs: break;
            case DatasetKind::Frequency: {
                // zero either the low quadrant (u,v < half) or its complement
                bool drop_low = rng.uniform() < 0.5;
                auto coeffs = dct2d(img, spec.h, spec.w);
                for (int u = 0; u < spec.h; ++u)
                    for (int v = 0; v < spec.w; ++v) {
                        bool low = (u < spec.h / 2) && (v < spec.w / 2);
                        if (low == drop_low) coeffs[static_cast<size_t>(u) * spec.w + v] = 0.0;
                    }
                img = idct2d(coeffs, spec.h, spec.w);
                detail::rescale_maxabs(img);
                break;
            }
            case DatasetKind::Intensity: {
                bool low = rng.uniform() < 0.5;
                for (auto& v : img) v = low ? 0.5 * v : 0.5 * v + 0.5;
                break;
            }
            case DatasetKind::Mask: {
                bool top = rng.uniform() < 0.5;
                for (int r = 0; r < spec.h; ++r)
                    if ((r < spec.h / 2) == top)
                        for (int cidx = 0; cidx < spec.w; ++cidx) img[static_cast<size_t>(r) * spec.w + cidx] = 0.0;
                break;
            }
        }
        for (int i = 0; i < spec.h * spec.w; ++i)
            out[static_cast<size_t>(ch) * spec.h * spec.w + i] = static_cast<float>(img[static_cast<size_t>(i)]);
    }
    return out;
}

// [n, d] dataset tensor; eval examples live on streams past the train split
inline Tensor generate(const DatasetSpec& spec, int n, uint64_t index_offset = 0) {
    if (n < 1) throw std::invalid_argument("generate: need at least one example");
    auto out = Tensor::zeros({n, spec.d()});
    for (int i = 0; i < n; ++i) {
        auto row = generate_example(spec, index_offset + static_cast<uint64_t>(i));
        for (int j = 0; j < spec.d(); ++j) out.at(i, j) = row[static_cast<size_t>(j)];
    }
    return out;
}

inline Tensor generate_train(const DatasetSpec& spec) { return generate(spec, spec.n_train, 0); }
inline Tensor generate_eval(const DatasetSpec& spec) {
    return generate(spec, spec.n_eval, static_cast<uint64_t>(spec.n_train));
}

// ---- on-disk container: "MLTN" | version u16 | rank u16 | dims u32[] | f32 payload (LE) ----

namespace detail {

inline void put_u16(std::ostream& os, uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>(v >> 8)};
    os.write(reinterpret_cast<const char*>(b), 2);
}

inline void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline bool get_u16(std::istream& is, uint16_t& v) {
    unsigned char b[2];
    if (!is.read(reinterpret_cast<char*>(b), 2)) return false;
    v = static_cast<uint16_t>(b[0] | (b[1] << 8));
    return true;
}

inline bool get_u32(std::istream& is, uint32_t& v) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) return false;
    v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
    return true;
}

}  // namespace detail

inline void write_container(const std::string& path, const Tensor& t) {
    if (t.shape.empty()) throw std::invalid_argument("write_container: rank must be >= 1");
    if (t.shape.size() > 8) throw std::invalid_argument("write_container: rank too large");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("write_container: cannot open " + path);
    f.write("MLTN", 4);
    detail::put_u16(f, 1);
    detail::put_u16(f, static_cast<uint16_t>(t.shape.size()));
    for (int d : t.shape) detail::put_u32(f, static_cast<uint32_t>(d));
    for (int64_t i = 0; i < t.size(); ++i) {
        float v = (*t.data)[static_cast<size_t>(i)];
        uint32_t bits;
        static_assert(sizeof(bits) == sizeof(v));
        std::memcpy(&bits, &v, 4);
        detail::put_u32(f, bits);
    }
    if (!f) throw std::runtime_error("write_container: write failed for " + path);
}

inline Tensor read_container(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("read_container: cannot open " + path);
    char magic[4];
    if (!f.read(magic, 4) || std::string(magic, 4) != "MLTN")
        throw std::runtime_error("read_container: bad magic in " + path);
    uint16_t version = 0, rank = 0;
    if (!detail::get_u16(f, version) || version != 1)
        throw std::runtime_error("read_container: unsupported version in " + path);
    if (!detail::get_u16(f, rank) || rank == 0 || rank > 8)
        throw std::runtime_error("read_container: bad rank in " + path);
    std::vector<int> shape(rank);
    uint64_t numel = 1;
    for (auto& d : shape) {
        uint32_t v = 0;
        if (!detail::get_u32(f, v) || v == 0) throw std::runtime_error("read_container: bad dims in " + path);
        numel *= v;
        if (numel > (uint64_t(1) << 31)) throw std::runtime_error("read_container: dim overflow in " + path);
        d = static_cast<int>(v);
    }
    std::vector<float> vals(static_cast<size_t>(numel));
    for (auto& v : vals) {
        uint32_t bits = 0;
        if (!detail::get_u32(f, bits)) throw std::runtime_error("read_container: truncated payload in " + path);
        std::memcpy(&v, &bits, 4);
    }
    char extra;
    if (f.read(&extra, 1)) throw std::runtime_error("read_container: trailing bytes in " + path);
    return Tensor::from(std::move(shape), std::move(vals));
}

}  // namespace mulan
