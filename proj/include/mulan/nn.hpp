#pragma once

// Small MLP building blocks shared by the encoder, the schedule networks and
// the denoiser. Parameters are plain tensors; attach()/detach() flips them
// onto a fresh tape for one training step.

#include <string>
#include <vector>

#include "mulan/rng.hpp"
#include "mulan/tensor.hpp"

namespace mulan {

template <class R>
struct NamedParam {
    std::string name;
    TensorT<R>* tensor;
};

template <class R>
struct LinearT {
    TensorT<R> w;  // [in, out]
    TensorT<R> b;  // [out]

    LinearT() = default;

    LinearT(int in, int out, Rng& rng, double weight_scale = -1.0) {
        if (weight_scale < 0.0) weight_scale = 1.0 / std::sqrt(static_cast<double>(in));
        w = TensorT<R>::zeros({in, out});
        for (int64_t i = 0; i < w.size(); ++i) (*w.data)[static_cast<size_t>(i)] = static_cast<R>(rng.normal() * weight_scale);
        b = TensorT<R>::zeros({out});
    }

    TensorT<R> operator()(const TensorT<R>& x) const { return add(matmul(x, w), b); }

    void collect(const std::string& prefix, std::vector<NamedParam<R>>& out) {
        out.push_back({prefix + ".w", &w});
        out.push_back({prefix + ".b", &b});
    }
};

// MLP with swish hidden activations and a linear head.
template <class R>
struct MlpT {
    std::vector<LinearT<R>> layers;

    MlpT() = default;

    MlpT(int in, std::vector<int> hidden, int out, Rng& rng) {
        int prev = in;
        for (int h : hidden) {
            layers.emplace_back(prev, h, rng);
            prev = h;
        }
        layers.emplace_back(prev, out, rng);
    }

    TensorT<R> operator()(const TensorT<R>& x) const {
        TensorT<R> h = x;
        for (size_t i = 0; i + 1 < layers.size(); ++i) h = swish(layers[i](h));
        return layers.back()(h);
    }

    void collect(const std::string& prefix, std::vector<NamedParam<R>>& out) {
        for (size_t i = 0; i < layers.size(); ++i) layers[i].collect(prefix + ".l" + std::to_string(i), out);
    }
};

template <class R>
void attach_params(TapeT<R>& tape, const std::vector<NamedParam<R>>& params) {
    for (const auto& p : params) *p.tensor = tape.leaf(*p.tensor);
}

template <class R>
void detach_params(const std::vector<NamedParam<R>>& params) {
    for (const auto& p : params) *p.tensor = p.tensor->detached();
}

}  // namespace mulan
