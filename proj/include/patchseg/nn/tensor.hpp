#pragma once

#include <cstddef>
#include <numeric>
#include <vector>

namespace patchseg::nn {

// Shape of one sample (no batch axis); tensors carry the batch axis first.
using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
    std::size_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

// Dense value + gradient buffer pair; both always share one shape (batch
// first, up to 5 axes).
template <typename T>
struct Tensor {
    Shape shape;
    std::vector<T> v;
    std::vector<T> g;

    std::size_t size() const { return v.size(); }
    std::size_t batch() const { return shape.empty() ? 0 : shape[0]; }
    std::size_t sample_size() const { return shape.empty() ? 0 : size() / shape[0]; }

    void resize(const Shape& s) {
        shape = s;
        v.assign(shape_size(s), T(0));
        g.assign(v.size(), T(0));
    }
    void set_batch(std::size_t nb, const Shape& per_sample) {
        Shape s;
        s.reserve(per_sample.size() + 1);
        s.push_back(nb);
        s.insert(s.end(), per_sample.begin(), per_sample.end());
        if (s != shape) resize(s);
    }
    void zero_grad() { std::fill(g.begin(), g.end(), T(0)); }
};

} // namespace patchseg::nn
