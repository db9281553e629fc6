#include "cda/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <type_traits>
#include <vector>

#include "cda/error.hpp"

namespace cda::nn {

// ---- Linear ---------------------------------------------------------------

template <typename T>
Linear<T>::Linear(const std::string& name, int in, int out) {
    weight_.allocate(name + ".weight", out, in);
    bias_.allocate(name + ".bias", 1, out);
}

template <typename T>
void Linear<T>::init(Rng& rng, double weight_std, double bias_std) {
    weight_.fill_normal(rng, weight_std);
    if (bias_std > 0.0) {
        bias_.fill_normal(rng, bias_std);
    } else {
        bias_.value.setZero();
    }
}

template <typename T>
Matrix<T> Linear<T>::forward(const Matrix<T>& x, Cache* cache) const {
    if (x.cols() != weight_.value.cols()) {
        throw ConfigError(weight_.name + ": input width " + std::to_string(x.cols()) +
                          " does not match " + std::to_string(weight_.value.cols()));
    }
    Matrix<T> y(x.rows(), weight_.value.rows());
    y.noalias() = x * weight_.value.transpose();
    y.rowwise() += bias_.value.row(0);
    if (cache) cache->input = x;
    return y;
}

template <typename T>
Matrix<T> Linear<T>::backward(const Cache& cache, const Matrix<T>& dy, bool param_grads,
                              bool input_grad) {
    if (param_grads) {
        weight_.grad.noalias() += dy.transpose() * cache.input;
        bias_.grad.row(0) += dy.colwise().sum();
    }
    if (!input_grad) return {};
    Matrix<T> dx(dy.rows(), weight_.value.cols());
    dx.noalias() = dy * weight_.value;
    return dx;
}

template <typename T>
void Linear<T>::collect(std::vector<ParamRef<T>>& out, const std::string& prefix) {
    out.push_back({prefix + weight_.name, &weight_});
    out.push_back({prefix + bias_.name, &bias_});
}

// ---- LayerNorm ------------------------------------------------------------

namespace {
constexpr double kLayerNormEps = 1e-5;
}

template <typename T>
LayerNorm<T>::LayerNorm(const std::string& name, int dim) {
    gamma_.allocate(name + ".gamma", 1, dim);
    beta_.allocate(name + ".beta", 1, dim);
    gamma_.value.setOnes();
}

template <typename T>
Matrix<T> LayerNorm<T>::forward(const Matrix<T>& x, Cache* cache) const {
    const auto n = x.rows();
    const auto d = x.cols();
    Matrix<T> xhat(n, d);
    std::vector<T> inv_std(static_cast<std::size_t>(n));
    for (Eigen::Index r = 0; r < n; ++r) {
        const T mean = x.row(r).mean();
        const T var = (x.row(r).array() - mean).square().mean();
        const T rstd = T(1) / std::sqrt(var + static_cast<T>(kLayerNormEps));
        xhat.row(r) = (x.row(r).array() - mean) * rstd;
        inv_std[static_cast<std::size_t>(r)] = rstd;
    }
    Matrix<T> y = (xhat.array().rowwise() * gamma_.value.row(0).array()).matrix();
    y.rowwise() += beta_.value.row(0);
    if (cache) {
        cache->normalized = std::move(xhat);
        cache->inv_std = std::move(inv_std);
    }
    return y;
}

template <typename T>
Matrix<T> LayerNorm<T>::backward(const Cache& cache, const Matrix<T>& dy, bool param_grads) {
    const auto& xhat = cache.normalized;
    if (param_grads) {
        gamma_.grad.row(0) += (dy.array() * xhat.array()).colwise().sum().matrix();
        beta_.grad.row(0) += dy.colwise().sum();
    }
    Matrix<T> dxhat = (dy.array().rowwise() * gamma_.value.row(0).array()).matrix();
    Matrix<T> dx(dy.rows(), dy.cols());
    for (Eigen::Index r = 0; r < dy.rows(); ++r) {
        const T mean_d = dxhat.row(r).mean();
        const T mean_dx = (dxhat.row(r).array() * xhat.row(r).array()).mean();
        dx.row(r) = cache.inv_std[static_cast<std::size_t>(r)] *
                    (dxhat.row(r).array() - mean_d - xhat.row(r).array() * mean_dx).matrix();
    }
    return dx;
}

template <typename T>
void LayerNorm<T>::collect(std::vector<ParamRef<T>>& out, const std::string& prefix) {
    out.push_back({prefix + gamma_.name, &gamma_});
    out.push_back({prefix + beta_.name, &beta_});
}

// ---- activations ----------------------------------------------------------

template <typename T>
Matrix<T> gelu(const Matrix<T>& x) {
    return x.unaryExpr([](T v) {
        return static_cast<T>(0.5) * v * (T(1) + std::erf(v * static_cast<T>(std::numbers::sqrt2 / 2)));
    });
}

template <typename T>
Matrix<T> gelu_backward(const Matrix<T>& x, const Matrix<T>& dy) {
    const T inv_sqrt2 = static_cast<T>(std::numbers::sqrt2 / 2);
    const T inv_sqrt2pi = static_cast<T>(0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
    Matrix<T> dx(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const T v = x.data()[i];
        const T cdf = static_cast<T>(0.5) * (T(1) + std::erf(v * inv_sqrt2));
        const T pdf = inv_sqrt2pi * std::exp(static_cast<T>(-0.5) * v * v);
        dx.data()[i] = dy.data()[i] * (cdf + v * pdf);
    }
    return dx;
}

template <typename T>
Matrix<T> relu(const Matrix<T>& x) {
    return x.cwiseMax(T(0));
}

template <typename T>
Matrix<T> relu_backward(const Matrix<T>& output, const Matrix<T>& dy) {
    return (output.array() > T(0)).select(dy, T(0));
}

// ---- SelfAttention --------------------------------------------------------

template <typename T>
SelfAttention<T>::SelfAttention(const std::string& name, int dim, int heads)
    : dim_(dim), heads_(heads), qkv_(name + ".qkv", dim, 3 * dim), proj_(name + ".proj", dim, dim) {
    if (heads <= 0 || dim % heads != 0) {
        throw ConfigError("embed_dim " + std::to_string(dim) + " not divisible by heads " +
                          std::to_string(heads));
    }
}

template <typename T>
void SelfAttention<T>::init(Rng& rng, double residual_scale) {
    const double fan = std::sqrt(static_cast<double>(dim_));
    qkv_.init(rng, 1.0 / fan);
    proj_.init(rng, residual_scale / fan);
}

template <typename T>
Matrix<T> SelfAttention<T>::forward(const Matrix<T>& x, Cache* cache) const {
    const auto n = x.rows();
    const int dh = dim_ / heads_;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    Matrix<T> qkv = qkv_.forward(x, cache ? &cache->qkv_cache : nullptr);
    Matrix<T> context(n, dim_);
    if (cache) cache->weights.resize(static_cast<std::size_t>(heads_));
    for (int h = 0; h < heads_; ++h) {
        const auto q = qkv.middleCols(h * dh, dh);
        const auto k = qkv.middleCols(dim_ + h * dh, dh);
        const auto v = qkv.middleCols(2 * dim_ + h * dh, dh);
        Matrix<T> scores(n, n);
        scores.noalias() = (q * k.transpose()) * scale;
        for (Eigen::Index r = 0; r < n; ++r) {
            const T m = scores.row(r).maxCoeff();
            scores.row(r) = (scores.row(r).array() - m).exp().matrix();
            scores.row(r) /= scores.row(r).sum();
        }
        context.middleCols(h * dh, dh).noalias() = scores * v;
        if (cache) cache->weights[static_cast<std::size_t>(h)] = std::move(scores);
    }
    if (cache) cache->qkv = std::move(qkv);
    return proj_.forward(context, cache ? &cache->proj_cache : nullptr);
}

template <typename T>
Matrix<T> SelfAttention<T>::backward(const Cache& cache, const Matrix<T>& dy, bool param_grads) {
    const auto n = dy.rows();
    const int dh = dim_ / heads_;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    Matrix<T> dcontext = proj_.backward(cache.proj_cache, dy, param_grads);
    Matrix<T> dqkv(n, 3 * dim_);
    for (int h = 0; h < heads_; ++h) {
        const auto q = cache.qkv.middleCols(h * dh, dh);
        const auto k = cache.qkv.middleCols(dim_ + h * dh, dh);
        const auto v = cache.qkv.middleCols(2 * dim_ + h * dh, dh);
        const Matrix<T>& a = cache.weights[static_cast<std::size_t>(h)];
        const auto dout = dcontext.middleCols(h * dh, dh);
        Matrix<T> da(n, n);
        da.noalias() = dout * v.transpose();
        dqkv.middleCols(2 * dim_ + h * dh, dh).noalias() = a.transpose() * dout;
        // softmax backward, row-wise
        Matrix<T> ds(n, n);
        for (Eigen::Index r = 0; r < n; ++r) {
            const T dot = (da.row(r).array() * a.row(r).array()).sum();
            ds.row(r) = (a.row(r).array() * (da.row(r).array() - dot)).matrix();
        }
        ds *= scale;
        dqkv.middleCols(h * dh, dh).noalias() = ds * k;
        dqkv.middleCols(dim_ + h * dh, dh).noalias() = ds.transpose() * q;
    }
    return qkv_.backward(cache.qkv_cache, dqkv, param_grads);
}

template <typename T>
void SelfAttention<T>::collect(std::vector<ParamRef<T>>& out, const std::string& prefix) {
    qkv_.collect(out, prefix);
    proj_.collect(out, prefix);
}

// ---- TransformerBlock -----------------------------------------------------

template <typename T>
TransformerBlock<T>::TransformerBlock(const std::string& name, int dim, int heads, int mlp_hidden)
    : ln1_(name + ".ln1", dim),
      ln2_(name + ".ln2", dim),
      attn_(name + ".attn", dim, heads),
      fc1_(name + ".mlp.fc1", dim, mlp_hidden),
      fc2_(name + ".mlp.fc2", mlp_hidden, dim) {}

template <typename T>
void TransformerBlock<T>::init(Rng& rng, double residual_scale) {
    attn_.init(rng, residual_scale);
    fc1_.init(rng, 1.0 / std::sqrt(static_cast<double>(fc1_.in_features())));
    fc2_.init(rng, residual_scale / std::sqrt(static_cast<double>(fc2_.in_features())));
}

template <typename T>
Matrix<T> TransformerBlock<T>::forward(const Matrix<T>& x, Cache* cache) const {
    Matrix<T> h = x + attn_.forward(ln1_.forward(x, cache ? &cache->ln1 : nullptr),
                                    cache ? &cache->attn : nullptr);
    Matrix<T> pre = fc1_.forward(ln2_.forward(h, cache ? &cache->ln2 : nullptr),
                                 cache ? &cache->fc1 : nullptr);
    Matrix<T> out = h + fc2_.forward(gelu(pre), cache ? &cache->fc2 : nullptr);
    if (cache) cache->hidden_pre = std::move(pre);
    return out;
}

template <typename T>
Matrix<T> TransformerBlock<T>::backward(const Cache& cache, const Matrix<T>& dy, bool param_grads) {
    Matrix<T> dact = fc2_.backward(cache.fc2, dy, param_grads);
    Matrix<T> dpre = gelu_backward(cache.hidden_pre, dact);
    Matrix<T> dh = dy + ln2_.backward(cache.ln2, fc1_.backward(cache.fc1, dpre, param_grads), param_grads);
    return dh + ln1_.backward(cache.ln1, attn_.backward(cache.attn, dh, param_grads), param_grads);
}

template <typename T>
void TransformerBlock<T>::collect(std::vector<ParamRef<T>>& out, const std::string& prefix) {
    ln1_.collect(out, prefix);
    attn_.collect(out, prefix);
    ln2_.collect(out, prefix);
    fc1_.collect(out, prefix);
    fc2_.collect(out, prefix);
}

// ---- Conv3d ---------------------------------------------------------------

template <typename T>
Conv3d<T>::Conv3d(const std::string& name, int in_channels, int out_channels, int kernel, int stride)
    : in_channels_(in_channels), out_channels_(out_channels), kernel_(kernel), stride_(stride) {
    if (kernel % 2 != 1 || stride < 1) throw ConfigError(name + ": kernel must be odd, stride >= 1");
    weight_.allocate(name + ".weight", out_channels, in_channels * kernel * kernel * kernel);
    bias_.allocate(name + ".bias", 1, out_channels);
}

template <typename T>
void Conv3d<T>::init(Rng& rng, double weight_std) {
    weight_.fill_normal(rng, weight_std);
    bias_.value.setZero();
}

template <typename T>
std::array<int, 3> Conv3d<T>::output_dims(const std::array<int, 3>& in) const {
    const int pad = kernel_ / 2;
    std::array<int, 3> out{};
    for (int a = 0; a < 3; ++a) out[a] = (in[a] + 2 * pad - kernel_) / stride_ + 1;
    return out;
}

namespace {

// Shared index walk for im2col (gather) and col2im (scatter-add). For each
// column row the valid output range along the fastest axis is computed once,
// so the inner loop is branch-free. Only output slices [o0_begin, o0_end) are
// covered; `columns` holds exactly those voxels.
template <bool Scatter, typename ImagePtr, typename ColumnPtr>
void im2col_walk(const std::array<int, 3>& in, const std::array<int, 3>& out, int channels, int kernel,
                 int stride, int o0_begin, int o0_end, ImagePtr image, ColumnPtr columns) {
    using T = std::remove_cvref_t<decltype(*columns)>;
    const int pad = kernel / 2;
    const std::size_t in_vox = static_cast<std::size_t>(in[0]) * in[1] * in[2];
    const std::size_t out_vox = static_cast<std::size_t>(o0_end - o0_begin) * out[1] * out[2];
    std::size_t row = 0;
    for (int c = 0; c < channels; ++c) {
        auto img = image + c * in_vox;
        for (int k0 = 0; k0 < kernel; ++k0)
            for (int k1 = 0; k1 < kernel; ++k1)
                for (int k2 = 0; k2 < kernel; ++k2, ++row) {
                    auto col = columns + row * out_vox;
                    // o2 valid iff 0 <= o2*stride - pad + k2 < in[2]
                    const int shift = k2 - pad;
                    int lo = shift >= 0 ? 0 : (-shift + stride - 1) / stride;
                    int hi = (in[2] - 1 - shift) >= 0 ? (in[2] - 1 - shift) / stride + 1 : 0;
                    lo = std::min(lo, out[2]);
                    hi = std::clamp(hi, lo, out[2]);
                    for (int o0 = o0_begin; o0 < o0_end; ++o0) {
                        const int i0 = o0 * stride - pad + k0;
                        const bool in0 = i0 >= 0 && i0 < in[0];
                        for (int o1 = 0; o1 < out[1]; ++o1) {
                            const int i1 = o1 * stride - pad + k1;
                            auto dst = col + (static_cast<std::size_t>(o0 - o0_begin) * out[1] + o1) * out[2];
                            if (!(in0 && i1 >= 0 && i1 < in[1])) {
                                if constexpr (!Scatter) std::fill(dst, dst + out[2], T(0));
                                continue;
                            }
                            auto src = img + (static_cast<std::size_t>(i0) * in[1] + i1) * in[2] + shift;
                            if constexpr (Scatter) {
                                if (stride == 1) {
                                    for (int o2 = lo; o2 < hi; ++o2) src[o2] += dst[o2];
                                } else {
                                    for (int o2 = lo; o2 < hi; ++o2) src[o2 * stride] += dst[o2];
                                }
                            } else {
                                std::fill(dst, dst + lo, T(0));
                                if (stride == 1) {
                                    std::copy(src + lo, src + hi, dst + lo);
                                } else {
                                    for (int o2 = lo; o2 < hi; ++o2) dst[o2] = src[o2 * stride];
                                }
                                std::fill(dst + hi, dst + out[2], T(0));
                            }
                        }
                    }
                }
    }
}

}  // namespace

namespace {

// Grow-only per-thread scratch for column matrices; keeps the large im2col
// buffers out of the allocator on every call.
template <typename T>
Eigen::Map<Matrix<T>> scratch(int slot, Eigen::Index rows, Eigen::Index cols) {
    thread_local std::vector<T> buffers[2];
    auto& buf = buffers[slot];
    const auto need = static_cast<std::size_t>(rows * cols);
    if (buf.size() < need) buf.resize(need);
    return Eigen::Map<Matrix<T>>(buf.data(), rows, cols);
}

}  // namespace

template <typename T>
int Conv3d<T>::slab(const std::array<int, 3>& out) const {
    // Output slices per column block, sized so the block stays cache resident.
    constexpr long kBlockFloats = 1L << 17;
    const long per_slice = static_cast<long>(fan_in()) * out[1] * out[2];
    return static_cast<int>(std::clamp<long>(kBlockFloats / std::max(per_slice, 1L), 1, out[0]));
}

template <typename T>
Matrix<T> Conv3d<T>::forward(const Matrix<T>& x, const std::array<int, 3>& dims, Cache* cache) const {
    if (x.rows() != in_channels_) {
        throw ConfigError(weight_.name + ": expected " + std::to_string(in_channels_) + " channels");
    }
    const auto out = output_dims(dims);
    const Eigen::Index plane = static_cast<Eigen::Index>(out[1]) * out[2];
    Matrix<T> y(out_channels_, out[0] * plane);
    const int step = slab(out);
    for (int o0 = 0; o0 < out[0]; o0 += step) {
        const int end = std::min(o0 + step, out[0]);
        auto columns = scratch<T>(0, fan_in(), (end - o0) * plane);
        im2col_walk<false>(dims, out, in_channels_, kernel_, stride_, o0, end, x.data(), columns.data());
        y.middleCols(o0 * plane, columns.cols()).noalias() = weight_.value * columns;
    }
    y.colwise() += bias_.value.row(0).transpose();
    if (cache) {
        cache->input = x;
        cache->in_dims = dims;
    }
    return y;
}

template <typename T>
Matrix<T> Conv3d<T>::backward(const Cache& cache, const Matrix<T>& dy, bool param_grads, bool input_grad) {
    const auto& in = cache.in_dims;
    const auto out = output_dims(in);
    const Eigen::Index plane = static_cast<Eigen::Index>(out[1]) * out[2];
    if (param_grads) bias_.grad.row(0) += dy.rowwise().sum().transpose();
    Matrix<T> dx;
    if (input_grad) dx = Matrix<T>::Zero(in_channels_, static_cast<Eigen::Index>(in[0]) * in[1] * in[2]);
    const int step = slab(out);
    for (int o0 = 0; o0 < out[0]; o0 += step) {
        const int end = std::min(o0 + step, out[0]);
        const Eigen::Index n = (end - o0) * plane;
        const auto dy_block = dy.middleCols(o0 * plane, n);
        if (param_grads) {
            auto columns = scratch<T>(0, fan_in(), n);
            im2col_walk<false>(in, out, in_channels_, kernel_, stride_, o0, end, cache.input.data(),
                               columns.data());
            weight_.grad.noalias() += dy_block * columns.transpose();
        }
        if (input_grad) {
            auto dcolumns = scratch<T>(1, fan_in(), n);
            dcolumns.noalias() = weight_.value.transpose() * dy_block;
            im2col_walk<true>(in, out, in_channels_, kernel_, stride_, o0, end, dx.data(), dcolumns.data());
        }
    }
    return dx;
}

template <typename T>
void Conv3d<T>::collect(std::vector<ParamRef<T>>& out, const std::string& prefix) {
    out.push_back({prefix + weight_.name, &weight_});
    out.push_back({prefix + bias_.name, &bias_});
}

#define CDA_NN_INSTANTIATE(T)                                                    \
    template class Linear<T>;                                                    \
    template class LayerNorm<T>;                                                 \
    template class SelfAttention<T>;                                             \
    template class TransformerBlock<T>;                                          \
    template class Conv3d<T>;                                                    \
    template Matrix<T> gelu<T>(const Matrix<T>&);                                \
    template Matrix<T> gelu_backward<T>(const Matrix<T>&, const Matrix<T>&);     \
    template Matrix<T> relu<T>(const Matrix<T>&);                                \
    template Matrix<T> relu_backward<T>(const Matrix<T>&, const Matrix<T>&);

CDA_NN_INSTANTIATE(float)
CDA_NN_INSTANTIATE(double)

#undef CDA_NN_INSTANTIATE

}  // namespace cda::nn
