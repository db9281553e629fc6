#pragma once

// Hand-differentiated building blocks. Every layer owns its parameters,
// records what backward needs in a caller-held cache, and accumulates
// parameter gradients into Parameter::grad. Instantiated for float (training)
// and double (gradient checks).

#include <Eigen/Core>
#include <array>
#include <string>
#include <vector>

#include "cda/rng.hpp"

namespace cda::nn {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Row = Eigen::Matrix<T, 1, Eigen::Dynamic>;

template <typename T>
struct Parameter {
    std::string name;
    Matrix<T> value;
    Matrix<T> grad;
    Matrix<T> velocity;  // momentum slot

    void allocate(std::string n, Eigen::Index rows, Eigen::Index cols) {
        name = std::move(n);
        value = Matrix<T>::Zero(rows, cols);
        grad = Matrix<T>::Zero(rows, cols);
        velocity = Matrix<T>::Zero(rows, cols);
    }
    void fill_normal(Rng& rng, double stddev) {
        for (Eigen::Index i = 0; i < value.size(); ++i) {
            value.data()[i] = static_cast<T>(rng.normal(0.0, stddev));
        }
    }
    void zero_grad() { grad.setZero(); }
};

// Named reference handed out by parameter enumeration.
template <typename T>
struct ParamRef {
    std::string name;
    Parameter<T>* param;
};

template <typename T>
class Linear {
public:
    struct Cache {
        Matrix<T> input;
    };

    Linear() = default;
    Linear(const std::string& name, int in, int out);

    void init(Rng& rng, double weight_std, double bias_std = 0.0);

    // x: [N, in] -> [N, out]
    Matrix<T> forward(const Matrix<T>& x, Cache* cache) const;
    Matrix<T> backward(const Cache& cache, const Matrix<T>& dy, bool param_grads,
                       bool input_grad = true);

    void collect(std::vector<ParamRef<T>>& out, const std::string& prefix);

    int in_features() const { return static_cast<int>(weight_.value.cols()); }
    int out_features() const { return static_cast<int>(weight_.value.rows()); }

    Parameter<T>& weight() { return weight_; }
    Parameter<T>& bias() { return bias_; }

private:
    Parameter<T> weight_;  // [out, in]
    Parameter<T> bias_;    // [1, out]
};

template <typename T>
class LayerNorm {
public:
    struct Cache {
        Matrix<T> normalized;
        std::vector<T> inv_std;
    };

    LayerNorm() = default;
    LayerNorm(const std::string& name, int dim);

    Matrix<T> forward(const Matrix<T>& x, Cache* cache) const;
    Matrix<T> backward(const Cache& cache, const Matrix<T>& dy, bool param_grads);
    void collect(std::vector<ParamRef<T>>& out, const std::string& prefix);

private:
    Parameter<T> gamma_;
    Parameter<T> beta_;
};

template <typename T>
Matrix<T> gelu(const Matrix<T>& x);
template <typename T>
Matrix<T> gelu_backward(const Matrix<T>& x, const Matrix<T>& dy);

template <typename T>
class SelfAttention {
public:
    struct Cache {
        typename Linear<T>::Cache qkv_cache;
        Matrix<T> qkv;                   // [N, 3d]
        std::vector<Matrix<T>> weights;  // per head [N, N]
        typename Linear<T>::Cache proj_cache;
    };

    SelfAttention() = default;
    SelfAttention(const std::string& name, int dim, int heads);

    /// Fan-in scaled weights; output projections feeding the residual
    /// stream are further multiplied by residual_scale.
    void init(Rng& rng, double residual_scale);
    Matrix<T> forward(const Matrix<T>& x, Cache* cache) const;
    Matrix<T> backward(const Cache& cache, const Matrix<T>& dy, bool param_grads);
    void collect(std::vector<ParamRef<T>>& out, const std::string& prefix);

private:
    int dim_ = 0;
    int heads_ = 1;
    Linear<T> qkv_;
    Linear<T> proj_;
};

// Pre-norm transformer block: x + attn(ln1 x), then + mlp(ln2 .).
template <typename T>
class TransformerBlock {
public:
    struct Cache {
        typename LayerNorm<T>::Cache ln1, ln2;
        typename SelfAttention<T>::Cache attn;
        typename Linear<T>::Cache fc1, fc2;
        Matrix<T> hidden_pre;  // fc1 output before GELU
    };

    TransformerBlock() = default;
    TransformerBlock(const std::string& name, int dim, int heads, int mlp_hidden);

    /// Fan-in scaled weights; output projections feeding the residual
    /// stream are further multiplied by residual_scale.
    void init(Rng& rng, double residual_scale);
    Matrix<T> forward(const Matrix<T>& x, Cache* cache) const;
    Matrix<T> backward(const Cache& cache, const Matrix<T>& dy, bool param_grads);
    void collect(std::vector<ParamRef<T>>& out, const std::string& prefix);

private:
    LayerNorm<T> ln1_, ln2_;
    SelfAttention<T> attn_;
    Linear<T> fc1_, fc2_;
};

// Cubic-kernel 3D convolution with zero padding kernel/2, via im2col + GEMM.
// Activations are [channels, voxels] with voxels in [i0][i1][i2] order.
template <typename T>
class Conv3d {
public:
    struct Cache {
        Matrix<T> input;  // [in, voxels]; columns are rebuilt in backward
        std::array<int, 3> in_dims{};
    };

    Conv3d() = default;
    Conv3d(const std::string& name, int in_channels, int out_channels, int kernel, int stride);

    void init(Rng& rng, double weight_std);

    std::array<int, 3> output_dims(const std::array<int, 3>& in) const;
    Matrix<T> forward(const Matrix<T>& x, const std::array<int, 3>& dims, Cache* cache) const;
    Matrix<T> backward(const Cache& cache, const Matrix<T>& dy, bool param_grads, bool input_grad);
    void collect(std::vector<ParamRef<T>>& out, const std::string& prefix);

    int fan_in() const { return in_channels_ * kernel_ * kernel_ * kernel_; }

private:
    int slab(const std::array<int, 3>& out) const;

    int in_channels_ = 0;
    int out_channels_ = 0;
    int kernel_ = 3;
    int stride_ = 1;
    Parameter<T> weight_;  // [out, in * k^3]
    Parameter<T> bias_;    // [1, out]
};

template <typename T>
Matrix<T> relu(const Matrix<T>& x);
// Uses the forward output as the mask.
template <typename T>
Matrix<T> relu_backward(const Matrix<T>& output, const Matrix<T>& dy);

}  // namespace cda::nn
