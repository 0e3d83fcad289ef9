#pragma once

#include "cvpo/common.hpp"

#include <vector>

namespace cvpo {

/**
 * Dense feed-forward network, ReLU hidden activations, linear output.
 * Rows of the input matrix are batch items. Backprop is hand-rolled and
 * returns parameter gradients plus the gradient w.r.t. the input batch
 * (needed for pathwise policy gradients through critics).
 */
class Mlp {
public:
    struct Cache {
        std::vector<Mat> act;  // act[l] feeds layer l; act[0] is the input
        std::vector<Mat> pre;  // preactivation of each layer
    };
    struct Grads {
        std::vector<Mat> W;
        std::vector<Vec> b;
        Mat input;  // dL/dX
    };

    Mlp() = default;

    Mlp(int in_dim, const std::vector<int>& hidden, int out_dim, RngStream& rng,
        double final_scale = 1.0) {
        require(in_dim > 0 && out_dim > 0, "Mlp: nonpositive width");
        std::vector<int> dims;
        dims.push_back(in_dim);
        for (int h : hidden) {
            require(h > 0, "Mlp: nonpositive hidden width");
            dims.push_back(h);
        }
        dims.push_back(out_dim);
        for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
            const double scale = std::sqrt(2.0 / dims[l]) * (l + 2 == dims.size() ? final_scale : 1.0);
            Mat w(dims[l], dims[l + 1]);
            for (Eigen::Index i = 0; i < w.rows(); ++i)
                for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = scale * rng.normal();
            W.push_back(std::move(w));
            b.push_back(Vec::Zero(dims[l + 1]));
        }
        init_adam();
    }

    int in_dim() const { return static_cast<int>(W.front().rows()); }
    int out_dim() const { return static_cast<int>(W.back().cols()); }
    std::size_t layer_count() const { return W.size(); }

    Mat forward(const Mat& X) const {
        Mat a = X;
        for (std::size_t l = 0; l < W.size(); ++l) {
            Mat z = (a * W[l]).rowwise() + b[l].transpose();
            a = (l + 1 < W.size()) ? z.cwiseMax(0.0) : z;
        }
        return a;
    }

    Mat forward_cached(const Mat& X, Cache& cache) const {
        cache.act.assign(1, X);
        cache.pre.clear();
        Mat a = X;
        for (std::size_t l = 0; l < W.size(); ++l) {
            Mat z = (a * W[l]).rowwise() + b[l].transpose();
            cache.pre.push_back(z);
            a = (l + 1 < W.size()) ? Mat(z.cwiseMax(0.0)) : z;
            if (l + 1 < W.size()) cache.act.push_back(a);
        }
        return a;
    }

    Grads backward(const Cache& cache, const Mat& dLdY) const {
        Grads g;
        g.W.resize(W.size());
        g.b.resize(W.size());
        Mat delta = dLdY;
        for (std::size_t l = W.size(); l-- > 0;) {
            g.W[l] = cache.act[l].transpose() * delta;
            g.b[l] = delta.colwise().sum().transpose();
            Mat da = delta * W[l].transpose();
            if (l > 0) delta = da.cwiseProduct((cache.pre[l - 1].array() > 0.0).cast<double>().matrix());
            else g.input = da;
        }
        return g;
    }

    void zero_like(Grads& g) const {
        g.W.resize(W.size());
        g.b.resize(W.size());
        for (std::size_t l = 0; l < W.size(); ++l) {
            g.W[l] = Mat::Zero(W[l].rows(), W[l].cols());
            g.b[l] = Vec::Zero(b[l].size());
        }
    }

    void accumulate(Grads& into, const Grads& add, double scale = 1.0) const {
        for (std::size_t l = 0; l < W.size(); ++l) {
            into.W[l] += scale * add.W[l];
            into.b[l] += scale * add.b[l];
        }
    }

    void adam_step(const Grads& g, double lr) {
        ++adam_t_;
        const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        const double c1 = 1.0 - std::pow(b1, static_cast<double>(adam_t_));
        const double c2 = 1.0 - std::pow(b2, static_cast<double>(adam_t_));
        for (std::size_t l = 0; l < W.size(); ++l) {
            mW_[l] = b1 * mW_[l] + (1.0 - b1) * g.W[l];
            vW_[l] = b2 * vW_[l] + (1.0 - b2) * g.W[l].cwiseProduct(g.W[l]);
            mb_[l] = b1 * mb_[l] + (1.0 - b1) * g.b[l];
            vb_[l] = b2 * vb_[l] + (1.0 - b2) * g.b[l].cwiseProduct(g.b[l]);
            W[l] -= lr * (mW_[l] / c1).cwiseQuotient(((vW_[l] / c2).cwiseSqrt().array() + eps).matrix());
            b[l] -= lr * (mb_[l] / c1).cwiseQuotient(((vb_[l] / c2).cwiseSqrt().array() + eps).matrix());
        }
    }

    /// this <- rho * this + (1 - rho) * online, including nothing else.
    void polyak_from(const Mlp& online, double rho) {
        require(rho >= 0.0 && rho <= 1.0, "polyak: rho outside [0,1]");
        require(online.W.size() == W.size(), "polyak: layer count mismatch");
        for (std::size_t l = 0; l < W.size(); ++l) {
            require(online.W[l].rows() == W[l].rows() && online.W[l].cols() == W[l].cols(),
                    "polyak: shape mismatch");
            W[l] = rho * W[l] + (1.0 - rho) * online.W[l];
            b[l] = rho * b[l] + (1.0 - rho) * online.b[l];
        }
    }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (std::size_t l = 0; l < W.size(); ++l)
            n += static_cast<std::size_t>(W[l].size()) + static_cast<std::size_t>(b[l].size());
        return n;
    }

    Vec flatten() const {
        Vec out(param_count());
        Eigen::Index k = 0;
        for (std::size_t l = 0; l < W.size(); ++l) {
            for (Eigen::Index j = 0; j < W[l].cols(); ++j)
                for (Eigen::Index i = 0; i < W[l].rows(); ++i) out[k++] = W[l](i, j);
            for (Eigen::Index i = 0; i < b[l].size(); ++i) out[k++] = b[l][i];
        }
        return out;
    }

    void set_from_flat(const Vec& v) {
        require(static_cast<std::size_t>(v.size()) == param_count(), "set_from_flat: size mismatch");
        Eigen::Index k = 0;
        for (std::size_t l = 0; l < W.size(); ++l) {
            for (Eigen::Index j = 0; j < W[l].cols(); ++j)
                for (Eigen::Index i = 0; i < W[l].rows(); ++i) W[l](i, j) = v[k++];
            for (Eigen::Index i = 0; i < b[l].size(); ++i) b[l][i] = v[k++];
        }
    }

    std::vector<Mat> W;
    std::vector<Vec> b;

private:
    void init_adam() {
        mW_.clear(); vW_.clear(); mb_.clear(); vb_.clear();
        for (std::size_t l = 0; l < W.size(); ++l) {
            mW_.push_back(Mat::Zero(W[l].rows(), W[l].cols()));
            vW_.push_back(Mat::Zero(W[l].rows(), W[l].cols()));
            mb_.push_back(Vec::Zero(b[l].size()));
            vb_.push_back(Vec::Zero(b[l].size()));
        }
    }

    std::vector<Mat> mW_, vW_;
    std::vector<Vec> mb_, vb_;
    long adam_t_ = 0;
};

}  // namespace cvpo
