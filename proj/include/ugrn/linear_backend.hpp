#pragma once

// Ridge-regression reconstruction backend. Gene j is reconstructed from all
// other genes by a closed-form ridge fit, which makes every probe of this
// backend analytically predictable.

#include <Eigen/Dense>

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "ugrn/common.hpp"
#include "ugrn/data.hpp"
#include "ugrn/model.hpp"

namespace ugrn::model {

struct LinearBackendParams {
    GeneVocabulary vocabulary;
    /// weights[k * V + j] is the coefficient of gene k when reconstructing j.
    std::vector<double> weights;
    std::vector<double> bias;
    double lambda = 0.0;

    double weight(std::size_t source, std::size_t target) const { return weights[source * vocabulary.size() + target]; }
};

/// For every target j solves
///   min_w,b  sum_cells (x_j - sum_{k != j} w_k x_k - b)^2 + lambda * |w|^2
/// with an unpenalised intercept, via the centred normal equations.
inline LinearBackendParams fit_linear_backend(const data::ExpressionMatrix& expr, double lambda) {
    require(std::isfinite(lambda) && lambda >= 0.0, "ridge strength must be >= 0");
    require(expr.cells() >= 2, "ridge fit needs at least two cells");
    const std::size_t N = expr.cells(), K = expr.genes();

    Eigen::MatrixXd X(N, K);
    for (std::size_t c = 0; c < N; ++c)
        for (std::size_t g = 0; g < K; ++g) X(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(g)) = expr.at(c, g);
    const Eigen::RowVectorXd mean = X.colwise().mean();
    X.rowwise() -= mean;
    const Eigen::MatrixXd gram = X.transpose() * X;

    LinearBackendParams p;
    p.vocabulary = GeneVocabulary(expr.symbols());
    p.weights.assign(K * K, 0.0);
    p.bias.assign(K, 0.0);
    p.lambda = lambda;

    const auto Ki = static_cast<Eigen::Index>(K);
    for (Eigen::Index j = 0; j < Ki; ++j) {
        std::vector<Eigen::Index> others;
        for (Eigen::Index k = 0; k < Ki; ++k)
            if (k != j) others.push_back(k);
        const auto m = static_cast<Eigen::Index>(others.size());
        Eigen::MatrixXd A(m, m);
        Eigen::VectorXd rhs(m);
        for (Eigen::Index a = 0; a < m; ++a) {
            rhs(a) = gram(others[static_cast<std::size_t>(a)], j);
            for (Eigen::Index b = 0; b < m; ++b)
                A(a, b) = gram(others[static_cast<std::size_t>(a)], others[static_cast<std::size_t>(b)]);
            A(a, a) += lambda;
        }
        Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
        bool singular = ldlt.info() != Eigen::Success || !ldlt.isPositive();
        if (!singular && m > 0) {
            const auto D = ldlt.vectorD().cwiseAbs();
            singular = !(D.minCoeff() > 1e-12 * D.maxCoeff());
        }
        if (singular) {
            if (lambda == 0.0)
                throw UserError("ridge normal equations are singular for gene '" + expr.symbols()[static_cast<std::size_t>(j)] +
                                "' at lambda = 0; use lambda > 0");
            throw UserError("ridge normal equations are numerically singular for gene '" +
                            expr.symbols()[static_cast<std::size_t>(j)] + "'; increase lambda");
        }
        const Eigen::VectorXd w = ldlt.solve(rhs);
        double b = mean(j);
        for (Eigen::Index a = 0; a < m; ++a) {
            const auto k = static_cast<std::size_t>(others[static_cast<std::size_t>(a)]);
            p.weights[k * K + static_cast<std::size_t>(j)] = w(a);
            b -= w(a) * mean(others[static_cast<std::size_t>(a)]);
        }
        p.bias[static_cast<std::size_t>(j)] = b;
    }
    return p;
}

/// reconstruct(v)_j = b_j + sum_{k in panel, k != j, k unmasked} w_kj v_k.
/// Genes absent from the panel (or masked) contribute 0.
class LinearModel final : public ExpressionModel {
  public:
    explicit LinearModel(LinearBackendParams params, std::string fingerprint = {})
        : params_(std::move(params)), fingerprint_(std::move(fingerprint)) {
        const auto V = params_.vocabulary.size();
        ensure(params_.weights.size() == V * V && params_.bias.size() == V, "linear backend parameter size mismatch");
        for (std::size_t j = 0; j < V; ++j) ensure(params_.weights[j * V + j] == 0.0, "linear backend self-weight must be 0");
    }

    std::string kind() const override { return "linear"; }
    const GeneVocabulary& vocabulary() const override { return params_.vocabulary; }
    const LinearBackendParams& params() const { return params_; }
    std::string fingerprint() const override { return fingerprint_; }
    void set_fingerprint(std::string f) { fingerprint_ = std::move(f); }

    std::vector<double> reconstruct(const Panel& panel, std::span<const double> values,
                                    const MaskFlags& masked = {}) const override {
        check_query(panel, values, masked);
        const auto& ids = panel.ids();
        std::vector<double> out(panel.size());
        for (std::size_t q = 0; q < ids.size(); ++q) {
            double s = params_.bias[ids[q]];
            for (std::size_t k = 0; k < ids.size(); ++k) {
                if (k == q || (!masked.empty() && masked[k])) continue;
                s += params_.weight(ids[k], ids[q]) * values[k];
            }
            out[q] = s;
        }
        return out;
    }

    std::vector<double> input_gradient(const Panel& panel, std::span<const double> values, std::size_t target,
                                       const MaskFlags& masked = {}) const override {
        check_query(panel, values, masked);
        if (target >= panel.size()) throw UserError("gradient target outside the panel");
        const auto& ids = panel.ids();
        std::vector<double> g(panel.size(), 0.0);
        for (std::size_t k = 0; k < ids.size(); ++k) {
            if (k == target || (!masked.empty() && masked[k])) continue;
            g[k] = params_.weight(ids[k], ids[target]);
        }
        return g;
    }

  private:
    LinearBackendParams params_;
    std::string fingerprint_;
};

}  // namespace ugrn::model
