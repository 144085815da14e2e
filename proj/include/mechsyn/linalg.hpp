// Dense symmetric indefinite factorization with complete pivoting, plus the
// descent-direction and line-search pieces of the SQP loop.
//
// factor() computes P A P^T = L D L^T with D block diagonal (1x1 and 2x2
// pivots) and L unit lower triangular, choosing the largest-magnitude
// eligible pivot over the whole remaining submatrix. Pivots below
// 1e-10 * (largest pivot magnitude) are treated as exact zeros, so the
// factorization exposes the null space of singular inputs instead of
// failing on them; the design problems here are underdetermined by nature.
#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace mechsyn {

struct Inertia {
    int positive = 0;
    int negative = 0;
    int zero = 0;
};

class IndefiniteFactorization {
public:
    struct Block {
        int start = 0;
        int size = 1;       // 1 or 2
        double a = 0.0;     // (0,0) entry
        double b = 0.0;     // (1,1) entry of a 2x2 block
        double c = 0.0;     // off-diagonal of a 2x2 block
    };

    int dimension() const { return n_; }
    int rank() const { return rank_; }
    const Inertia& inertia() const { return inertia_; }
    const std::vector<int>& permutation() const { return perm_; }
    const std::vector<Block>& blocks() const { return blocks_; }
    double zero_tolerance() const { return zero_tol_; }

    /// Orthonormal basis of the numerical null space (n x n0 matrix).
    const Eigen::MatrixXd& null_basis() const { return null_basis_; }

    /// P^T L D L^T P, for verifying the factorization against its input.
    Eigen::MatrixXd reconstruct() const {
        Eigen::MatrixXd D = Eigen::MatrixXd::Zero(n_, n_);
        for (const Block& blk : blocks_) {
            D(blk.start, blk.start) = blk.a;
            if (blk.size == 2) {
                D(blk.start + 1, blk.start + 1) = blk.b;
                D(blk.start, blk.start + 1) = blk.c;
                D(blk.start + 1, blk.start) = blk.c;
            }
        }
        const Eigen::MatrixXd W = L_ * D * L_.transpose();
        Eigen::MatrixXd A(n_, n_);
        for (int i = 0; i < n_; ++i)
            for (int j = 0; j < n_; ++j) A(perm_[i], perm_[j]) = W(i, j);
        return A;
    }

    /// L^{-1} applied to the permuted vector.
    Eigen::VectorXd forward_solve(const Eigen::VectorXd& rhs) const {
        Eigen::VectorXd z(n_);
        for (int i = 0; i < n_; ++i) {
            double s = rhs[perm_[i]];
            for (int j = 0; j < i; ++j) s -= L_(i, j) * z[j];
            z[i] = s;
        }
        return z;
    }

    /// Unpermuted L^{-T} applied to a factor-space vector.
    Eigen::VectorXd backward_solve(const Eigen::VectorXd& y) const {
        Eigen::VectorXd w(n_);
        for (int i = n_ - 1; i >= 0; --i) {
            double s = y[i];
            for (int j = i + 1; j < n_; ++j) s -= L_(j, i) * w[j];
            w[i] = s;
        }
        Eigen::VectorXd x(n_);
        for (int i = 0; i < n_; ++i) x[perm_[i]] = w[i];
        return x;
    }

private:
    friend IndefiniteFactorization factor(const Eigen::MatrixXd&);

    int n_ = 0;
    int rank_ = 0;
    double zero_tol_ = 0.0;
    Inertia inertia_;
    std::vector<int> perm_;
    std::vector<Block> blocks_;
    Eigen::MatrixXd L_;
    Eigen::MatrixXd null_basis_;
};

/// Factor a symmetric (possibly indefinite, possibly singular) matrix.
/// Asymmetry above 1e-10 relative is rejected. A 1x1 pivot is preferred; a
/// 2x2 pivot is taken when the best diagonal magnitude falls below 0.64 of
/// the best off-diagonal magnitude, which bounds element growth and gives
/// every 2x2 block one positive and one negative eigenvalue.
inline IndefiniteFactorization factor(const Eigen::MatrixXd& A) {
    const int n = static_cast<int>(A.rows());
    if (A.cols() != n) throw std::invalid_argument("factor: matrix must be square");
    const double scale = n > 0 ? A.cwiseAbs().maxCoeff() : 0.0;
    if (n > 0 && (A - A.transpose()).cwiseAbs().maxCoeff() > 1e-10 * std::max(scale, 1e-300))
        throw std::invalid_argument("factor: matrix is not symmetric");

    IndefiniteFactorization f;
    f.n_ = n;
    f.perm_.resize(n);
    for (int i = 0; i < n; ++i) f.perm_[i] = i;
    f.L_ = Eigen::MatrixXd::Identity(n, n);

    Eigen::MatrixXd W = A;
    constexpr double kAlpha = 0.64;      // 1x1 vs 2x2 selection constant
    constexpr double kRankTol = 1e-10;   // zero-curvature threshold, relative
    double max_pivot = scale;

    auto swap_index = [&](int i, int j) {
        if (i == j) return;
        W.row(i).swap(W.row(j));
        W.col(i).swap(W.col(j));
        f.L_.row(i).swap(f.L_.row(j));  // only columns < k are populated; the
        f.L_.col(i).swap(f.L_.col(j));  // identity part swaps consistently
        std::swap(f.perm_[i], f.perm_[j]);
    };

    int k = 0;
    while (k < n) {
        f.zero_tol_ = kRankTol * std::max(max_pivot, 1e-300);

        int dr = k;
        double diag_best = -1.0;
        for (int i = k; i < n; ++i) {
            const double v = std::abs(W(i, i));
            if (v > diag_best) {
                diag_best = v;
                dr = i;
            }
        }
        int op = k, oq = k;
        double off_best = -1.0;
        for (int i = k; i < n; ++i) {
            for (int j = k; j < i; ++j) {
                const double v = std::abs(W(i, j));
                if (v > off_best) {
                    off_best = v;
                    op = j;
                    oq = i;
                }
            }
        }

        if (std::max(diag_best, off_best) <= f.zero_tol_) break;  // rest is numerically zero

        if (diag_best >= kAlpha * off_best) {
            swap_index(k, dr);
            const double d = W(k, k);
            max_pivot = std::max(max_pivot, std::abs(d));
            f.blocks_.push_back({k, 1, d, 0.0, 0.0});
            (d > 0 ? f.inertia_.positive : f.inertia_.negative) += 1;
            for (int i = k + 1; i < n; ++i) f.L_(i, k) = W(i, k) / d;
            for (int i = k + 1; i < n; ++i)
                for (int j = k + 1; j <= i; ++j) {
                    W(i, j) -= f.L_(i, k) * W(j, k);
                    W(j, i) = W(i, j);
                }
            k += 1;
        } else {
            swap_index(k, op);   // op < oq, both >= k, so oq is untouched here
            swap_index(k + 1, oq);
            const double a = W(k, k), b = W(k + 1, k + 1), c = W(k + 1, k);
            const double det = a * b - c * c;  // < 0 by the selection rule
            max_pivot = std::max({max_pivot, std::abs(a), std::abs(b), std::abs(c)});
            f.blocks_.push_back({k, 2, a, b, c});
            f.inertia_.positive += 1;
            f.inertia_.negative += 1;
            const double ia = b / det, ib = a / det, ic = -c / det;  // inverse of the 2x2 block
            for (int i = k + 2; i < n; ++i) {
                const double w1 = W(i, k), w2 = W(i, k + 1);
                f.L_(i, k) = w1 * ia + w2 * ic;
                f.L_(i, k + 1) = w1 * ic + w2 * ib;
            }
            for (int i = k + 2; i < n; ++i)
                for (int j = k + 2; j <= i; ++j) {
                    W(i, j) -= f.L_(i, k) * W(j, k) + f.L_(i, k + 1) * W(j, k + 1);
                    W(j, i) = W(i, j);
                }
            k += 2;
        }
    }

    f.rank_ = k;
    f.inertia_.zero = n - k;

    if (f.inertia_.zero > 0) {
        Eigen::MatrixXd N(n, f.inertia_.zero);
        for (int z = 0; z < f.inertia_.zero; ++z) {
            Eigen::VectorXd e = Eigen::VectorXd::Zero(n);
            e[k + z] = 1.0;
            N.col(z) = f.backward_solve(e);
        }
        Eigen::HouseholderQR<Eigen::MatrixXd> qr(N);
        f.null_basis_ = qr.householderQ() * Eigen::MatrixXd::Identity(n, f.inertia_.zero);
    } else {
        f.null_basis_ = Eigen::MatrixXd::Zero(n, 0);
    }
    return f;
}

/// Descent direction from a factored Hessian and a gradient.
///
/// In the block-diagonalized system, positive-curvature components take the
/// Newton value, negative-curvature components have their sign flipped so
/// they descend, and zero-curvature components move along the negative
/// gradient projected onto the null space. For consistent singular systems
/// with no negative curvature this reproduces the minimum-norm solve. The
/// result always satisfies p.g <= 0, with equality only at g = 0.
inline Eigen::VectorXd descent_step(const IndefiniteFactorization& f, const Eigen::VectorXd& g) {
    const int n = f.dimension();
    if (g.size() != n) throw std::invalid_argument("descent_step: dimension mismatch");
    if (n == 0) return Eigen::VectorXd();

    Eigen::VectorXd g_null = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd g_range = g;
    const Eigen::MatrixXd& N = f.null_basis();
    if (N.cols() > 0) {
        g_null = N * (N.transpose() * g);
        g_range -= g_null;
    }

    Eigen::VectorXd ghat = f.forward_solve(g_range);
    Eigen::VectorXd y = Eigen::VectorXd::Zero(n);
    for (const auto& blk : f.blocks()) {
        if (blk.size == 1) {
            y[blk.start] = -ghat[blk.start] / std::abs(blk.a);
        } else {
            // Spectral flip of the 2x2 block: y = -Q |Lambda|^{-1} Q^T ghat.
            const double mid = 0.5 * (blk.a + blk.b);
            const double disc = std::hypot(0.5 * (blk.a - blk.b), blk.c);
            const double l1 = mid + disc, l2 = mid - disc;
            Eigen::Vector2d v1(blk.c, l1 - blk.a);
            if (v1.norm() < 1e-300) v1 = Eigen::Vector2d(1.0, 0.0);
            v1.normalize();
            const Eigen::Vector2d v2(-v1.y(), v1.x());
            const Eigen::Vector2d gb(ghat[blk.start], ghat[blk.start + 1]);
            const Eigen::Vector2d yb = -(v1 * (v1.dot(gb) / std::abs(l1)) + v2 * (v2.dot(gb) / std::abs(l2)));
            y[blk.start] = yb.x();
            y[blk.start + 1] = yb.y();
        }
    }

    Eigen::VectorXd p = f.backward_solve(y);
    if (N.cols() > 0) {
        p -= N * (N.transpose() * p);  // scrub null contamination: range part stays minimum-norm
        p -= g_null;                   // steepest descent along the null space
    }
    return p;
}

struct LineSearchResult {
    double alpha = 0.0;
    double value = 0.0;
    bool decreased = false;
    int evals = 0;
};

/// Unidimensional minimization along a descent direction. phi maps a step
/// length to the objective value (may return +inf for inadmissible steps);
/// phi0 = phi(0) and slope0 = p.g <= 0.
///
/// Backtracks from alpha = 1 by halving until the sufficient-decrease test
/// phi(alpha) <= phi0 + 1e-4 * alpha * slope0 holds (strictly below phi0),
/// then expands by doubling while the value keeps improving - the Newton
/// model often far understates the usable step in the flat valleys the
/// uncoupled Hessian produces - and finishes with one quadratic
/// interpolation refinement. Monotone: the result never exceeds any
/// evaluated value. Returns alpha = 0 with decreased = false if no trial
/// decreases phi.
template <typename Phi>
LineSearchResult line_search(Phi&& phi, double phi0, double slope0, int max_evals = 30) {
    if (slope0 > 0.0) throw std::invalid_argument("line_search: ascent direction");
    constexpr double kArmijo = 1e-4;

    LineSearchResult res;
    res.value = phi0;
    double alpha = 1.0;
    while (res.evals < max_evals) {
        const double fa = phi(alpha);
        ++res.evals;
        if (std::isfinite(fa) && fa < phi0 && fa <= phi0 + kArmijo * alpha * slope0) {
            res.alpha = alpha;
            res.value = fa;
            res.decreased = true;
            break;
        }
        alpha *= 0.5;
    }
    if (!res.decreased) return res;

    while (res.evals < max_evals) {
        const double fa = phi(2.0 * res.alpha);
        ++res.evals;
        if (!(std::isfinite(fa) && fa < res.value)) break;
        res.alpha *= 2.0;
        res.value = fa;
    }

    // One quadratic model through (0, phi0, slope0) and (alpha, value).
    const double curv = (res.value - phi0 - slope0 * res.alpha) / (res.alpha * res.alpha);
    if (curv > 0.0 && res.evals < max_evals) {
        const double astar = -slope0 / (2.0 * curv);
        if (astar > 0.0 && std::isfinite(astar) &&
            std::abs(astar - res.alpha) > 1e-9 * std::max(1.0, res.alpha)) {
            const double fstar = phi(astar);
            ++res.evals;
            if (std::isfinite(fstar) && fstar < res.value) {
                res.alpha = astar;
                res.value = fstar;
            }
        }
    }
    return res;
}

}  // namespace mechsyn
