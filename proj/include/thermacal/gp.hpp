#pragma once

// Exact Gaussian process regression over (x, y, z, t) feature vectors with a
// squared-exponential kernel and diagonal input scaling.

#include <Eigen/Core>

#include <array>
#include <cstddef>
#include <filesystem>
#include <vector>

namespace thermacal::gp {

inline constexpr int kFeatureDim = 4;

/// One input sample: (x, y, z) in meters and temperature t in degrees Celsius.
using FeatureVector = Eigen::Matrix<double, 1, kFeatureDim>;
/// Feature rows, one sample per row.
using FeatureMatrix = Eigen::Matrix<double, Eigen::Dynamic, kFeatureDim>;

/// Kernel hyperparameters.
///
/// `w` is the diagonal of the input scaling matrix (units 1 / input-unit^2),
/// `sigma_s` the signal standard deviation and `sigma_y` the observation noise
/// standard deviation, both in meters.
struct Hyperparams {
    Eigen::Vector4d w = Eigen::Vector4d::Ones();
    double sigma_s = 1.0;
    double sigma_y = 0.1;

    double signal_variance() const { return sigma_s * sigma_s; }
    double noise_variance() const { return sigma_y * sigma_y; }
    /// Prior variance of a noisy observation, sigma_s^2 + sigma_y^2.
    double prior_variance() const { return signal_variance() + noise_variance(); }

    /// Throws ContractError unless sigma_s > 0, sigma_y > 0 and w >= 0.
    void validate() const;

    /// Packs (log w0..w3, log sigma_s^2, log sigma_y^2).
    Eigen::Matrix<double, 6, 1> to_log() const;
    static Hyperparams from_log(const Eigen::Matrix<double, 6, 1>& log_hyper);
};

struct TrainingSet {
    FeatureMatrix X;
    Eigen::VectorXd y;

    Eigen::Index size() const { return X.rows(); }
    /// Checks N >= 1, matching lengths and finite entries.
    void validate() const;
    /// True when two rows of X are bitwise identical.
    bool has_duplicate_rows() const;
};

/// A trained model. Immutable after `fit`; safe to share across threads.
struct FittedGP {
    FeatureMatrix X;
    /// sigma_y includes any diagonal jitter that was needed to factor.
    Hyperparams hyper;
    /// Lower-triangular factor with L * L^T = Sigma(X, X).
    Eigen::MatrixXd L;
    /// Solves Sigma(X, X) * alpha = y - mean_const.
    Eigen::VectorXd alpha;
    double mean_const = 0.0;
    /// Diagonal jitter added during fitting (0 when none was needed).
    double jitter = 0.0;

    Eigen::Index size() const { return X.rows(); }
};

struct Prediction {
    Eigen::VectorXd mean;
    /// Predictive variance of a noisy observation; empty when not requested.
    Eigen::VectorXd variance;
};

/// Squared-exponential kernel entry, plus sigma_y^2 when `same_index`.
double kernel_eval(const FeatureVector& xi, const FeatureVector& xj, bool same_index,
                   const Hyperparams& hyper);

/// Gram matrix by a direct double loop over `kernel_eval`.
Eigen::MatrixXd gram_naive(const FeatureMatrix& X, const Hyperparams& hyper);

/// Cross covariance without the noise term, by a direct double loop.
Eigen::MatrixXd cross_kernel_naive(const FeatureMatrix& A, const FeatureMatrix& B,
                                   const Hyperparams& hyper);

/// Cross covariance using |a - b|^2 = a.a - 2 a.b + b.b in sqrt(w)-scaled
/// coordinates, so the pairwise part becomes one matrix product.
Eigen::MatrixXd cross_kernel_fast(const FeatureMatrix& A, const FeatureMatrix& B,
                                  const Hyperparams& hyper);

/// Rows of a feature matrix pre-scaled by sqrt(w), with their halved squared
/// norms. Shared setup for repeated blocked cross-kernel evaluation.
class ScaledFeatures {
public:
    ScaledFeatures() = default;
    ScaledFeatures(const FeatureMatrix& X, const Hyperparams& hyper);

    Eigen::Index rows() const { return scaled_.rows(); }
    const Eigen::MatrixX4d& scaled() const { return scaled_; }
    const Eigen::VectorXd& half_norms() const { return half_norms_; }

private:
    Eigen::MatrixX4d scaled_;
    Eigen::VectorXd half_norms_;
};

/// Writes the cross covariance between `train` (rows) and `query` (columns)
/// into `out`, which must be train.rows() x query.rows().
void cross_kernel_block(const ScaledFeatures& train, const ScaledFeatures& query,
                        double signal_variance, Eigen::Ref<Eigen::MatrixXd> out);

/// Cholesky fit with the jitter ladder 1e-10, 1e-8, 1e-6 on failure.
FittedGP fit(const TrainingSet& train, const Hyperparams& hyper, double mean_const = 0.0);

/// Posterior predictive mean (and optionally variance) at each row of Xstar.
Prediction predict(const FittedGP& gp, const FeatureMatrix& Xstar, bool with_variance = true);

/// Full posterior covariance over a small query set. Debug helper only: the
/// result is M x M.
Eigen::MatrixXd posterior_covariance(const FittedGP& gp, const FeatureMatrix& Xstar);

/// Negative log marginal likelihood, computed from the Cholesky factor.
double nlml(const TrainingSet& train, const Hyperparams& hyper, double mean_const = 0.0);

using LogHyper = Eigen::Matrix<double, 6, 1>;

struct NlmlValueGrad {
    double value = 0.0;
    LogHyper grad = LogHyper::Zero();
};

/// NLML and its gradient with respect to (log w0..w3, log sigma_s^2, log sigma_y^2).
NlmlValueGrad nlml_value_grad(const TrainingSet& train, const LogHyper& log_hyper,
                              double mean_const = 0.0);

LogHyper nlml_grad(const TrainingSet& train, const LogHyper& log_hyper, double mean_const = 0.0);

struct OptimizeOptions {
    int max_iters = 500;
    /// Stop once the log-space gradient norm drops below this.
    double tol = 1e-5;
    double mean_const = 0.0;
    double initial_step = 0.1;
    /// Armijo sufficient-decrease constant.
    double armijo = 1e-4;
};

struct OptimizeResult {
    Hyperparams hyper;
    double initial_nlml = 0.0;
    double final_nlml = 0.0;
    double grad_norm = 0.0;
    int iterations = 0;
    bool converged = false;
    /// Set when repeated factorisation failures stopped the search early.
    bool warning = false;
};

/// Gradient descent with backtracking line search on log-hyperparameters.
OptimizeResult optimize_hyper(const TrainingSet& train, const Hyperparams& init,
                              const OptimizeOptions& options = {});

/// Binary model file: "TGP1", then little-endian N, hyper, mean_const,
/// X (row-major), alpha and the packed lower triangle of L.
void save_model(const FittedGP& gp, const std::filesystem::path& path);
FittedGP load_model(const std::filesystem::path& path);

std::vector<unsigned char> encode_model(const FittedGP& gp);
FittedGP decode_model(const std::vector<unsigned char>& bytes);

}  // namespace thermacal::gp
