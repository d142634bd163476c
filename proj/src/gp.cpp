#include "thermacal/gp.hpp"

#include "thermacal/error.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>
#include <string>

namespace thermacal::gp {

namespace {

constexpr std::array<double, 3> kJitterLadder = {1e-10, 1e-8, 1e-6};
// Query rows handled per block inside predict; bounds the N x block scratch.
constexpr Eigen::Index kPredictBlock = 256;

void require_finite(const FeatureMatrix& X, const char* what) {
    if (!X.allFinite()) {
        throw DomainError(std::string(what) + ": non-finite feature value");
    }
}

// Common offset subtracted from both operands before expanding the squared
// distance. The kernel is translation invariant; centring keeps the
// cancellation in a.a - 2 a.b + b.b small.
Eigen::RowVector4d centring_offset(const FeatureMatrix& X) {
    if (X.rows() == 0) {
        return Eigen::RowVector4d::Zero();
    }
    return X.colwise().mean();
}

ScaledFeatures scaled_with_offset(const FeatureMatrix& X, const Hyperparams& hyper,
                                  const Eigen::RowVector4d& offset) {
    FeatureMatrix shifted = X.rowwise() - offset;
    return ScaledFeatures(shifted, hyper);
}

// Signal part of Sigma(X, X): sigma_s^2 exp(-0.5 d^T W d), exact diagonal.
Eigen::MatrixXd signal_gram(const FeatureMatrix& X, const Hyperparams& hyper) {
    const auto offset = centring_offset(X);
    const ScaledFeatures scaled = scaled_with_offset(X, hyper, offset);
    Eigen::MatrixXd K(X.rows(), X.rows());
    cross_kernel_block(scaled, scaled, hyper.signal_variance(), K);
    // Mirror the lower triangle so the matrix is exactly symmetric.
    K.triangularView<Eigen::StrictlyUpper>() = K.transpose();
    K.diagonal().setConstant(hyper.signal_variance());
    return K;
}

// In-place lower Cholesky. Returns the failing column or -1 on success.
Eigen::Index cholesky_in_place(Eigen::MatrixXd& A) {
    const Eigen::Index failed = Eigen::internal::llt_inplace<double, Eigen::Lower>::blocked(A);
    A.triangularView<Eigen::StrictlyUpper>().setZero();
    return failed;
}

struct Factored {
    Eigen::MatrixXd L;
    double jitter = 0.0;
};

Factored factor_covariance(const Eigen::MatrixXd& signal, double noise_variance, bool allow_jitter) {
    Eigen::Index pivot = -1;
    for (std::size_t attempt = 0; attempt <= kJitterLadder.size(); ++attempt) {
        const double jitter = attempt == 0 ? 0.0 : kJitterLadder[attempt - 1];
        Factored out;
        out.L = signal;
        out.L.diagonal().array() += noise_variance + jitter;
        out.jitter = jitter;
        pivot = cholesky_in_place(out.L);
        if (pivot < 0) {
            return out;
        }
        if (!allow_jitter) {
            break;
        }
    }
    throw CholeskyError("covariance matrix is not positive definite (pivot " +
                            std::to_string(pivot) + ")",
                        static_cast<long>(pivot));
}

Eigen::VectorXd solve_with_factor(const Eigen::MatrixXd& L, Eigen::VectorXd rhs) {
    L.triangularView<Eigen::Lower>().solveInPlace(rhs);
    L.triangularView<Eigen::Lower>().transpose().solveInPlace(rhs);
    return rhs;
}

// --- little-endian byte helpers -------------------------------------------

void put_u64(std::vector<unsigned char>& out, std::uint64_t v) {
    for (int b = 0; b < 8; ++b) {
        out.push_back(static_cast<unsigned char>((v >> (8 * b)) & 0xFFu));
    }
}

void put_f64(std::vector<unsigned char>& out, double v) {
    put_u64(out, std::bit_cast<std::uint64_t>(v));
}

std::uint64_t get_u64(const std::vector<unsigned char>& in, std::size_t& pos) {
    std::uint64_t v = 0;
    for (int b = 0; b < 8; ++b) {
        v |= static_cast<std::uint64_t>(in[pos + b]) << (8 * b);
    }
    pos += 8;
    return v;
}

double get_f64(const std::vector<unsigned char>& in, std::size_t& pos) {
    return std::bit_cast<double>(get_u64(in, pos));
}

constexpr char kMagic[4] = {'T', 'G', 'P', '1'};

}  // namespace

// ---------------------------------------------------------------------------
// Hyperparams / TrainingSet

void Hyperparams::validate() const {
    if (!(sigma_s > 0.0) || !std::isfinite(sigma_s)) {
        throw ContractError("hyperparameters: sigma_s must be positive and finite");
    }
    if (!(sigma_y > 0.0) || !std::isfinite(sigma_y)) {
        throw ContractError("hyperparameters: sigma_y must be positive and finite");
    }
    for (int k = 0; k < kFeatureDim; ++k) {
        if (!(w[k] >= 0.0) || !std::isfinite(w[k])) {
            throw ContractError("hyperparameters: w must be non-negative and finite");
        }
    }
}

Eigen::Matrix<double, 6, 1> Hyperparams::to_log() const {
    Eigen::Matrix<double, 6, 1> out;
    out.head<4>() = w.array().log();
    out[4] = std::log(signal_variance());
    out[5] = std::log(noise_variance());
    return out;
}

Hyperparams Hyperparams::from_log(const Eigen::Matrix<double, 6, 1>& log_hyper) {
    Hyperparams h;
    h.w = log_hyper.head<4>().array().exp();
    h.sigma_s = std::exp(0.5 * log_hyper[4]);
    h.sigma_y = std::exp(0.5 * log_hyper[5]);
    return h;
}

void TrainingSet::validate() const {
    if (X.rows() < 1) {
        throw ContractError("training set is empty");
    }
    if (X.rows() != y.size()) {
        throw ContractError("training set: X has " + std::to_string(X.rows()) + " rows but y has " +
                            std::to_string(y.size()) + " entries");
    }
    require_finite(X, "training set");
    if (!y.allFinite()) {
        throw DomainError("training set: non-finite target value");
    }
}

bool TrainingSet::has_duplicate_rows() const {
    std::vector<std::array<double, kFeatureDim>> rows(static_cast<std::size_t>(X.rows()));
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        for (int k = 0; k < kFeatureDim; ++k) {
            rows[static_cast<std::size_t>(i)][k] = X(i, k);
        }
    }
    std::sort(rows.begin(), rows.end());
    return std::adjacent_find(rows.begin(), rows.end()) != rows.end();
}

// ---------------------------------------------------------------------------
// Kernels

double kernel_eval(const FeatureVector& xi, const FeatureVector& xj, bool same_index,
                   const Hyperparams& hyper) {
    if (!xi.allFinite() || !xj.allFinite()) {
        throw DomainError("kernel_eval: non-finite feature value");
    }
    double dist = 0.0;
    for (int k = 0; k < kFeatureDim; ++k) {
        const double d = xi[k] - xj[k];
        dist += hyper.w[k] * d * d;
    }
    double value = hyper.signal_variance() * std::exp(-0.5 * dist);
    if (same_index) {
        value += hyper.noise_variance();
    }
    return value;
}

Eigen::MatrixXd gram_naive(const FeatureMatrix& X, const Hyperparams& hyper) {
    const Eigen::Index n = X.rows();
    Eigen::MatrixXd K(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            K(i, j) = kernel_eval(X.row(i), X.row(j), i == j, hyper);
        }
    }
    return K;
}

Eigen::MatrixXd cross_kernel_naive(const FeatureMatrix& A, const FeatureMatrix& B,
                                   const Hyperparams& hyper) {
    Eigen::MatrixXd K(A.rows(), B.rows());
    for (Eigen::Index i = 0; i < A.rows(); ++i) {
        for (Eigen::Index j = 0; j < B.rows(); ++j) {
            K(i, j) = kernel_eval(A.row(i), B.row(j), false, hyper);
        }
    }
    return K;
}

ScaledFeatures::ScaledFeatures(const FeatureMatrix& X, const Hyperparams& hyper) {
    const Eigen::RowVector4d root_w = hyper.w.transpose().array().sqrt();
    scaled_ = X.array().rowwise() * root_w.array();
    half_norms_ = 0.5 * scaled_.rowwise().squaredNorm();
}

void cross_kernel_block(const ScaledFeatures& train, const ScaledFeatures& query,
                        double signal_variance, Eigen::Ref<Eigen::MatrixXd> out) {
    if (out.rows() != train.rows() || out.cols() != query.rows()) {
        throw ContractError("cross_kernel_block: output has wrong shape");
    }
    out.noalias() = train.scaled() * query.scaled().transpose();
    const auto& train_half = train.half_norms().array();
    for (Eigen::Index j = 0; j < out.cols(); ++j) {
        // a.b - a.a/2 - b.b/2 = -|a - b|^2 / 2, clamped: the expansion can
        // leave a tiny positive residue where the true value is 0.
        const double query_half = query.half_norms()[j];
        out.col(j) = (signal_variance *
                      (out.col(j).array() - train_half - query_half).min(0.0).exp())
                         .matrix();
    }
}

Eigen::MatrixXd cross_kernel_fast(const FeatureMatrix& A, const FeatureMatrix& B,
                                  const Hyperparams& hyper) {
    require_finite(A, "cross_kernel_fast");
    require_finite(B, "cross_kernel_fast");
    const auto offset = centring_offset(A);
    const ScaledFeatures sa = scaled_with_offset(A, hyper, offset);
    const ScaledFeatures sb = scaled_with_offset(B, hyper, offset);
    Eigen::MatrixXd K(A.rows(), B.rows());
    cross_kernel_block(sa, sb, hyper.signal_variance(), K);
    return K;
}

// ---------------------------------------------------------------------------
// Fit / predict

FittedGP fit(const TrainingSet& train, const Hyperparams& hyper, double mean_const) {
    train.validate();
    hyper.validate();
    if (!std::isfinite(mean_const)) {
        throw DomainError("fit: mean_const must be finite");
    }
    Factored factored = factor_covariance(signal_gram(train.X, hyper), hyper.noise_variance(), true);

    FittedGP gp;
    gp.X = train.X;
    gp.hyper = hyper;
    gp.hyper.sigma_y = std::sqrt(hyper.noise_variance() + factored.jitter);
    gp.jitter = factored.jitter;
    gp.mean_const = mean_const;
    gp.alpha = solve_with_factor(factored.L, train.y.array() - mean_const);
    gp.L = std::move(factored.L);
    return gp;
}

Prediction predict(const FittedGP& gp, const FeatureMatrix& Xstar, bool with_variance) {
    const Eigen::Index n = gp.size();
    if (n == 0 || gp.L.rows() != n || gp.L.cols() != n || gp.alpha.size() != n) {
        throw ContractError("predict: fitted model has inconsistent dimensions");
    }
    require_finite(Xstar, "predict");

    const Eigen::Index m = Xstar.rows();
    Prediction out;
    out.mean.resize(m);
    if (with_variance) {
        out.variance.resize(m);
    }
    if (m == 0) {
        return out;
    }

    const auto offset = centring_offset(gp.X);
    const ScaledFeatures train = scaled_with_offset(gp.X, gp.hyper, offset);
    const double prior = gp.hyper.prior_variance();
    Eigen::MatrixXd block(n, std::min(kPredictBlock, m));

    for (Eigen::Index start = 0; start < m; start += kPredictBlock) {
        const Eigen::Index count = std::min(kPredictBlock, m - start);
        const FeatureMatrix rows = Xstar.middleRows(start, count);
        const ScaledFeatures query = scaled_with_offset(rows, gp.hyper, offset);
        auto K = block.leftCols(count);
        cross_kernel_block(train, query, gp.hyper.signal_variance(), K);
        out.mean.segment(start, count).noalias() = K.transpose() * gp.alpha;
        if (with_variance) {
            gp.L.triangularView<Eigen::Lower>().solveInPlace(K);
            out.variance.segment(start, count) =
                (prior - K.colwise().squaredNorm().array()).max(0.0).min(prior).matrix().transpose();
        }
    }
    out.mean.array() += gp.mean_const;
    return out;
}

Eigen::MatrixXd posterior_covariance(const FittedGP& gp, const FeatureMatrix& Xstar) {
    require_finite(Xstar, "posterior_covariance");
    Eigen::MatrixXd V = cross_kernel_fast(gp.X, Xstar, gp.hyper);
    gp.L.triangularView<Eigen::Lower>().solveInPlace(V);
    Eigen::MatrixXd prior = cross_kernel_naive(Xstar, Xstar, gp.hyper);
    prior.diagonal().array() += gp.hyper.noise_variance();
    return prior - V.transpose() * V;
}

// ---------------------------------------------------------------------------
// Marginal likelihood

double nlml(const TrainingSet& train, const Hyperparams& hyper, double mean_const) {
    train.validate();
    hyper.validate();
    const Factored f = factor_covariance(signal_gram(train.X, hyper), hyper.noise_variance(), false);
    const Eigen::VectorXd r = train.y.array() - mean_const;
    Eigen::VectorXd z = r;
    f.L.triangularView<Eigen::Lower>().solveInPlace(z);
    const double n = static_cast<double>(train.size());
    return 0.5 * z.squaredNorm() + f.L.diagonal().array().log().sum() +
           0.5 * n * std::log(2.0 * std::numbers::pi);
}

NlmlValueGrad nlml_value_grad(const TrainingSet& train, const LogHyper& log_hyper,
                              double mean_const) {
    train.validate();
    const Hyperparams hyper = Hyperparams::from_log(log_hyper);
    hyper.validate();

    const Eigen::MatrixXd K = signal_gram(train.X, hyper);
    const Factored f = factor_covariance(K, hyper.noise_variance(), false);
    const Eigen::Index n = train.size();

    const Eigen::VectorXd r = train.y.array() - mean_const;
    Eigen::VectorXd z = r;
    f.L.triangularView<Eigen::Lower>().solveInPlace(z);
    Eigen::VectorXd alpha = z;
    f.L.triangularView<Eigen::Lower>().transpose().solveInPlace(alpha);

    NlmlValueGrad out;
    out.value = 0.5 * z.squaredNorm() + f.L.diagonal().array().log().sum() +
                0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);

    // Q = Sigma^-1 - alpha alpha^T; dNLML/dtheta = 0.5 tr(Q dSigma/dtheta).
    Eigen::MatrixXd Linv = Eigen::MatrixXd::Identity(n, n);
    f.L.triangularView<Eigen::Lower>().solveInPlace(Linv);
    Eigen::MatrixXd Q(n, n);
    Q.noalias() = Linv.transpose() * Linv;
    Q.noalias() -= alpha * alpha.transpose();

    std::array<double, kFeatureDim> w_acc{};
    double signal_acc = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
        signal_acc += Q(j, j) * K(j, j);
        for (Eigen::Index i = j + 1; i < n; ++i) {
            const double qk = 2.0 * Q(i, j) * K(i, j);
            signal_acc += qk;
            for (int k = 0; k < kFeatureDim; ++k) {
                const double d = train.X(i, k) - train.X(j, k);
                w_acc[k] += qk * d * d;
            }
        }
    }
    for (int k = 0; k < kFeatureDim; ++k) {
        out.grad[k] = 0.5 * (-0.5 * hyper.w[k]) * w_acc[k];
    }
    out.grad[4] = 0.5 * signal_acc;
    out.grad[5] = 0.5 * hyper.noise_variance() * Q.trace();
    return out;
}

LogHyper nlml_grad(const TrainingSet& train, const LogHyper& log_hyper, double mean_const) {
    return nlml_value_grad(train, log_hyper, mean_const).grad;
}

OptimizeResult optimize_hyper(const TrainingSet& train, const Hyperparams& init,
                              const OptimizeOptions& options) {
    init.validate();
    // Largest change of any log-parameter per step; keeps the first trial
    // step sane when the gradient is large.
    constexpr double kMaxMove = 1.0;
    constexpr double kMinStep = 1e-14;

    LogHyper theta = init.to_log();
    NlmlValueGrad current = nlml_value_grad(train, theta, options.mean_const);

    OptimizeResult result;
    result.hyper = init;
    result.initial_nlml = current.value;

    double step = options.initial_step;
    int iter = 0;
    for (; iter < options.max_iters; ++iter) {
        const double grad_norm = current.grad.norm();
        if (grad_norm < options.tol) {
            result.converged = true;
            break;
        }
        const double max_component = current.grad.cwiseAbs().maxCoeff();
        step = std::min(step, kMaxMove / max_component);

        bool accepted = false;
        int failures = 0;
        int attempts = 0;
        while (step > kMinStep) {
            ++attempts;
            const LogHyper candidate = theta - step * current.grad;
            try {
                NlmlValueGrad trial = nlml_value_grad(train, candidate, options.mean_const);
                if (std::isfinite(trial.value) &&
                    trial.value <= current.value - options.armijo * step * grad_norm * grad_norm) {
                    theta = candidate;
                    current = trial;
                    accepted = true;
                    break;
                }
            } catch (const CholeskyError&) {
                ++failures;
            } catch (const ContractError&) {
                // A parameter under- or overflowed in exp(); treat like a failed factorisation.
                ++failures;
            }
            step *= 0.5;
        }
        if (!accepted) {
            result.warning = failures > 0 && failures == attempts;
            break;
        }
        step *= 2.0;
    }

    result.hyper = Hyperparams::from_log(theta);
    result.final_nlml = current.value;
    result.grad_norm = current.grad.norm();
    result.iterations = iter;
    if (!result.converged && result.grad_norm < options.tol) {
        result.converged = true;
    }
    return result;
}

// ---------------------------------------------------------------------------
// Serialisation

std::vector<unsigned char> encode_model(const FittedGP& gp) {
    const Eigen::Index n = gp.size();
    if (gp.L.rows() != n || gp.L.cols() != n || gp.alpha.size() != n) {
        throw ContractError("encode_model: fitted model has inconsistent dimensions");
    }
    std::vector<unsigned char> out;
    const std::size_t nn = static_cast<std::size_t>(n);
    out.reserve(4 + 8 + 8 * (7 + 4 * nn + nn + nn * (nn + 1) / 2));
    out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
    put_u64(out, static_cast<std::uint64_t>(n));
    for (int k = 0; k < kFeatureDim; ++k) {
        put_f64(out, gp.hyper.w[k]);
    }
    put_f64(out, gp.hyper.sigma_s);
    put_f64(out, gp.hyper.sigma_y);
    put_f64(out, gp.mean_const);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (int k = 0; k < kFeatureDim; ++k) {
            put_f64(out, gp.X(i, k));
        }
    }
    for (Eigen::Index i = 0; i < n; ++i) {
        put_f64(out, gp.alpha[i]);
    }
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j <= i; ++j) {
            put_f64(out, gp.L(i, j));
        }
    }
    return out;
}

FittedGP decode_model(const std::vector<unsigned char>& bytes) {
    if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw IoError("model file: bad magic (expected TGP1)");
    }
    std::size_t pos = 4;
    const std::uint64_t n = get_u64(bytes, pos);
    // Guard against absurd N before computing the expected size.
    if (n == 0 || n > (1ull << 24)) {
        throw IoError("model file: invalid sample count " + std::to_string(n));
    }
    const std::uint64_t expected = 12 + 8 * (7 + 4 * n + n + n * (n + 1) / 2);
    if (bytes.size() != expected) {
        throw IoError("model file: size " + std::to_string(bytes.size()) + " does not match expected " +
                      std::to_string(expected) + " for N=" + std::to_string(n));
    }
    const auto rows = static_cast<Eigen::Index>(n);
    FittedGP gp;
    for (int k = 0; k < kFeatureDim; ++k) {
        gp.hyper.w[k] = get_f64(bytes, pos);
    }
    gp.hyper.sigma_s = get_f64(bytes, pos);
    gp.hyper.sigma_y = get_f64(bytes, pos);
    gp.mean_const = get_f64(bytes, pos);
    gp.X.resize(rows, kFeatureDim);
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (int k = 0; k < kFeatureDim; ++k) {
            gp.X(i, k) = get_f64(bytes, pos);
        }
    }
    gp.alpha.resize(rows);
    for (Eigen::Index i = 0; i < rows; ++i) {
        gp.alpha[i] = get_f64(bytes, pos);
    }
    gp.L = Eigen::MatrixXd::Zero(rows, rows);
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j = 0; j <= i; ++j) {
            gp.L(i, j) = get_f64(bytes, pos);
        }
    }
    try {
        gp.hyper.validate();
    } catch (const ContractError& e) {
        throw IoError(std::string("model file: ") + e.what());
    }
    return gp;
}

void save_model(const FittedGP& gp, const std::filesystem::path& path) {
    const auto bytes = encode_model(gp);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open model file for writing: " + path.string());
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw IoError("failed writing model file: " + path.string());
    }
}

FittedGP load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open model file: " + path.string());
    }
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return decode_model(bytes);
    } catch (const IoError& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

}  // namespace thermacal::gp
