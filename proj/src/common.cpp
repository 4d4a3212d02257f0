#include "exitrisk/common.hpp"

#include <algorithm>
#include <cstdlib>
#include <thread>
#include <vector>

namespace exitrisk {

void require_psd(const Mat& cov, double slack, const std::string& context) {
    if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-8) {
        throw NumericalConditioningError(context + ": covariance not symmetric");
    }
    Eigen::SelfAdjointEigenSolver<Mat> es(cov, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() < -slack) {
        throw NumericalConditioningError(
            context + ": covariance lost PSD, min eigenvalue " +
            std::to_string(es.eigenvalues().minCoeff()));
    }
}

Mat psd_sqrt(const Mat& cov) {
    Eigen::SelfAdjointEigenSolver<Mat> es(cov);
    Vec lam = es.eigenvalues().cwiseMax(0.0);
    return es.eigenvectors() * lam.cwiseSqrt().asDiagonal() *
           es.eigenvectors().transpose();
}

int max_threads() {
    int hw = static_cast<int>(std::thread::hardware_concurrency());
    if (hw < 1) hw = 1;
    if (const char* env = std::getenv("EXITRISK_THREADS")) {
        char* end = nullptr;
        long v = std::strtol(env, &end, 10);
        if (end != env && v >= 1) hw = std::min<long>(v, 1024);
    }
    return hw;
}

void parallel_for_index(int n, int num_threads, const std::function<void(int)>& f) {
    num_threads = std::max(1, std::min(num_threads, n));
    if (num_threads == 1) {
        for (int i = 0; i < n; ++i) f(i);
        return;
    }
    std::vector<std::thread> workers;
    workers.reserve(num_threads);
    std::vector<std::exception_ptr> errors(num_threads);
    for (int w = 0; w < num_threads; ++w) {
        workers.emplace_back([&, w] {
            try {
                for (int i = w; i < n; i += num_threads) f(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : workers) t.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

}  // namespace exitrisk
