#include "fffvdi/metrics.hpp"

#include "fffvdi/flowlab.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <vector>

namespace fffvdi::metrics {
namespace {

void check_pair(const torch::Tensor& a, const torch::Tensor& b, const char* who) {
    require(a.sizes() == b.sizes(), ErrorKind::Data,
            std::string(who) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
    require(a.dim() == 4, ErrorKind::Data, std::string(who) + ": expected [S,C,H,W], got " + shape_str(a));
}

double to_psnr(double mse) {
    if (mse <= 0.0) {
        return kPsnrCap;
    }
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

Eigen::MatrixXd to_eigen(const torch::Tensor& t) {
    auto m = t.detach().to(torch::kFloat64).cpu().contiguous();
    require(m.dim() == 2, ErrorKind::Data, "expected a matrix, got " + shape_str(t));
    Eigen::MatrixXd out(m.size(0), m.size(1));
    auto acc = m.accessor<double, 2>();
    for (int64_t i = 0; i < m.size(0); ++i) {
        for (int64_t j = 0; j < m.size(1); ++j) {
            out(i, j) = acc[i][j];
        }
    }
    return out;
}

Eigen::MatrixXd spd_sqrt(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
    Eigen::VectorXd d = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
}

// Separable Gaussian filtering with "valid" borders.
std::vector<double> gaussian_window(int size, double sigma) {
    std::vector<double> w(size);
    double sum = 0.0;
    for (int i = 0; i < size; ++i) {
        double d = i - (size - 1) / 2.0;
        w[i] = std::exp(-d * d / (2.0 * sigma * sigma));
        sum += w[i];
    }
    for (auto& v : w) {
        v /= sum;
    }
    return w;
}

std::vector<double> filter_valid(const std::vector<double>& img, int h, int w, const std::vector<double>& k) {
    const int n = static_cast<int>(k.size());
    const int oh = h - n + 1;
    const int ow = w - n + 1;
    std::vector<double> rows(static_cast<size_t>(h) * ow, 0.0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int i = 0; i < n; ++i) {
                s += k[i] * img[static_cast<size_t>(y) * w + x + i];
            }
            rows[static_cast<size_t>(y) * ow + x] = s;
        }
    }
    std::vector<double> out(static_cast<size_t>(oh) * ow, 0.0);
    for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int i = 0; i < n; ++i) {
                s += k[i] * rows[static_cast<size_t>(y + i) * ow + x];
            }
            out[static_cast<size_t>(y) * ow + x] = s;
        }
    }
    return out;
}

}  // namespace

double psnr(const torch::Tensor& a, const torch::Tensor& b) {
    check_pair(a, b, "psnr");
    auto diff = (a.to(torch::kFloat64) - b.to(torch::kFloat64)).pow(2);
    auto per_frame = diff.reshape({a.size(0), -1}).mean(1);
    double total = 0.0;
    for (int64_t i = 0; i < a.size(0); ++i) {
        total += to_psnr(per_frame[i].item<double>());
    }
    return total / static_cast<double>(a.size(0));
}

double psnr_masked(const torch::Tensor& a, const torch::Tensor& b, const torch::Tensor& masks) {
    check_pair(a, b, "psnr_masked");
    require(masks.dim() == 4 && masks.size(0) == a.size(0) && masks.size(1) == 1 && masks.size(2) == a.size(2) &&
                masks.size(3) == a.size(3),
            ErrorKind::Data, "psnr_masked: mask shape " + shape_str(masks) + " does not match " + shape_str(a));
    auto m = masks.to(torch::kFloat64);
    double count = m.sum().item<double>() * static_cast<double>(a.size(1));
    if (count <= 0.0) {
        return kPsnrCap;
    }
    double sse = ((a.to(torch::kFloat64) - b.to(torch::kFloat64)).pow(2) * m).sum().item<double>();
    return to_psnr(sse / count);
}

double ssim(const torch::Tensor& a, const torch::Tensor& b, const SsimOptions& options) {
    check_pair(a, b, "ssim");
    const int S = static_cast<int>(a.size(0));
    const int C = static_cast<int>(a.size(1));
    const int H = static_cast<int>(a.size(2));
    const int W = static_cast<int>(a.size(3));
    require(H >= options.window && W >= options.window, ErrorKind::Data,
            "ssim: frames " + std::to_string(H) + "x" + std::to_string(W) + " smaller than the " +
                std::to_string(options.window) + "px window");
    const double c1 = std::pow(options.k1 * options.data_range, 2);
    const double c2 = std::pow(options.k2 * options.data_range, 2);
    auto k = gaussian_window(options.window, options.sigma);
    auto ad = a.to(torch::kFloat64).contiguous();
    auto bd = b.to(torch::kFloat64).contiguous();
    const double* pa = ad.data_ptr<double>();
    const double* pb = bd.data_ptr<double>();
    const size_t plane = static_cast<size_t>(H) * W;

    double total = 0.0;
    for (int s = 0; s < S; ++s) {
        double frame = 0.0;
        for (int c = 0; c < C; ++c) {
            size_t off = (static_cast<size_t>(s) * C + c) * plane;
            std::vector<double> x(pa + off, pa + off + plane);
            std::vector<double> y(pb + off, pb + off + plane);
            std::vector<double> xx(plane), yy(plane), xy(plane);
            for (size_t i = 0; i < plane; ++i) {
                xx[i] = x[i] * x[i];
                yy[i] = y[i] * y[i];
                xy[i] = x[i] * y[i];
            }
            auto mx = filter_valid(x, H, W, k);
            auto my = filter_valid(y, H, W, k);
            auto sxx = filter_valid(xx, H, W, k);
            auto syy = filter_valid(yy, H, W, k);
            auto sxy = filter_valid(xy, H, W, k);
            double acc = 0.0;
            for (size_t i = 0; i < mx.size(); ++i) {
                double vx = sxx[i] - mx[i] * mx[i];
                double vy = syy[i] - my[i] * my[i];
                double cov = sxy[i] - mx[i] * my[i];
                acc += ((2 * mx[i] * my[i] + c1) * (2 * cov + c2)) /
                       ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
            }
            frame += acc / static_cast<double>(mx.size());
        }
        total += frame / C;
    }
    return total / S;
}

double e_warp(const torch::Tensor& clip, const torch::Tensor& flows, const torch::Tensor& valid) {
    require(clip.dim() == 4, ErrorKind::Data, "e_warp: clip must be [S,C,H,W]");
    require(flows.defined() && flows.dim() == 4 && flows.size(0) == clip.size(0) - 1 && flows.size(1) == 2,
            ErrorKind::Data, "e_warp: need [S-1,2,H,W] flows for clip " + shape_str(clip));
    require(valid.defined() && valid.size(0) == flows.size(0), ErrorKind::Data, "e_warp: missing validity masks");
    auto frames = clip.to(torch::kFloat64);
    auto next = frames.narrow(0, 1, frames.size(0) - 1);
    auto cur = frames.narrow(0, 0, frames.size(0) - 1);
    auto w = flowlab::warp(next, flows.to(torch::kFloat64));
    auto weight = (w.validity > 0.5).to(torch::kFloat64) * valid.to(torch::kFloat64);
    auto sq = (w.values - cur).pow(2).mean(1, true) * weight;
    double total = 0.0;
    int pairs = 0;
    for (int64_t i = 0; i < sq.size(0); ++i) {
        double n = weight[i].sum().item<double>();
        if (n > 0) {
            total += sq[i].sum().item<double>() / n;
            ++pairs;
        }
    }
    return pairs ? total / pairs : 0.0;
}

torch::Tensor consistency_mask(const torch::Tensor& forward, const torch::Tensor& backward, double threshold) {
    require(forward.sizes() == backward.sizes(), ErrorKind::Data, "consistency_mask: flow shape mismatch");
    auto f = forward.dim() == 3 ? forward.unsqueeze(0) : forward;
    auto b = backward.dim() == 3 ? backward.unsqueeze(0) : backward;
    auto round_trip = flowlab::compose_pair(f, b);
    auto err = round_trip.pow(2).sum(1, true).sqrt();
    auto out = (err < threshold).to(forward.scalar_type());
    return forward.dim() == 3 ? out.squeeze(0) : out;
}

double trace_sqrt_product(const torch::Tensor& a, const torch::Tensor& b) {
    Eigen::MatrixXd ma = to_eigen(a);
    Eigen::MatrixXd mb = to_eigen(b);
    require(ma.rows() == ma.cols() && mb.rows() == mb.cols() && ma.rows() == mb.rows(), ErrorKind::Data,
            "trace_sqrt_product: need equal square matrices");
    Eigen::MatrixXd ra = spd_sqrt(ma);
    Eigen::MatrixXd inner = ra * mb * ra;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
    return es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
}

double frechet_distance(const torch::Tensor& features_a, const torch::Tensor& features_b, double eps) {
    require(features_a.dim() == 2 && features_b.dim() == 2 && features_a.size(1) == features_b.size(1),
            ErrorKind::Data, "frechet_distance: feature shapes " + shape_str(features_a) + " vs " + shape_str(features_b));
    require(features_a.size(0) >= 2 && features_b.size(0) >= 2, ErrorKind::Data,
            "frechet_distance: need at least 2 samples per set");
    Eigen::MatrixXd fa = to_eigen(features_a);
    Eigen::MatrixXd fb = to_eigen(features_b);
    Eigen::VectorXd mu_a = fa.colwise().mean();
    Eigen::VectorXd mu_b = fb.colwise().mean();
    Eigen::MatrixXd ca = fa.rowwise() - mu_a.transpose();
    Eigen::MatrixXd cb = fb.rowwise() - mu_b.transpose();
    const auto d = fa.cols();
    Eigen::MatrixXd sigma_a = ca.transpose() * ca / static_cast<double>(fa.rows() - 1);
    Eigen::MatrixXd sigma_b = cb.transpose() * cb / static_cast<double>(fb.rows() - 1);
    sigma_a += eps * Eigen::MatrixXd::Identity(d, d);
    sigma_b += eps * Eigen::MatrixXd::Identity(d, d);

    Eigen::MatrixXd ra = spd_sqrt(sigma_a);
    Eigen::MatrixXd inner = ra * sigma_b * ra;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
    double tr_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
    double dist = (mu_a - mu_b).squaredNorm() + sigma_a.trace() + sigma_b.trace() - 2.0 * tr_sqrt;
    return std::max(dist, 0.0);
}

}  // namespace fffvdi::metrics
