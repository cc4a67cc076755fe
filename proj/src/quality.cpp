#include "sad/quality.hpp"

#include "sad/accum.hpp"

#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace sad {
namespace {

void check_same(const ImageBuffer& a, const ImageBuffer& b) {
    if (a.width != b.width || a.height != b.height)
        throw std::invalid_argument("quality: image size mismatch");
    if (a.width < 1 || a.height < 1) throw std::invalid_argument("quality: empty image");
}

constexpr int kWin = 11;
constexpr double kSigma = 1.5;

std::array<double, kWin> gauss_kernel() {
    std::array<double, kWin> k;
    double sum = 0;
    for (int i = 0; i < kWin; i++) {
        double d = i - (kWin - 1) / 2;
        k[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
        sum += k[i];
    }
    for (auto& v : k) v /= sum;
    return k;
}

// Valid-mode separable blur: (w x h) -> (w-10 x h-10).
std::vector<double> blur_valid(const std::vector<double>& src, int w, int h) {
    auto k = gauss_kernel();
    int ow = w - kWin + 1, oh = h - kWin + 1;
    std::vector<double> tmp(static_cast<size_t>(ow) * h);
    for (int y = 0; y < h; y++)
        for (int x = 0; x < ow; x++) {
            double s = 0;
            for (int t = 0; t < kWin; t++) s += k[t] * src[static_cast<size_t>(y) * w + x + t];
            tmp[static_cast<size_t>(y) * ow + x] = s;
        }
    std::vector<double> out(static_cast<size_t>(ow) * oh);
    for (int y = 0; y < oh; y++)
        for (int x = 0; x < ow; x++) {
            double s = 0;
            for (int t = 0; t < kWin; t++) s += k[t] * tmp[static_cast<size_t>(y + t) * ow + x];
            out[static_cast<size_t>(y) * ow + x] = s;
        }
    return out;
}

} // namespace

double mse(const ImageBuffer& a, const ImageBuffer& b) {
    check_same(a, b);
    Accum acc;
    size_t n = a.data.size();
    for (size_t i = 0; i < n; i++) {
        double d = a.data[i] - b.data[i];
        acc.add(d * d);
    }
    return acc.value() / static_cast<double>(n);
}

double psnr_from_loss(double loss) {
    double m = loss / 3.0;
    if (m <= 0) return 99.0;
    double v = 10.0 * std::log10(1.0 / m);
    return v > 99.0 ? 99.0 : v;
}

double psnr(const ImageBuffer& a, const ImageBuffer& b) {
    double m = mse(a, b);
    if (m <= 0) return 99.0;
    double v = 10.0 * std::log10(1.0 / m);
    return v > 99.0 ? 99.0 : v;
}

double ssim(const ImageBuffer& a, const ImageBuffer& b) {
    check_same(a, b);
    if (a.width < kWin || a.height < kWin)
        throw std::invalid_argument("ssim: image smaller than the window");
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    int w = a.width, h = a.height;
    size_t npx = static_cast<size_t>(w) * h;
    Accum total;
    size_t count = 0;
    std::vector<double> xa(npx), xb(npx), xaa(npx), xbb(npx), xab(npx);
    for (int ch = 0; ch < 3; ch++) {
        for (size_t i = 0; i < npx; i++) {
            double va = a.data[i * 3 + ch], vb = b.data[i * 3 + ch];
            xa[i] = va;
            xb[i] = vb;
            xaa[i] = va * va;
            xbb[i] = vb * vb;
            xab[i] = va * vb;
        }
        auto ma = blur_valid(xa, w, h);
        auto mb = blur_valid(xb, w, h);
        auto maa = blur_valid(xaa, w, h);
        auto mbb = blur_valid(xbb, w, h);
        auto mab = blur_valid(xab, w, h);
        for (size_t i = 0; i < ma.size(); i++) {
            double mua = ma[i], mub = mb[i];
            double va = maa[i] - mua * mua;
            double vb = mbb[i] - mub * mub;
            double cov = mab[i] - mua * mub;
            double v = ((2 * mua * mub + c1) * (2 * cov + c2)) /
                       ((mua * mua + mub * mub + c1) * (va + vb + c2));
            total.add(v);
            count++;
        }
    }
    return total.value() / static_cast<double>(count);
}

} // namespace sad
