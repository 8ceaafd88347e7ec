#include "tripro/image.hpp"

#include "tripro/errors.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace tripro {

namespace {

cv::Mat to_mat(const Image8& image) {
    cv::Mat m(image.height, image.width, CV_8UC(image.channels));
    std::copy(image.data.begin(), image.data.end(), m.data);
    if (image.channels == 3) cv::cvtColor(m, m, cv::COLOR_RGB2BGR);
    return m;
}

Image8 from_mat(cv::Mat m) {
    if (m.channels() == 3) cv::cvtColor(m, m, cv::COLOR_BGR2RGB);
    if (!m.isContinuous()) m = m.clone();
    Image8 out(m.rows, m.cols, m.channels());
    std::copy(m.data, m.data + out.data.size(), out.data.begin());
    return out;
}

} // namespace

Image8 read_png(const std::filesystem::path& path) {
    cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
    if (m.empty()) throw InputError("cannot read image: " + path.string());
    if (m.depth() != CV_8U) throw InputError("expected 8-bit image: " + path.string());
    return from_mat(m);
}

void write_png(const std::filesystem::path& path, const Image8& image) {
    if (image.channels != 1 && image.channels != 3)
        throw InputError("write_png supports 1 or 3 channels");
    // Fixed compression level so identical images give identical bytes.
    const std::vector<int> params{cv::IMWRITE_PNG_COMPRESSION, 6};
    if (!cv::imwrite(path.string(), to_mat(image), params))
        throw InputError("cannot write image: " + path.string());
}

Image8 gaussian_blur(const Image8& image, double sigma) {
    if (sigma <= 0.0) return image;
    cv::Mat m = to_mat(image);
    cv::Mat out;
    cv::GaussianBlur(m, out, cv::Size(0, 0), sigma, sigma, cv::BORDER_REPLICATE);
    return from_mat(out);
}

Image8 resize_image(const Image8& image, int height, int width) {
    if (image.height == height && image.width == width) return image;
    cv::Mat out;
    const bool shrink = height < image.height && width < image.width;
    cv::resize(to_mat(image), out, cv::Size(width, height), 0, 0, shrink ? cv::INTER_AREA : cv::INTER_LINEAR);
    return from_mat(out);
}

} // namespace tripro
