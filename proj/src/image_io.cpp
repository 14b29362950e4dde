#include "baa/image_io.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace baa {

std::optional<Raster> read_image(const std::filesystem::path& path) {
    cv::Mat mat;
    try {
        mat = cv::imread(path.string(), cv::IMREAD_ANYDEPTH | cv::IMREAD_ANYCOLOR);
    } catch (const cv::Exception&) {
        return std::nullopt;
    }
    if (mat.empty())
        return std::nullopt;

    if (mat.depth() == CV_16U)
        mat.convertTo(mat, CV_8U, 1.0 / 257.0);
    else if (mat.depth() != CV_8U)
        mat.convertTo(mat, CV_8U);

    switch (mat.channels()) {
    case 1:
        break;
    case 3:
        cv::cvtColor(mat, mat, cv::COLOR_BGR2RGB);
        break;
    case 4:
        cv::cvtColor(mat, mat, cv::COLOR_BGRA2RGB);
        break;
    default:
        return std::nullopt;
    }
    if (!mat.isContinuous())
        mat = mat.clone();

    Raster raster;
    raster.height = mat.rows;
    raster.width = mat.cols;
    raster.channels = mat.channels();
    raster.pixels.assign(mat.data, mat.data + mat.total() * mat.elemSize());
    return raster;
}

bool write_png(const std::filesystem::path& path, const Raster& raster) {
    if (raster.empty() || (raster.channels != 1 && raster.channels != 3))
        return false;
    const int type = raster.channels == 1 ? CV_8UC1 : CV_8UC3;
    cv::Mat view(raster.height, raster.width, type, const_cast<std::uint8_t*>(raster.pixels.data()));
    cv::Mat out = view;
    if (raster.channels == 3)
        cv::cvtColor(view, out, cv::COLOR_RGB2BGR);
    try {
        return cv::imwrite(path.string(), out);
    } catch (const cv::Exception&) {
        return false;
    }
}

} // namespace baa
