// SPDX-License-Identifier: Apache-2.0
#include "segdistill/image_io.hpp"

#include <png.h>

#include <cstring>
#include <string>

#include "segdistill/error.hpp"

namespace segdistill::io {

void write_png(const std::filesystem::path& path, const Image8& image) {
  if (image.channels != 1 && image.channels != 3) throw ValueError("PNG writer supports 1 or 3 channels");
  if (image.pixels.size() != static_cast<std::size_t>(image.width) * image.height * image.channels) {
    throw ValueError("PNG pixel buffer does not match its dimensions");
  }
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = image.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&img, path.c_str(), 0, image.pixels.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw FormatError(FormatError::Kind::kIo, "cannot write " + path.string() + ": " + msg);
  }
}

Image8 read_png(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) {
    throw FormatError(FormatError::Kind::kIo, "cannot read " + path.string() + ": no such file");
  }
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw FormatError(FormatError::Kind::kMalformed, path.string() + ": " + msg);
  }
  if (img.format & PNG_FORMAT_FLAG_ALPHA) {
    png_image_free(&img);
    throw FormatError(FormatError::Kind::kMalformed, path.string() + ": alpha channel not supported");
  }
  Image8 out;
  out.width = static_cast<int>(img.width);
  out.height = static_cast<int>(img.height);
  out.channels = (img.format & PNG_FORMAT_FLAG_COLOR) ? 3 : 1;
  img.format = out.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  out.pixels.resize(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw FormatError(FormatError::Kind::kMalformed, path.string() + ": " + msg);
  }
  return out;
}

}  // namespace segdistill::io
