#include "ridgealign/image.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

namespace ridgealign {

namespace {

// Reads the next whitespace-delimited header token, skipping '#' comments.
std::string next_token(std::istream& in) {
  std::string tok;
  char ch;
  while (in.get(ch)) {
    if (ch == '#') {
      std::string skip;
      std::getline(in, skip);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(ch);
  }
  return tok;
}

}  // namespace

Image read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image '" + path.string() + "'");
  if (next_token(in) != "P5") throw IoError("'" + path.string() + "' is not a binary PGM (P5)");
  int width = 0, height = 0, maxval = 0;
  try {
    width = std::stoi(next_token(in));
    height = std::stoi(next_token(in));
    maxval = std::stoi(next_token(in));
  } catch (const std::exception&) {
    throw IoError("malformed PGM header in '" + path.string() + "'");
  }
  if (width <= 0 || height <= 0 || maxval <= 0 || maxval > 65535) {
    throw IoError("unsupported PGM geometry in '" + path.string() + "'");
  }
  const int bytes_per = maxval > 255 ? 2 : 1;
  std::vector<unsigned char> raw(static_cast<std::size_t>(width) * height * bytes_per);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size())) throw IoError("truncated PGM '" + path.string() + "'");
  Image img(height, width);
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      const std::size_t at = (static_cast<std::size_t>(r) * width + c) * bytes_per;
      const int v = bytes_per == 2 ? (raw[at] << 8) | raw[at + 1] : raw[at];
      img(r, c) = static_cast<double>(v) / maxval;
    }
  }
  return img;
}

void write_pgm(const std::filesystem::path& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << "P5\n" << img.cols() << " " << img.rows() << "\n255\n";
  std::vector<unsigned char> raw(static_cast<std::size_t>(img.size()));
  for (Index r = 0; r < img.rows(); ++r)
    for (Index c = 0; c < img.cols(); ++c)
      raw[r * img.cols() + c] = static_cast<unsigned char>(std::lround(std::clamp(img(r, c), 0.0, 1.0) * 255.0));
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

Mask read_mask_pgm(const std::filesystem::path& path) { return read_pgm(path) >= 0.5; }

void write_mask_pgm(const std::filesystem::path& path, const Mask& mask) {
  write_pgm(path, mask.cast<double>());
}

void write_png(const std::filesystem::path& path, const Image& red, const Image& green, const Image& blue) {
  if (red.rows() != green.rows() || red.rows() != blue.rows() || red.cols() != green.cols() ||
      red.cols() != blue.cols()) {
    throw DimensionError("write_png: channel dimensions differ");
  }
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.string().c_str(), "wb"), &std::fclose);
  if (!fp) throw IoError("cannot open '" + path.string() + "' for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng failed writing '" + path.string() + "'");
  }
  const auto width = static_cast<png_uint_32>(red.cols());
  const auto height = static_cast<png_uint_32>(red.rows());
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, width, height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_byte> row(static_cast<std::size_t>(width) * 3);
  auto to_byte = [](double v) { return static_cast<png_byte>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); };
  for (png_uint_32 r = 0; r < height; ++r) {
    for (png_uint_32 c = 0; c < width; ++c) {
      row[3 * c] = to_byte(red(r, c));
      row[3 * c + 1] = to_byte(green(r, c));
      row[3 * c + 2] = to_byte(blue(r, c));
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace ridgealign
