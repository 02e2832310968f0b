#include "mirrorseg/image_io.hpp"

#include <cmath>
#include <fstream>

#include "mirrorseg/errors.hpp"

namespace mseg {

namespace {

// Reads the next header token, skipping whitespace and '#' comment lines.
int read_header_int(std::istream& in, const std::filesystem::path& path) {
  int ch = in.get();
  while (ch != EOF) {
    if (ch == '#') {
      while (ch != EOF && ch != '\n') ch = in.get();
      ch = in.get();
    } else if (std::isspace(ch)) {
      ch = in.get();
    } else {
      break;
    }
  }
  if (ch == EOF || !std::isdigit(ch)) {
    throw IoError("malformed PNM header in " + path.string());
  }
  int value = 0;
  while (ch != EOF && std::isdigit(ch)) {
    value = value * 10 + (ch - '0');
    ch = in.get();
  }
  if (ch != EOF) in.unget();
  return value;
}

}  // namespace

ImageU8 read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char m0 = 0, m1 = 0;
  in.get(m0);
  in.get(m1);
  ImageU8 img;
  if (m0 == 'P' && m1 == '5') {
    img.channels = 1;
  } else if (m0 == 'P' && m1 == '6') {
    img.channels = 3;
  } else {
    throw IoError("unsupported PNM magic in " + path.string() + " (need binary P5 or P6)");
  }
  img.width = read_header_int(in, path);
  img.height = read_header_int(in, path);
  const int maxval = read_header_int(in, path);
  if (img.width < 1 || img.height < 1) throw IoError("bad PNM dimensions in " + path.string());
  if (maxval < 1 || maxval > 255) {
    throw IoError("unsupported PNM maxval " + std::to_string(maxval) + " in " + path.string());
  }
  in.get();  // single whitespace byte after maxval
  const std::size_t count =
      static_cast<std::size_t>(img.width) * img.height * img.channels;
  img.pixels.resize(count);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(count));
  if (static_cast<std::size_t>(in.gcount()) != count) {
    throw IoError("truncated PNM payload in " + path.string());
  }
  if (maxval != 255) {
    for (auto& p : img.pixels) {
      p = static_cast<std::uint8_t>(std::lround(p * 255.0 / maxval));
    }
  }
  return img;
}

void write_pnm(const std::filesystem::path& path, const ImageU8& img) {
  if (img.channels != 1 && img.channels != 3) throw IoError("write_pnm: channels must be 1 or 3");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << (img.channels == 1 ? "P5" : "P6") << "\n"
      << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

Tensor image_to_tensor(const ImageU8& img) {
  Tensor t(1, img.channels, img.height, img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c) {
        const std::uint8_t v = img.pixels[(static_cast<std::size_t>(y) * img.width + x) * img.channels + c];
        t.at(0, c, y, x) = static_cast<Real>(v) / 255;
      }
  return t;
}

ImageU8 tensor_to_image(const Tensor& t) {
  if (t.n() != 1 || (t.c() != 1 && t.c() != 3)) {
    throw ShapeError("tensor_to_image: need (1, 1|3, H, W), got " + t.shape_str());
  }
  ImageU8 img;
  img.width = t.w();
  img.height = t.h();
  img.channels = t.c();
  img.pixels.resize(static_cast<std::size_t>(t.w()) * t.h() * t.c());
  for (int y = 0; y < t.h(); ++y)
    for (int x = 0; x < t.w(); ++x)
      for (int c = 0; c < t.c(); ++c) {
        Real v = t.at(0, c, y, x);
        if (v < 0) v = 0;
        if (v > 1) v = 1;
        img.pixels[(static_cast<std::size_t>(y) * t.w() + x) * t.c() + c] =
            static_cast<std::uint8_t>(std::lround(v * 255));
      }
  return img;
}

Tensor mask_to_tensor(const ImageU8& img, int threshold) {
  if (img.channels != 1) throw DataError("mask image must be single-channel");
  Tensor t(1, 1, img.height, img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      t.at(0, 0, y, x) = img.pixels[static_cast<std::size_t>(y) * img.width + x] >= threshold
                             ? Real(1)
                             : Real(0);
    }
  return t;
}

ImageU8 mask_to_image(const Tensor& t) {
  if (t.n() != 1 || t.c() != 1) {
    throw ShapeError("mask_to_image: need (1, 1, H, W), got " + t.shape_str());
  }
  ImageU8 img;
  img.width = t.w();
  img.height = t.h();
  img.channels = 1;
  img.pixels.resize(static_cast<std::size_t>(t.w()) * t.h());
  for (int y = 0; y < t.h(); ++y)
    for (int x = 0; x < t.w(); ++x) {
      img.pixels[static_cast<std::size_t>(y) * t.w() + x] = t.at(0, 0, y, x) >= Real(0.5) ? 255 : 0;
    }
  return img;
}

}  // namespace mseg
