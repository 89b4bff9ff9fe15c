#include "data/netpbm.hpp"

#include <cctype>
#include <fstream>
#include <string>

#include "common/error.hpp"

namespace ufo {

namespace {

void write_netpbm(const std::filesystem::path& path, const Image8& img, int channels, const char* magic) {
  if (img.channels != channels || img.width <= 0 || img.height <= 0 ||
      img.pixels.size() != static_cast<std::size_t>(img.width) * img.height * channels) {
    throw DataError("cannot write " + path.string() + ": image buffer does not match " + std::to_string(channels) +
                    "-channel " + std::to_string(img.width) + "x" + std::to_string(img.height));
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << magic << '\n' << img.width << ' ' << img.height << '\n' << 255 << '\n';
  os.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!os) throw IoError("failed writing " + path.string());
}

int read_header_int(std::istream& is, const std::filesystem::path& path) {
  int c = is.get();
  while (is && (std::isspace(c) || c == '#')) {
    if (c == '#') {
      while (is && c != '\n') c = is.get();
    }
    c = is.get();
  }
  if (!is || !std::isdigit(c)) throw IoError("corrupt Netpbm header in " + path.string());
  long v = 0;
  while (is && std::isdigit(c)) {
    v = v * 10 + (c - '0');
    if (v > 1 << 20) throw IoError("implausible Netpbm dimension in " + path.string());
    c = is.get();
  }
  if (!std::isspace(c)) throw IoError("corrupt Netpbm header in " + path.string());
  return static_cast<int>(v);
}

}  // namespace

void write_ppm(const std::filesystem::path& path, const Image8& img) { write_netpbm(path, img, 3, "P6"); }
void write_pgm(const std::filesystem::path& path, const Image8& img) { write_netpbm(path, img, 1, "P5"); }

Image8 read_netpbm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  char magic[2] = {0, 0};
  is.read(magic, 2);
  if (!is || magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6')) {
    throw IoError("not a binary PGM/PPM file: " + path.string());
  }
  Image8 img;
  img.channels = magic[1] == '6' ? 3 : 1;
  img.width = read_header_int(is, path);
  img.height = read_header_int(is, path);
  const int maxval = read_header_int(is, path);
  if (maxval != 255) throw IoError("unsupported maxval " + std::to_string(maxval) + " in " + path.string());
  if (img.width <= 0 || img.height <= 0) throw IoError("empty image in " + path.string());
  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height * img.channels);
  is.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (is.gcount() != static_cast<std::streamsize>(img.pixels.size())) {
    throw IoError("truncated pixel data in " + path.string());
  }
  return img;
}

}  // namespace ufo
