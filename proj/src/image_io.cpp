#include "gahb/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

namespace gahb {

namespace {

std::size_t read_header_int(std::istream& in, const std::filesystem::path& path) {
  int ch = in.peek();
  while (in && (std::isspace(ch) || ch == '#')) {
    if (ch == '#') {
      std::string skip;
      std::getline(in, skip);
    } else {
      in.get();
    }
    ch = in.peek();
  }
  long v = -1;
  in >> v;
  if (!in || v < 0) throw ImageIoError("netpbm: malformed header in " + path.string());
  return std::size_t(v);
}

}  // namespace

Tensor4d read_netpbm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageIoError("cannot open " + path.string());
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (!in || magic[0] != 'P' || (magic[1] != '2' && magic[1] != '3' && magic[1] != '5' &&
                                 magic[1] != '6')) {
    throw ImageIoError("not a supported netpbm file: " + path.string());
  }
  const bool ascii = magic[1] == '2' || magic[1] == '3';
  const std::size_t channels = (magic[1] == '3' || magic[1] == '6') ? 3 : 1;
  const std::size_t w = read_header_int(in, path);
  const std::size_t h = read_header_int(in, path);
  const std::size_t maxval = read_header_int(in, path);
  if (w == 0 || h == 0 || maxval == 0 || maxval > 65535) {
    throw ImageIoError("netpbm: bad dimensions or maxval in " + path.string());
  }
  const std::size_t n = w * h * channels;
  std::vector<double> raw(n);
  if (ascii) {
    for (auto& v : raw) {
      long x = -1;
      in >> x;
      if (!in || x < 0) throw ImageIoError("netpbm: truncated pixel data in " + path.string());
      v = double(x);
    }
  } else {
    in.get();  // single whitespace after maxval
    const std::size_t bytes = maxval > 255 ? 2 : 1;
    std::vector<unsigned char> buf(n * bytes);
    in.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size()));
    if (std::size_t(in.gcount()) != buf.size()) {
      throw ImageIoError("netpbm: truncated pixel data in " + path.string());
    }
    for (std::size_t i = 0; i < n; ++i) {
      raw[i] = bytes == 2 ? double((buf[2 * i] << 8) | buf[2 * i + 1]) : double(buf[i]);
    }
  }
  Tensor4d out(image_dims(h, w));
  for (std::size_t i = 0; i < w * h; ++i) {
    double s = 0.0;
    for (std::size_t c = 0; c < channels; ++c) s += raw[i * channels + c];
    out[i] = s / double(channels) / double(maxval);
  }
  return out;
}

void write_pgm(const std::filesystem::path& path, const Tensor4d& image, double lo, double hi) {
  const Dims& d = image.dims();
  const std::size_t h = d.height, w = d.width;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ImageIoError("cannot write " + path.string());
  out << "P5\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> buf(w * h);
  const double span = hi > lo ? hi - lo : 1.0;
  for (std::size_t i = 0; i < w * h; ++i) {
    const double v = std::clamp((image[i] - lo) / span, 0.0, 1.0);
    buf[i] = static_cast<unsigned char>(std::lround(v * 255.0));
  }
  out.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size()));
  if (!out) throw ImageIoError("short write to " + path.string());
}

Tensor4d mosaic(std::span<const Tensor4d> tiles, std::size_t columns) {
  if (tiles.empty()) return Tensor4d(image_dims(1, 1));
  const std::size_t th = tiles.front().dims().height, tw = tiles.front().dims().width;
  columns = std::max<std::size_t>(1, std::min(columns, tiles.size()));
  const std::size_t rows = (tiles.size() + columns - 1) / columns;
  const std::size_t H = rows * (th + 1) + 1, W = columns * (tw + 1) + 1;
  Tensor4d out(image_dims(H, W), 1.0);
  for (std::size_t t = 0; t < tiles.size(); ++t) {
    const auto px = tiles[t].data();
    const auto [mn, mx] = std::minmax_element(px.begin(), px.end());
    const double span = *mx > *mn ? *mx - *mn : 1.0;
    const std::size_t r0 = (t / columns) * (th + 1) + 1, c0 = (t % columns) * (tw + 1) + 1;
    for (std::size_t i = 0; i < th; ++i) {
      for (std::size_t j = 0; j < tw; ++j) {
        out(0, 0, r0 + i, c0 + j) = (px[i * tw + j] - *mn) / span;
      }
    }
  }
  return out;
}

}  // namespace gahb
