#include "asn/frame.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <string>

#include "asn/error.hpp"

namespace asn {

FramePlane::FramePlane(int width, int height, std::uint8_t fill)
    : FramePlane(width, height,
                 std::vector<std::uint8_t>(static_cast<std::size_t>(std::max(width, 0)) * std::max(height, 0), fill)) {}

FramePlane::FramePlane(int width, int height, std::vector<std::uint8_t> samples)
    : width_(width), height_(height), samples_(std::move(samples)) {
  require(width >= 8 && height >= 8, "FramePlane: width and height must be >= 8");
  require(samples_.size() == static_cast<std::size_t>(width) * height,
          "FramePlane: sample count does not match width x height");
}

FramePlane FramePlane::crop(int x, int y, int w, int h) const {
  require(x >= 0 && y >= 0 && x + w <= width_ && y + h <= height_, "FramePlane::crop: window outside frame");
  std::vector<std::uint8_t> out(static_cast<std::size_t>(w) * h);
  for (int r = 0; r < h; ++r) {
    const auto* src = samples_.data() + static_cast<std::size_t>(y + r) * width_ + x;
    std::copy(src, src + w, out.begin() + static_cast<std::ptrdiff_t>(r) * w);
  }
  return FramePlane(w, h, std::move(out));
}

void FramePlane::paste(const FramePlane& patch, int x, int y) {
  require(x >= 0 && y >= 0 && x + patch.width() <= width_ && y + patch.height() <= height_,
          "FramePlane::paste: patch outside frame");
  for (int r = 0; r < patch.height(); ++r) {
    auto src = patch.samples().subspan(static_cast<std::size_t>(r) * patch.width(), patch.width());
    std::copy(src.begin(), src.end(), samples_.begin() + static_cast<std::ptrdiff_t>(y + r) * width_ + x);
  }
}

namespace {

// Next whitespace-delimited header token, skipping '#' comments.
std::string pgm_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  return tok;
}

int pgm_int(std::istream& in, const std::filesystem::path& path) {
  const std::string tok = pgm_token(in);
  try {
    std::size_t used = 0;
    const int v = std::stoi(tok, &used);
    if (used != tok.size()) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw FormatError("PGM header: bad integer '" + tok + "' in " + path.string());
  }
}

}  // namespace

FramePlane read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  if (pgm_token(in) != "P5") throw FormatError("not a binary PGM (P5): " + path.string());
  const int w = pgm_int(in, path);
  const int h = pgm_int(in, path);
  const int maxval = pgm_int(in, path);
  if (maxval != 255) throw FormatError("PGM maxval must be 255: " + path.string());
  if (w <= 0 || h <= 0) throw FormatError("PGM: bad dimensions in " + path.string());
  std::vector<std::uint8_t> samples(static_cast<std::size_t>(w) * h);
  in.read(reinterpret_cast<char*>(samples.data()), static_cast<std::streamsize>(samples.size()));
  if (in.gcount() != static_cast<std::streamsize>(samples.size()))
    throw FormatError("PGM: truncated raster in " + path.string());
  return FramePlane(w, h, std::move(samples));
}

void write_pgm(const std::filesystem::path& path, const FramePlane& frame) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "P5\n" << frame.width() << ' ' << frame.height() << "\n255\n";
  out.write(reinterpret_cast<const char*>(frame.samples().data()), static_cast<std::streamsize>(frame.samples().size()));
  if (!out) throw FormatError("write failed: " + path.string());
}

std::vector<std::filesystem::path> list_pgm(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw PreconditionError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".pgm") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  return files;
}

}  // namespace asn
