#include "asn/toy_corpus.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "asn/error.hpp"

namespace asn::dataset {

namespace {

class Canvas {
 public:
  Canvas(int w, int h) : w_(w), h_(h), px_(static_cast<std::size_t>(w) * h, 0.0) {}
  double& at(int x, int y) { return px_[static_cast<std::size_t>(y) * w_ + x]; }
  int w() const { return w_; }
  int h() const { return h_; }
  std::vector<double>& pixels() { return px_; }

 private:
  int w_, h_;
  std::vector<double> px_;
};

struct Rng {
  std::mt19937_64 engine;
  double uniform(double lo, double hi) {
    return lo + (hi - lo) * static_cast<double>(engine() >> 11) * (1.0 / 9007199254740992.0);
  }
  int integer(int lo, int hi) { return lo + static_cast<int>(engine() % static_cast<std::uint64_t>(hi - lo + 1)); }
  double normal() {
    const double u1 = std::max(uniform(0.0, 1.0), 1e-12);
    const double u2 = uniform(0.0, 1.0);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }
};

void gradient_background(Canvas& c, Rng& rng) {
  const double angle = rng.uniform(0.0, 6.2831853);
  const double lo = rng.uniform(20.0, 120.0);
  const double hi = rng.uniform(130.0, 235.0);
  const double dx = std::cos(angle), dy = std::sin(angle);
  const double span = std::abs(dx) * c.w() + std::abs(dy) * c.h();
  for (int y = 0; y < c.h(); ++y)
    for (int x = 0; x < c.w(); ++x) {
      double t = (dx * x + dy * y) / span;
      t -= std::floor(t);
      c.at(x, y) = lo + (hi - lo) * t;
    }
}

void rectangles(Canvas& c, Rng& rng) {
  const int count = rng.integer(3, 7);
  for (int i = 0; i < count; ++i) {
    const int w = rng.integer(c.w() / 10, c.w() / 2);
    const int h = rng.integer(c.h() / 10, c.h() / 2);
    const int x0 = rng.integer(0, c.w() - w);
    const int y0 = rng.integer(0, c.h() - h);
    const double base = rng.uniform(0.0, 255.0);
    const double slope = rng.uniform(-1.0, 1.0);
    for (int y = y0; y < y0 + h; ++y)
      for (int x = x0; x < x0 + w; ++x) c.at(x, y) = base + slope * (x - x0);
  }
}

void checkerboard(Canvas& c, Rng& rng) {
  const int cell = rng.integer(3, 12);
  const int w = rng.integer(c.w() / 6, c.w() / 3);
  const int h = rng.integer(c.h() / 6, c.h() / 3);
  const int x0 = rng.integer(0, c.w() - w);
  const int y0 = rng.integer(0, c.h() - h);
  const double a = rng.uniform(0.0, 120.0), b = rng.uniform(135.0, 255.0);
  for (int y = y0; y < y0 + h; ++y)
    for (int x = x0; x < x0 + w; ++x) c.at(x, y) = (((x - x0) / cell + (y - y0) / cell) % 2) ? a : b;
}

void ellipses(Canvas& c, Rng& rng) {
  const int count = rng.integer(1, 4);
  for (int i = 0; i < count; ++i) {
    const double cx = rng.uniform(0, c.w()), cy = rng.uniform(0, c.h());
    const double rx = rng.uniform(6, c.w() / 4.0), ry = rng.uniform(6, c.h() / 4.0);
    const double value = rng.uniform(0.0, 255.0);
    for (int y = 0; y < c.h(); ++y)
      for (int x = 0; x < c.w(); ++x) {
        const double d = std::hypot((x - cx) / rx, (y - cy) / ry);
        // soft one-pixel edge
        const double alpha = std::clamp((1.0 - d) * std::min(rx, ry), 0.0, 1.0);
        c.at(x, y) = (1.0 - alpha) * c.at(x, y) + alpha * value;
      }
  }
}

void filtered_noise(Canvas& c, Rng& rng) {
  const double amplitude = rng.uniform(4.0, 18.0);
  const int radius = rng.integer(1, 3);
  std::vector<double> noise(c.pixels().size());
  for (double& v : noise) v = rng.normal();
  std::vector<double> blurred(noise.size(), 0.0);
  for (int y = 0; y < c.h(); ++y)
    for (int x = 0; x < c.w(); ++x) {
      double s = 0.0;
      int n = 0;
      for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx) {
          const int sx = x + dx, sy = y + dy;
          if (sx < 0 || sy < 0 || sx >= c.w() || sy >= c.h()) continue;
          s += noise[static_cast<std::size_t>(sy) * c.w() + sx];
          ++n;
        }
      blurred[static_cast<std::size_t>(y) * c.w() + x] = s / n * (2 * radius + 1);
    }
  // Stronger texture inside one region, mild grain elsewhere.
  const int w = rng.integer(c.w() / 4, c.w() / 2), h = rng.integer(c.h() / 4, c.h() / 2);
  const int x0 = rng.integer(0, c.w() - w), y0 = rng.integer(0, c.h() - h);
  for (int y = 0; y < c.h(); ++y)
    for (int x = 0; x < c.w(); ++x) {
      const bool inside = x >= x0 && x < x0 + w && y >= y0 && y < y0 + h;
      c.at(x, y) += blurred[static_cast<std::size_t>(y) * c.w() + x] * (inside ? amplitude : amplitude * 0.15);
    }
}

void glyphs(Canvas& c, Rng& rng) {
  const int scale = rng.integer(1, 3);
  const int gw = 3 * scale, gh = 5 * scale;
  const int rows = rng.integer(1, 3);
  const double ink = rng.uniform(0.0, 1.0) < 0.5 ? rng.uniform(0.0, 50.0) : rng.uniform(205.0, 255.0);
  for (int r = 0; r < rows; ++r) {
    const int y0 = rng.integer(0, c.h() - gh - 1);
    const int x_start = rng.integer(0, c.w() / 2);
    const int length = rng.integer(4, 16);
    for (int g = 0; g < length; ++g) {
      const int x0 = x_start + g * (gw + scale + 1);
      if (x0 + gw >= c.w()) break;
      const auto bits = static_cast<std::uint32_t>(rng.engine()) & 0x7fff;  // 3x5 bitmap
      for (int by = 0; by < 5; ++by)
        for (int bx = 0; bx < 3; ++bx) {
          if (!((bits >> (by * 3 + bx)) & 1u)) continue;
          for (int sy = 0; sy < scale; ++sy)
            for (int sx = 0; sx < scale; ++sx) c.at(x0 + bx * scale + sx, y0 + by * scale + sy) = ink;
        }
    }
  }
}

FramePlane quantize(Canvas& c) {
  std::vector<std::uint8_t> samples(c.pixels().size());
  std::transform(c.pixels().begin(), c.pixels().end(), samples.begin(),
                 [](double v) { return static_cast<std::uint8_t>(std::clamp(std::round(v), 0.0, 255.0)); });
  return FramePlane(c.w(), c.h(), std::move(samples));
}

Canvas render(int width, int height, std::uint64_t seed) {
  Rng rng{std::mt19937_64(seed)};
  Canvas c(width, height);
  gradient_background(c, rng);
  rectangles(c, rng);
  checkerboard(c, rng);
  ellipses(c, rng);
  filtered_noise(c, rng);
  glyphs(c, rng);
  return c;
}

}  // namespace

FramePlane toy_frame(int width, int height, std::uint64_t seed) {
  require(width >= 8 && height >= 8, "toy_frame: dimensions must be >= 8");
  Canvas c = render(width, height, seed);
  return quantize(c);
}

std::vector<FramePlane> toy_sequence(int width, int height, int frames, std::uint64_t seed, int pan) {
  require(frames > 0 && pan >= 0, "toy_sequence: frames must be positive and pan nonnegative");
  const FramePlane scene = toy_frame(width + pan * (frames - 1), height, seed);
  std::vector<FramePlane> out;
  for (int t = 0; t < frames; ++t) out.push_back(scene.crop(t * pan, 0, width, height));
  return out;
}

}  // namespace asn::dataset
