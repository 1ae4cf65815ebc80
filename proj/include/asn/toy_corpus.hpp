#pragma once

#include <cstdint>
#include <vector>

#include "asn/frame.hpp"

namespace asn::dataset {

// Seeded procedural image: gradient background, flat and shaded rectangles,
// a checkerboard patch, ellipses, band-limited noise and rows of text-like
// glyphs. Gives the toy codec a mix of smooth and detailed regions.
FramePlane toy_frame(int width, int height, std::uint64_t seed);

// `frames` views of one toy scene panning right by `pan` pixels per frame.
std::vector<FramePlane> toy_sequence(int width, int height, int frames, std::uint64_t seed, int pan = 4);

}  // namespace asn::dataset
