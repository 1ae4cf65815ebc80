#include "asn/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "asn/binio.hpp"
#include "asn/error.hpp"
#include "asn/parallel.hpp"

namespace asn::dataset {

namespace {

constexpr std::string_view kShardMagic = "ASND";
constexpr int kGrid = kPatchSize / codec::kMinBlockSize;
constexpr std::size_t kPatchSamples = static_cast<std::size_t>(kPatchSize) * kPatchSize;

PatchPair make_pair(FramePlane original, FramePlane decoded, codec::PartitionMap partition) {
  PatchPair p;
  p.mask_mm = mask::gen_mean_mask(decoded, partition);
  p.mask_bm = mask::gen_boundary_mask(partition);
  p.original = std::move(original);
  p.decoded = std::move(decoded);
  p.partition = std::move(partition);
  return p;
}

// Block size owning each 8x8 cell of a 64x64 patch.
std::array<std::uint8_t, kGrid * kGrid> partition_grid(const codec::PartitionMap& map) {
  std::array<std::uint8_t, kGrid * kGrid> grid{};
  for (const auto& b : map.blocks())
    for (int gy = b.y / codec::kMinBlockSize; gy < (b.y + b.size) / codec::kMinBlockSize; ++gy)
      for (int gx = b.x / codec::kMinBlockSize; gx < (b.x + b.size) / codec::kMinBlockSize; ++gx)
        grid[static_cast<std::size_t>(gy) * kGrid + gx] = static_cast<std::uint8_t>(b.size);
  return grid;
}

// Quadtree walk in the codec's z-order, so round-trips compare equal.
void grid_to_blocks(const std::array<std::uint8_t, kGrid * kGrid>& grid, int x, int y, int size,
                    std::vector<codec::Block>& out) {
  const int cell = grid[static_cast<std::size_t>(y / codec::kMinBlockSize) * kGrid + x / codec::kMinBlockSize];
  if (cell == size) {
    out.push_back({x, y, size});
    return;
  }
  if (size <= codec::kMinBlockSize || cell > size) throw FormatError("ASND shard: inconsistent partition grid");
  const int half = size / 2;
  grid_to_blocks(grid, x, y, half, out);
  grid_to_blocks(grid, x + half, y, half, out);
  grid_to_blocks(grid, x, y + half, half, out);
  grid_to_blocks(grid, x + half, y + half, half, out);
}

const char* split_name(Split s) { return s == Split::train ? "train" : "validation"; }

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "validation") return Split::validation;
  throw FormatError("manifest: unknown split '" + s + "'");
}

}  // namespace

FramePlane crop_to_multiple(const FramePlane& frame) {
  const int w = frame.width() / kPatchSize * kPatchSize;
  const int h = frame.height() / kPatchSize * kPatchSize;
  require(w > 0 && h > 0, "crop_to_multiple: frame " + std::to_string(frame.width()) + "x" +
                              std::to_string(frame.height()) + " has no full 64x64 patch");
  if (w == frame.width() && h == frame.height()) return frame;
  return frame.crop(0, 0, w, h);
}

std::vector<PatchPair> extract_patches(const FramePlane& original, const FramePlane& decoded,
                                       const codec::PartitionMap& partition, int qp, PatchSource source) {
  require(original.width() == decoded.width() && original.height() == decoded.height(),
          "extract_patches: original and decoded dimensions differ");
  require(partition.frame_width() == decoded.width() && partition.frame_height() == decoded.height(),
          "extract_patches: partition does not match the frame");
  require(decoded.width() % kPatchSize == 0 && decoded.height() % kPatchSize == 0,
          "extract_patches: frame dimensions must be multiples of 64; crop first");
  std::vector<PatchPair> out;
  for (int y = 0; y < decoded.height(); y += kPatchSize)
    for (int x = 0; x < decoded.width(); x += kPatchSize) {
      PatchPair p = make_pair(original.crop(x, y, kPatchSize, kPatchSize), decoded.crop(x, y, kPatchSize, kPatchSize),
                              partition.restrict_to(x, y, kPatchSize, kPatchSize));
      p.source = source;
      p.source.x = static_cast<std::uint32_t>(x);
      p.source.y = static_cast<std::uint32_t>(y);
      p.qp = qp;
      out.push_back(std::move(p));
    }
  return out;
}

FramePlane assemble_patches(std::span<const FramePlane> patches, int width, int height) {
  require(width % kPatchSize == 0 && height % kPatchSize == 0 && width > 0 && height > 0,
          "assemble_patches: dimensions must be positive multiples of 64");
  const int cols = width / kPatchSize;
  require(patches.size() == static_cast<std::size_t>(cols) * (height / kPatchSize),
          "assemble_patches: patch count does not match the frame");
  FramePlane frame(width, height);
  for (std::size_t i = 0; i < patches.size(); ++i) {
    require(patches[i].width() == kPatchSize && patches[i].height() == kPatchSize,
            "assemble_patches: patches must be 64x64");
    frame.paste(patches[i], static_cast<int>(i % cols) * kPatchSize, static_cast<int>(i / cols) * kPatchSize);
  }
  return frame;
}

DatasetManifest split_dataset(DatasetManifest manifest, double val_fraction, std::uint64_t seed) {
  require(val_fraction > 0.0 && val_fraction < 1.0, "split_dataset: val_fraction must be in (0, 1)");
  std::set<std::uint32_t> ids;
  for (const auto& e : manifest.entries) ids.insert(e.source.sequence);
  require(ids.size() >= 2, "split_dataset: need at least 2 sequences to split by sequence (got " +
                               std::to_string(ids.size()) + "); add more input sequences");
  std::vector<std::uint32_t> order(ids.begin(), ids.end());
  std::mt19937_64 rng(seed);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
  const auto n_val = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(val_fraction * order.size())), 1,
                                             order.size() - 1);
  const std::set<std::uint32_t> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  for (auto& e : manifest.entries) e.split = val.contains(e.source.sequence) ? Split::validation : Split::train;
  manifest.seed = seed;
  return manifest;
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "asn-manifest 1\n";
  out << "seed " << manifest.seed << '\n';
  out << "qps";
  for (int qp : manifest.qps) out << ' ' << qp;
  out << '\n';
  for (std::size_t i = 0; i < manifest.sequences.size(); ++i) out << "sequence " << i << ' ' << manifest.sequences[i] << '\n';
  // patch <sequence> <frame> <x> <y> <qp> <split> <label or ->
  for (const auto& e : manifest.entries) {
    out << "patch " << e.source.sequence << ' ' << e.source.frame << ' ' << e.source.x << ' ' << e.source.y << ' '
        << e.qp << ' ' << split_name(e.split) << ' ';
    if (e.label)
      out << *e.label;
    else
      out << '-';
    out << '\n';
  }
  if (!out) throw FormatError("write failed: " + path.string());
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "asn-manifest 1") throw FormatError(path.string() + ": not a manifest");
  DatasetManifest m;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string key;
    ss >> key;
    auto fail = [&] { throw FormatError(path.string() + ":" + std::to_string(lineno) + ": bad line"); };
    if (key == "seed") {
      if (!(ss >> m.seed)) fail();
    } else if (key == "qps") {
      int qp;
      while (ss >> qp) m.qps.push_back(qp);
    } else if (key == "sequence") {
      std::size_t id;
      if (!(ss >> id) || id != m.sequences.size()) fail();
      std::string name;
      std::getline(ss >> std::ws, name);
      m.sequences.push_back(name);
    } else if (key == "patch") {
      ManifestEntry e;
      std::string split, label;
      if (!(ss >> e.source.sequence >> e.source.frame >> e.source.x >> e.source.y >> e.qp >> split >> label)) fail();
      e.split = parse_split(split);
      if (label != "-") {
        try {
          e.label = std::stoi(label);
        } catch (const std::exception&) {
          fail();
        }
      }
      m.entries.push_back(e);
    } else {
      fail();
    }
  }
  return m;
}

void write_shard(const std::filesystem::path& path, std::span<const PatchPair> patches) {
  binio::Writer out;
  out.magic(kShardMagic);
  out.u32(kShardFormatVersion);
  out.u32(static_cast<std::uint32_t>(patches.size()));
  for (const auto& p : patches) {
    require(p.decoded.width() == kPatchSize && p.decoded.height() == kPatchSize && p.original.width() == kPatchSize &&
                p.original.height() == kPatchSize,
            "write_shard: patches must be 64x64");
    for (std::uint32_t v : {p.source.sequence, p.source.frame, p.source.x, p.source.y}) out.u32(v);
    out.i32(p.qp);
    out.i32(p.label.value_or(-1));
    out.bytes(p.decoded.samples().data(), kPatchSamples);
    out.bytes(p.original.samples().data(), kPatchSamples);
    const auto grid = partition_grid(p.partition);
    out.bytes(grid.data(), grid.size());
  }
  binio::write_file(path, out.buffer());
}

std::vector<PatchPair> read_shard(const std::filesystem::path& path) {
  const auto bytes = binio::read_file(path);
  binio::Reader in(bytes, "ASND shard " + path.string());
  in.expect_magic(kShardMagic);
  const std::uint32_t version = in.u32();
  if (version != kShardFormatVersion) throw FormatError(in.what() + ": unsupported version " + std::to_string(version));
  const std::uint32_t count = in.u32();
  constexpr std::size_t kRecord = 6 * 4 + 2 * kPatchSamples + kGrid * kGrid;
  if (in.remaining() != count * kRecord) throw FormatError(in.what() + ": size does not match record count");
  std::vector<PatchSource> sources(count);
  std::vector<std::pair<int, int>> qp_label(count);
  std::vector<std::vector<std::uint8_t>> decoded(count), original(count);
  std::vector<std::array<std::uint8_t, kGrid * kGrid>> grids(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    sources[i] = {in.u32(), in.u32(), in.u32(), in.u32()};
    qp_label[i].first = in.i32();
    qp_label[i].second = in.i32();
    decoded[i].resize(kPatchSamples);
    original[i].resize(kPatchSamples);
    in.bytes(decoded[i].data(), kPatchSamples);
    in.bytes(original[i].data(), kPatchSamples);
    in.bytes(grids[i].data(), grids[i].size());
  }
  std::vector<PatchPair> out(count);
  parallel_for(count, [&](std::size_t i) {
    std::vector<codec::Block> blocks;
    for (int y = 0; y < kPatchSize; y += codec::kCtuSize)
      for (int x = 0; x < kPatchSize; x += codec::kCtuSize) grid_to_blocks(grids[i], x, y, codec::kCtuSize, blocks);
    PatchPair p = make_pair(FramePlane(kPatchSize, kPatchSize, std::move(original[i])),
                            FramePlane(kPatchSize, kPatchSize, std::move(decoded[i])),
                            codec::PartitionMap(kPatchSize, kPatchSize, std::move(blocks)));
    p.source = sources[i];
    p.qp = qp_label[i].first;
    if (qp_label[i].second >= 0) p.label = qp_label[i].second;
    out[i] = std::move(p);
  });
  return out;
}

std::vector<PatchPair> Dataset::subset(Split split) const {
  std::vector<PatchPair> out;
  for (std::size_t i = 0; i < patches.size(); ++i)
    if (manifest.entries.at(i).split == split) out.push_back(patches[i]);
  return out;
}

Dataset build_dataset(std::span<const Sequence> sequences, const BuildOptions& options) {
  require(!sequences.empty(), "build_dataset: no input sequences");
  require(options.frames_per_sequence >= 0, "build_dataset: frames_per_sequence must be >= 0");
  const auto qp = codec::QpConfig::from_qp(options.qp);

  struct Job {
    std::uint32_t sequence;
    std::uint32_t frame;
  };
  std::vector<Job> jobs;
  std::mt19937_64 rng(options.seed);
  for (std::uint32_t s = 0; s < sequences.size(); ++s) {
    const auto n = static_cast<std::uint32_t>(sequences[s].frames.size());
    require(n > 0, "build_dataset: sequence '" + sequences[s].name + "' has no frames");
    std::vector<std::uint32_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0u);
    if (options.frames_per_sequence > 0 && static_cast<std::uint32_t>(options.frames_per_sequence) < n) {
      for (std::uint32_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng() % i]);
      idx.resize(static_cast<std::size_t>(options.frames_per_sequence));
      std::sort(idx.begin(), idx.end());
    }
    for (std::uint32_t f : idx) jobs.push_back({s, f});
  }

  std::vector<std::vector<PatchPair>> per_frame(jobs.size());
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    const FramePlane original = crop_to_multiple(sequences[jobs[j].sequence].frames[jobs[j].frame]);
    const auto coded = codec::encode_decode(original, qp, options.split_threshold);
    per_frame[j] = extract_patches(original, coded.decoded, coded.partition, options.qp,
                                   {jobs[j].sequence, jobs[j].frame, 0, 0});
  }

  Dataset ds;
  ds.manifest.qps = {options.qp};
  for (const auto& s : sequences) ds.manifest.sequences.push_back(s.name);
  for (auto& frame_patches : per_frame)
    for (auto& p : frame_patches) {
      ds.manifest.entries.push_back({p.source, p.qp, Split::train, p.label});
      ds.patches.push_back(std::move(p));
    }
  if (sequences.size() >= 2) ds.manifest = split_dataset(std::move(ds.manifest), options.val_fraction, options.seed);
  ds.manifest.seed = options.seed;
  return ds;
}

void save_dataset(const std::filesystem::path& dir, const Dataset& dataset) {
  require(dataset.manifest.entries.size() == dataset.patches.size(), "save_dataset: manifest and patches differ");
  std::filesystem::create_directories(dir);
  write_manifest(dir / "manifest.txt", dataset.manifest);
  write_shard(dir / "patches.asnd", dataset.patches);
}

Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  ds.manifest = read_manifest(dir / "manifest.txt");
  ds.patches = read_shard(dir / "patches.asnd");
  if (ds.manifest.entries.size() != ds.patches.size())
    throw FormatError(dir.string() + ": manifest lists " + std::to_string(ds.manifest.entries.size()) +
                      " patches, shard holds " + std::to_string(ds.patches.size()));
  for (std::size_t i = 0; i < ds.patches.size(); ++i) {
    const auto& e = ds.manifest.entries[i];
    if (!(e.source == ds.patches[i].source) || e.qp != ds.patches[i].qp)
      throw FormatError(dir.string() + ": manifest entry " + std::to_string(i) + " does not match the shard");
    ds.patches[i].label = e.label;
  }
  return ds;
}

}  // namespace asn::dataset
