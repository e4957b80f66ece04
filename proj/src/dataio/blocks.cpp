#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "ps2/dataio.hpp"
#include "ps2/error.hpp"
#include "ps2/random.hpp"

namespace ps2::data {
namespace {

struct Grid {
  knn::Point3 lo{}, hi{};
  double cell = 1.0;
  std::size_t nx = 1, ny = 1;

  std::size_t cell_of(double v, std::size_t axis) const {
    const std::size_t n = axis == 0 ? nx : ny;
    const double t = std::floor((v - lo[axis]) / cell);
    if (t <= 0) return 0;
    return std::min(n - 1, static_cast<std::size_t>(t));
  }
};

Grid make_grid(const PointCloud& room, double cell) {
  if (room.size() == 0) throw ContractError("partition: empty room");
  Grid g;
  g.cell = cell;
  g.lo = g.hi = room.xyz.front();
  for (const auto& p : room.xyz) {
    for (std::size_t a = 0; a < 3; ++a) {
      g.lo[a] = std::min(g.lo[a], p[a]);
      g.hi[a] = std::max(g.hi[a], p[a]);
    }
  }
  auto count = [&](std::size_t a) {
    const double cells = std::ceil((g.hi[a] - g.lo[a]) / cell - 1e-9);
    return std::max<std::size_t>(1, static_cast<std::size_t>(cells));
  };
  g.nx = count(0);
  g.ny = count(1);
  return g;
}

// Assembles the per-setup input vector for the chosen room points.
Block make_block(const PointCloud& room, const Grid& g, Setup setup, std::size_t ix, std::size_t iy,
                 std::vector<std::uint32_t> ids, std::size_t home_count) {
  Block b;
  b.setup = setup;
  b.origin = {g.lo[0] + static_cast<double>(ix) * g.cell, g.lo[1] + static_cast<double>(iy) * g.cell, g.lo[2]};
  const double cx = b.origin[0] + 0.5 * g.cell, cy = b.origin[1] + 0.5 * g.cell;
  const knn::Point3 extent{g.hi[0] - g.lo[0], g.hi[1] - g.lo[1], g.hi[2] - g.lo[2]};
  auto& pc = b.points;
  pc.num_classes = room.num_classes;
  pc.class_names = room.class_names;
  pc.f0 = setup == Setup::p1 ? 6 : setup == Setup::p2 ? 3 : 0;
  for (auto id : ids) {
    const auto& p = room.xyz[id];
    pc.xyz.push_back({p[0] - cx, p[1] - cy, p[2] - g.lo[2]});
    if (setup != Setup::p3) {
      const double* rgb = room.features.data() + id * room.f0;
      pc.features.insert(pc.features.end(), rgb, rgb + 3);
    }
    if (setup == Setup::p1) {
      for (std::size_t a = 0; a < 3; ++a) pc.features.push_back(extent[a] > 0 ? (p[a] - g.lo[a]) / extent[a] : 0.0);
    }
    if (room.has_labels()) pc.labels.push_back(room.labels[id]);
  }
  b.source = std::move(ids);
  b.home_count = home_count;
  return b;
}

std::vector<Block> grid_partition(const PointCloud& room, Setup setup, double cell, double padding) {
  if (setup != Setup::p3 && room.f0 < 3) {
    throw ContractError("partition_" + std::string(setup_name(setup)) + ": room needs rgb features (f0 >= 3), has f0=" +
                        std::to_string(room.f0));
  }
  room.validate();
  const Grid g = make_grid(room, cell);
  const std::size_t cells = g.nx * g.ny;
  std::vector<std::vector<std::uint32_t>> home(cells), pad(cells);
  for (std::uint32_t i = 0; i < room.size(); ++i) {
    const auto& p = room.xyz[i];
    const std::size_t hx = g.cell_of(p[0], 0), hy = g.cell_of(p[1], 1);
    home[hx * g.ny + hy].push_back(i);
    if (padding <= 0) continue;
    const std::size_t x0 = g.cell_of(p[0] - padding, 0), x1 = g.cell_of(p[0] + padding, 0);
    const std::size_t y0 = g.cell_of(p[1] - padding, 1), y1 = g.cell_of(p[1] + padding, 1);
    for (std::size_t x = x0; x <= x1; ++x) {
      for (std::size_t y = y0; y <= y1; ++y) {
        if (x == hx && y == hy) continue;
        // inside the padded box of cell (x, y)
        const double bx0 = g.lo[0] + x * cell - padding, bx1 = g.lo[0] + (x + 1) * cell + padding;
        const double by0 = g.lo[1] + y * cell - padding, by1 = g.lo[1] + (y + 1) * cell + padding;
        if (p[0] >= bx0 && p[0] <= bx1 && p[1] >= by0 && p[1] <= by1) pad[x * g.ny + y].push_back(i);
      }
    }
  }
  std::vector<Block> out;
  for (std::size_t x = 0; x < g.nx; ++x) {
    for (std::size_t y = 0; y < g.ny; ++y) {
      auto& ids = home[x * g.ny + y];
      if (ids.empty()) continue;
      const std::size_t home_count = ids.size();
      ids.insert(ids.end(), pad[x * g.ny + y].begin(), pad[x * g.ny + y].end());
      out.push_back(make_block(room, g, setup, x, y, std::move(ids), home_count));
    }
  }
  return out;
}

}  // namespace

std::string_view setup_name(Setup s) {
  switch (s) {
    case Setup::p1: return "p1";
    case Setup::p2: return "p2";
    case Setup::p3: return "p3";
  }
  return "unknown";
}

Setup parse_setup(std::string_view name) {
  if (name == "p1" || name == "P1") return Setup::p1;
  if (name == "p2" || name == "P2") return Setup::p2;
  if (name == "p3" || name == "P3") return Setup::p3;
  throw ContractError("unknown setup '" + std::string(name) + "' (expected p1, p2 or p3)");
}

std::vector<Block> partition_p1(const PointCloud& room) { return grid_partition(room, Setup::p1, 1.0, 0.0); }
std::vector<Block> partition_p2(const PointCloud& room) { return grid_partition(room, Setup::p2, 1.5, 0.3); }
std::vector<Block> partition_p3(const PointCloud& room) { return grid_partition(room, Setup::p3, 1.5, 0.0); }

std::vector<Block> partition(const PointCloud& room, Setup setup) {
  switch (setup) {
    case Setup::p1: return partition_p1(room);
    case Setup::p2: return partition_p2(room);
    case Setup::p3: return partition_p3(room);
  }
  throw ContractError("unknown setup");
}

std::size_t sample_count(const Block& block, Setup setup, std::uint64_t seed, const SampleSizes& sizes) {
  if (block.points.size() == 0) throw ContractError("sample_block: empty block");
  if (setup == Setup::p1) return sizes.p1;
  if (setup == Setup::p3) return sizes.p3;
  std::mt19937_64 rng(mix_seed(seed, 1));
  const double draw = std::round(sizes.p2_mean + sizes.p2_sd * standard_normal(rng));
  const double hi = static_cast<double>(std::max(sizes.p2_min, block.points.size()));
  return static_cast<std::size_t>(std::clamp(draw, static_cast<double>(sizes.p2_min), hi));
}

Block sample_block(const Block& block, Setup setup, std::uint64_t seed, const SampleSizes& sizes) {
  const std::size_t count = sample_count(block, setup, seed, sizes);
  const std::size_t n = block.points.size();
  std::mt19937_64 rng(mix_seed(seed, 2));
  std::vector<std::uint32_t> all(n);
  std::iota(all.begin(), all.end(), 0u);
  std::vector<std::uint32_t> ids;
  if (count <= n) {
    // partial Fisher-Yates: the first `count` slots form a uniform subset
    for (std::size_t i = 0; i < count; ++i) {
      const auto j = i + uniform_index(rng, n - i);
      std::swap(all[i], all[j]);
    }
    ids.assign(all.begin(), all.begin() + count);
  } else {
    ids = all;
    while (ids.size() < count) ids.push_back(static_cast<std::uint32_t>(uniform_index(rng, n)));
    shuffle_range(ids.begin(), ids.end(), rng);
  }
  const std::size_t home_limit = block.home_count;
  auto mid = std::stable_partition(ids.begin(), ids.end(), [&](std::uint32_t i) { return i < home_limit; });
  Block out;
  out.setup = block.setup;
  out.origin = block.origin;
  out.points = block.points.select(ids);
  out.home_count = static_cast<std::size_t>(mid - ids.begin());
  out.source.reserve(ids.size());
  for (auto i : ids) out.source.push_back(block.source.empty() ? i : block.source[i]);
  return out;
}

void write_block_set(const std::filesystem::path& dir, Setup setup, const std::vector<Block>& blocks,
                     const std::vector<std::string>& rooms, std::uint64_t seed) {
  if (rooms.size() != blocks.size()) throw ContractError("write_block_set: one room name per block required");
  if (blocks.empty()) throw ContractError("write_block_set: no blocks");
  std::filesystem::create_directories(dir);
  const auto& first = blocks.front().points;
  std::ostringstream m;
  m.precision(17);
  m << "ps2blocks v1\n";
  m << "setup " << setup_name(setup) << '\n';
  m << "f0 " << first.f0 << '\n';
  m << "num_classes " << first.num_classes << '\n';
  if (!first.class_names.empty()) {
    m << "classes";
    for (const auto& n : first.class_names) m << ' ' << n;
    m << '\n';
  }
  m << "blocks " << blocks.size() << '\n';
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto& b = blocks[i];
    if (b.points.f0 != first.f0 || b.points.num_classes != first.num_classes) {
      throw DataError("write_block_set: block " + std::to_string(i) + " disagrees on feature width or classes");
    }
    char name[32];
    std::snprintf(name, sizeof name, "block_%05zu.pscloud", i);
    write_cloud(b.points, dir / name);
    m << "block " << name << ' ' << rooms[i] << ' ' << mix_seed(seed, i) << ' ' << b.origin[0] << ' '
      << b.origin[1] << ' ' << b.origin[2] << ' ' << b.points.size() << ' ' << b.home_count << '\n';
  }
  std::ofstream out(dir / "manifest.txt");
  if (!out) throw Error("cannot write manifest in '" + dir.string() + "'");
  out << m.str();
}

BlockSet read_block_set(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.txt");
  if (!in) throw Error("no manifest.txt in '" + dir.string() + "'");
  BlockSet set;
  set.dir = dir;
  std::string text;
  std::size_t line = 0, declared = 0;
  while (std::getline(in, text)) {
    ++line;
    std::istringstream ls(text);
    std::string key;
    if (!(ls >> key)) continue;
    auto fail = [&](const std::string& what) { throw ParseError(line, "manifest: " + what); };
    if (line == 1) {
      std::string v;
      if (key != "ps2blocks" || !(ls >> v) || v != "v1") fail("expected 'ps2blocks v1'");
    } else if (key == "setup") {
      std::string v;
      ls >> v;
      try {
        set.setup = parse_setup(v);
      } catch (const ContractError& e) {
        fail(e.what());
      }
    } else if (key == "f0") {
      if (!(ls >> set.f0)) fail("bad f0");
    } else if (key == "num_classes") {
      if (!(ls >> set.num_classes)) fail("bad num_classes");
    } else if (key == "classes") {
      std::string n;
      while (ls >> n) set.class_names.push_back(n);
    } else if (key == "blocks") {
      if (!(ls >> declared)) fail("bad block count");
    } else if (key == "block") {
      BlockEntry e;
      if (!(ls >> e.file >> e.room >> e.seed >> e.origin[0] >> e.origin[1] >> e.origin[2] >> e.size >> e.home_count)) {
        fail("expected 'block <file> <room> <seed> <x> <y> <z> <size> <home>'");
      }
      set.entries.push_back(std::move(e));
    } else {
      fail("unknown key '" + key + "'");
    }
  }
  if (set.entries.size() != declared) {
    throw DataError("manifest in '" + dir.string() + "' declares " + std::to_string(declared) + " blocks, lists " +
                    std::to_string(set.entries.size()));
  }
  for (const auto& e : set.entries) {
    Block b;
    b.setup = set.setup;
    b.origin = e.origin;
    b.points = read_cloud(dir / e.file);
    b.home_count = e.home_count;
    if (b.points.size() != e.size || b.points.f0 != set.f0 || b.points.num_classes != set.num_classes ||
        e.home_count > e.size) {
      throw DataError("block file '" + e.file + "' does not match its manifest entry");
    }
    set.blocks.push_back(std::move(b));
  }
  return set;
}

}  // namespace ps2::data
