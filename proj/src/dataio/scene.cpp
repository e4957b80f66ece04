#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <numbers>
#include <sstream>

#include "ps2/dataio.hpp"
#include "ps2/error.hpp"
#include "ps2/random.hpp"

namespace ps2::data {
namespace {

using Sampler = std::function<knn::Point3(std::mt19937_64&)>;

struct Surface {
  std::size_t cls;
  double area;
  Sampler sample;
};

void add_rect_xz(std::vector<Surface>& out, std::size_t cls, double x0, double x1, double y, double z0, double z1) {
  out.push_back({cls, (x1 - x0) * (z1 - z0), [=](std::mt19937_64& r) {
                   const double x = uniform(r, x0, x1);
                   return knn::Point3{x, y, uniform(r, z0, z1)};
                 }});
}

void add_rect_yz(std::vector<Surface>& out, std::size_t cls, double x, double y0, double y1, double z0, double z1) {
  out.push_back({cls, (y1 - y0) * (z1 - z0), [=](std::mt19937_64& r) {
                   const double y = uniform(r, y0, y1);
                   return knn::Point3{x, y, uniform(r, z0, z1)};
                 }});
}

void add_rect_xy(std::vector<Surface>& out, std::size_t cls, double x0, double x1, double y0, double y1, double z) {
  out.push_back({cls, (x1 - x0) * (y1 - y0), [=](std::mt19937_64& r) {
                   const double x = uniform(r, x0, x1);
                   return knn::Point3{x, uniform(r, y0, y1), z};
                 }});
}

void add_box(std::vector<Surface>& out, const BoxSpec& b, double dx, double dy) {
  const double x0 = b.cx + dx - b.sx / 2, x1 = b.cx + dx + b.sx / 2;
  const double y0 = b.cy + dy - b.sy / 2, y1 = b.cy + dy + b.sy / 2;
  add_rect_xz(out, b.cls, x0, x1, y0, b.z0, b.z1);
  add_rect_xz(out, b.cls, x0, x1, y1, b.z0, b.z1);
  add_rect_yz(out, b.cls, x0, y0, y1, b.z0, b.z1);
  add_rect_yz(out, b.cls, x1, y0, y1, b.z0, b.z1);
  add_rect_xy(out, b.cls, x0, x1, y0, y1, b.z1);
}

void add_cylinder(std::vector<Surface>& out, const CylinderSpec& c, double dx, double dy) {
  const double cx = c.cx + dx, cy = c.cy + dy;
  constexpr double two_pi = 2 * std::numbers::pi;
  out.push_back({c.cls, two_pi * c.r * (c.z1 - c.z0), [=](std::mt19937_64& r) {
                   const double a = uniform(r, 0, two_pi);
                   return knn::Point3{cx + c.r * std::cos(a), cy + c.r * std::sin(a), uniform(r, c.z0, c.z1)};
                 }});
  out.push_back({c.cls, std::numbers::pi * c.r * c.r, [=](std::mt19937_64& r) {
                   // uniform on the disc
                   const double a = uniform(r, 0, two_pi), rad = c.r * std::sqrt(uniform01(r));
                   return knn::Point3{cx + rad * std::cos(a), cy + rad * std::sin(a), c.z1};
                 }});
}

// `offset(i)` gives the xy shift of object i (boxes first, then cylinders).
std::vector<Surface> surfaces(const SceneSpec& s, const std::function<std::pair<double, double>(std::size_t)>& offset) {
  std::vector<Surface> out;
  if (s.floor != kNoClass) add_rect_xy(out, s.floor, 0, s.sx, 0, s.sy, 0);
  if (s.ceiling != kNoClass) add_rect_xy(out, s.ceiling, 0, s.sx, 0, s.sy, s.height);
  if (s.walls != kNoClass) {
    add_rect_xz(out, s.walls, 0, s.sx, 0, 0, s.height);
    add_rect_xz(out, s.walls, 0, s.sx, s.sy, 0, s.height);
    add_rect_yz(out, s.walls, 0, 0, s.sy, 0, s.height);
    add_rect_yz(out, s.walls, s.sx, 0, s.sy, 0, s.height);
  }
  std::size_t obj = 0;
  for (const auto& b : s.boxes) {
    auto [dx, dy] = offset(obj++);
    add_box(out, b, dx, dy);
  }
  for (const auto& c : s.cylinders) {
    auto [dx, dy] = offset(obj++);
    add_cylinder(out, c, dx, dy);
  }
  return out;
}

// Shift keeping the object's footprint inside the room.
double clamped_shift(double shift, double center, double half, double extent) {
  const double lo = half - center, hi = extent - half - center;
  if (lo > hi) return 0.0;
  return std::clamp(shift, lo, hi);
}

}  // namespace

void SceneSpec::validate() const {
  if (!(density > 0)) throw ContractError("scene spec: density must be positive");
  if (!(sx > 0 && sy > 0 && height > 0)) throw ContractError("scene spec: room dimensions must be positive");
  if (!(noise >= 0 && jitter >= 0)) throw ContractError("scene spec: noise and jitter must be non-negative");
  if (classes.empty()) throw ContractError("scene spec: no classes declared");
  auto check = [&](std::size_t cls, const char* what) {
    if (cls != kNoClass && cls >= classes.size()) throw ContractError(std::string("scene spec: bad class for ") + what);
  };
  check(floor, "floor");
  check(ceiling, "ceiling");
  check(walls, "walls");
  for (const auto& b : boxes) {
    check(b.cls, "box");
    if (!(b.sx > 0 && b.sy > 0 && b.z1 > b.z0)) throw ContractError("scene spec: degenerate box");
  }
  for (const auto& c : cylinders) {
    check(c.cls, "cylinder");
    if (!(c.r > 0 && c.z1 > c.z0)) throw ContractError("scene spec: degenerate cylinder");
  }
  if (floor == kNoClass && ceiling == kNoClass && walls == kNoClass && boxes.empty() && cylinders.empty()) {
    throw ContractError("scene spec: no surfaces");
  }
}

SceneSpec parse_scene_spec(std::istream& in) {
  SceneSpec s;
  s.floor = s.ceiling = s.walls = kNoClass;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (auto hash = text.find('#'); hash != std::string::npos) text.resize(hash);
    std::istringstream ls(text);
    std::string key;
    if (!(ls >> key)) continue;
    auto fail = [&](const std::string& what) { throw ParseError(line, what); };
    auto cls = [&]() {
      std::string name;
      if (!(ls >> name)) fail("missing class name");
      for (std::size_t i = 0; i < s.classes.size(); ++i) {
        if (s.classes[i].name == name) return i;
      }
      fail("class '" + name + "' used before it is declared");
      return kNoClass;
    };
    auto nums = [&](std::initializer_list<double*> out) {
      for (double* p : out) {
        if (!(ls >> *p)) fail("expected " + std::to_string(out.size()) + " numbers after '" + key + "'");
      }
    };
    if (key == "room") {
      nums({&s.sx, &s.sy, &s.height});
    } else if (key == "density") {
      nums({&s.density});
    } else if (key == "noise") {
      nums({&s.noise});
    } else if (key == "jitter") {
      nums({&s.jitter});
    } else if (key == "train_scenes" || key == "test_scenes") {
      long long n = -1;
      if (!(ls >> n) || n < 0) fail("expected a count after '" + key + "'");
      (key == "train_scenes" ? s.train_scenes : s.test_scenes) = static_cast<std::size_t>(n);
    } else if (key == "class") {
      ClassStyle c;
      if (!(ls >> c.name)) fail("missing class name");
      nums({&c.rgb[0], &c.rgb[1], &c.rgb[2], &c.color_sigma});
      for (const auto& other : s.classes) {
        if (other.name == c.name) fail("class '" + c.name + "' declared twice");
      }
      s.classes.push_back(std::move(c));
    } else if (key == "floor") {
      s.floor = cls();
    } else if (key == "ceiling") {
      s.ceiling = cls();
    } else if (key == "walls") {
      s.walls = cls();
    } else if (key == "box") {
      BoxSpec b;
      b.cls = cls();
      nums({&b.cx, &b.cy, &b.sx, &b.sy, &b.z0, &b.z1});
      s.boxes.push_back(b);
    } else if (key == "cylinder") {
      CylinderSpec c;
      c.cls = cls();
      nums({&c.cx, &c.cy, &c.r, &c.z0, &c.z1});
      s.cylinders.push_back(c);
    } else {
      fail("unknown directive '" + key + "'");
    }
    std::string extra;
    if (ls >> extra) fail("unexpected trailing '" + extra + "'");
  }
  return s;
}

SceneSpec read_scene_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open scene spec '" + path.string() + "'");
  return parse_scene_spec(in);
}

std::vector<double> class_surface_areas(const SceneSpec& spec) {
  spec.validate();
  std::vector<double> areas(spec.classes.size(), 0.0);
  for (const auto& s : surfaces(spec, [](std::size_t) { return std::pair{0.0, 0.0}; })) areas[s.cls] += s.area;
  return areas;
}

PointCloud generate_scene(const SceneSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  std::vector<std::pair<double, double>> shifts;
  for (const auto& b : spec.boxes) {
    const double dx = uniform(rng, -spec.jitter, spec.jitter), dy = uniform(rng, -spec.jitter, spec.jitter);
    shifts.emplace_back(clamped_shift(dx, b.cx, b.sx / 2, spec.sx), clamped_shift(dy, b.cy, b.sy / 2, spec.sy));
  }
  for (const auto& c : spec.cylinders) {
    const double dx = uniform(rng, -spec.jitter, spec.jitter), dy = uniform(rng, -spec.jitter, spec.jitter);
    shifts.emplace_back(clamped_shift(dx, c.cx, c.r, spec.sx), clamped_shift(dy, c.cy, c.r, spec.sy));
  }

  PointCloud cloud;
  cloud.f0 = 3;
  cloud.num_classes = spec.classes.size();
  for (const auto& c : spec.classes) cloud.class_names.push_back(c.name);
  for (const auto& surf : surfaces(spec, [&](std::size_t i) { return shifts[i]; })) {
    const auto count = static_cast<std::size_t>(std::llround(surf.area * spec.density));
    const auto& style = spec.classes[surf.cls];
    for (std::size_t i = 0; i < count; ++i) {
      auto p = surf.sample(rng);
      if (spec.noise > 0) {
        for (auto& c : p) c += spec.noise * standard_normal(rng);
      }
      cloud.xyz.push_back(p);
      for (std::size_t ch = 0; ch < 3; ++ch) {
        double v = style.rgb[ch];
        if (style.color_sigma > 0) v += style.color_sigma * standard_normal(rng);
        cloud.features.push_back(std::clamp(v, 0.0, 1.0));
      }
      cloud.labels.push_back(static_cast<std::uint32_t>(surf.cls));
    }
  }
  return cloud;
}

}  // namespace ps2::data
