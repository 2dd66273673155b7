// SPDX-License-Identifier: Apache-2.0
#include "segdistill/synthfaces.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "segdistill/error.hpp"
#include "segdistill/rng.hpp"

namespace segdistill::synth {

namespace {

using Rgb = std::array<float, 3>;

// Base colours stay at or below 0.7 so the brightest illumination (1.4x)
// never clips.
constexpr std::array<Rgb, 3> kSkinTones{{{0.68f, 0.52f, 0.42f}, {0.56f, 0.40f, 0.29f}, {0.40f, 0.28f, 0.20f}}};
constexpr std::array<Rgb, 3> kHairTones{{{0.10f, 0.08f, 0.06f}, {0.40f, 0.26f, 0.12f}, {0.66f, 0.58f, 0.34f}}};
constexpr std::array<Rgb, kBackgroundCount> kBackgrounds{{
    {0.20f, 0.35f, 0.55f},
    {0.55f, 0.60f, 0.62f},
    {0.30f, 0.50f, 0.30f},
    {0.62f, 0.55f, 0.35f},
    {0.45f, 0.30f, 0.50f},
    {0.15f, 0.15f, 0.18f},
    {0.65f, 0.40f, 0.35f},
    {0.35f, 0.55f, 0.60f},
}};

constexpr int kNumericAttributes = 7;  // head w/h, eye spacing/size, nose, mouth, hair extent
constexpr int kAttributeCount = kNumericAttributes + 4;
constexpr float kJitter = 0.1f;

// Level index per attribute; numeric ones have 3 levels.
using Levels = std::array<int, kAttributeCount>;

Levels draw_levels(std::uint64_t seed, int index, int attempt) {
  Rng rng(mix_seed(seed, static_cast<std::uint64_t>(index), static_cast<std::uint64_t>(attempt), 0x6c6576));
  Levels l{};
  for (int a = 0; a < kNumericAttributes; ++a) l[a] = static_cast<int>(rng.below(3));
  l[7] = static_cast<int>(rng.below(kSkinTones.size()));
  l[8] = static_cast<int>(rng.below(kHairTones.size()));
  l[9] = rng.uniform() < 0.3 ? 1 : 0;   // spectacles
  l[10] = rng.uniform() < 0.3 ? 1 : 0;  // facial hair
  return l;
}

// Identity j takes the first draw that differs from every earlier identity,
// so the result is still a pure function of (seed, index).
Levels unique_levels(std::uint64_t seed, int index) {
  std::vector<Levels> taken;
  taken.reserve(index + 1);
  for (int j = 0; j <= index; ++j) {
    for (int attempt = 0;; ++attempt) {
      const Levels l = draw_levels(seed, j, attempt);
      if (std::find(taken.begin(), taken.end(), l) == taken.end()) {
        taken.push_back(l);
        break;
      }
    }
  }
  return taken.back();
}

float lerp(float lo, float hi, float t) { return lo + (hi - lo) * t; }

float deg2rad(float d) { return d * std::numbers::pi_v<float> / 180.0f; }

Rgb mix(const Rgb& a, const Rgb& b, float t) {
  return {lerp(a[0], b[0], t), lerp(a[1], b[1], t), lerp(a[2], b[2], t)};
}

Rgb scaled(const Rgb& a, float s) { return {a[0] * s, a[1] * s, a[2] * s}; }

// Inverse maps from genotype fields to [0, 1].
constexpr float kRangeHeadW[2] = {0.52f, 0.66f};
constexpr float kRangeHeadH[2] = {0.66f, 0.80f};
constexpr float kRangeEyeSpacing[2] = {20.0f, 34.0f};
constexpr float kRangeEyeSize[2] = {0.09f, 0.15f};
constexpr float kRangeNose[2] = {0.08f, 0.16f};
constexpr float kRangeMouth[2] = {0.16f, 0.32f};

float unlerp(const float (&r)[2], float v) { return (v - r[0]) / (r[1] - r[0]); }

int tone_index(const auto& tones, const Rgb& c) {
  for (std::size_t i = 0; i < tones.size(); ++i) {
    if (tones[i] == c) return static_cast<int>(i);
  }
  return 0;
}

}  // namespace

std::vector<std::string> default_palette() {
  return {"background", "skin", "hair", "left-eye", "right-eye", "nose", "mouth"};
}

std::vector<float> IdentityGenotype::normalized() const {
  return {unlerp(kRangeHeadW, head_width),
          unlerp(kRangeHeadH, head_height),
          unlerp(kRangeEyeSpacing, eye_spacing_deg),
          unlerp(kRangeEyeSize, eye_size),
          unlerp(kRangeNose, nose_size),
          unlerp(kRangeMouth, mouth_width),
          hair_extent,
          static_cast<float>(tone_index(kSkinTones, skin)) / (kSkinTones.size() - 1),
          static_cast<float>(tone_index(kHairTones, hair)) / (kHairTones.size() - 1),
          spectacles ? 1.0f : 0.0f,
          facial_hair ? 1.0f : 0.0f};
}

IdentityGenotype sample_identity(std::uint64_t dataset_seed, int index) {
  if (index < 0) throw ValueError("identity index must be >= 0");
  const Levels l = unique_levels(dataset_seed, index);
  Rng rng(mix_seed(dataset_seed, static_cast<std::uint64_t>(index), 0x6a6974));
  std::array<float, kNumericAttributes> t{};
  for (int a = 0; a < kNumericAttributes; ++a) {
    const double jitter = rng.uniform(-kJitter, kJitter);
    t[a] = static_cast<float>(std::clamp(0.5 * l[a] + jitter, 0.0, 1.0));
  }
  IdentityGenotype g;
  g.head_width = lerp(kRangeHeadW[0], kRangeHeadW[1], t[0]);
  g.head_height = lerp(kRangeHeadH[0], kRangeHeadH[1], t[1]);
  g.eye_spacing_deg = lerp(kRangeEyeSpacing[0], kRangeEyeSpacing[1], t[2]);
  g.eye_size = lerp(kRangeEyeSize[0], kRangeEyeSize[1], t[3]);
  g.nose_size = lerp(kRangeNose[0], kRangeNose[1], t[4]);
  g.mouth_width = lerp(kRangeMouth[0], kRangeMouth[1], t[5]);
  g.hair_extent = t[6];
  g.skin = kSkinTones[l[7]];
  g.hair = kHairTones[l[8]];
  g.spectacles = l[9] == 1;
  g.facial_hair = l[10] == 1;
  return g;
}

Sample render(const IdentityGenotype& g, const PoseParams& pose, int resolution) {
  if (resolution < 16) throw ValueError("render resolution must be >= 16, got " + std::to_string(resolution));
  if (std::abs(pose.yaw_deg) > 60.0f || std::abs(pose.pitch_deg) > 30.0f || pose.illumination < 0.6f ||
      pose.illumination > 1.4f || pose.background < 0 || pose.background >= kBackgroundCount) {
    throw ValueError("pose parameters out of range");
  }
  const int r = resolution;
  const float yaw = deg2rad(pose.yaw_deg);
  const float pitch = deg2rad(pose.pitch_deg);

  const float cx = 0.0f, cy = 0.05f;
  const float head_a = g.head_width * (0.92f + 0.08f * std::cos(yaw));
  const float head_b = g.head_height * (0.95f + 0.05f * std::cos(pitch));

  // Features sit on a cylinder (horizontal angle) and a vertical arc.
  struct Projected {
    float x, y, fx, fy;
  };
  auto project = [&](float phi, float beta) {
    return Projected{cx + head_a * std::sin(phi + yaw), cy + head_b * std::sin(beta + pitch), std::cos(phi + yaw),
                     std::cos(beta + pitch)};
  };
  const float eye_phi = deg2rad(g.eye_spacing_deg);
  const Projected left_eye = project(eye_phi, -0.22f);
  const Projected right_eye = project(-eye_phi, -0.22f);
  Projected nose = project(0.0f, 0.10f);
  nose.x += 0.06f * std::sin(yaw);
  const Projected mouth = project(0.0f, 0.55f);
  const float hairline = cy + head_b * std::sin(-1.05f + 0.55f * g.hair_extent + pitch);

  const float eye_h = g.eye_size * 0.6f;
  const float nose_w = g.nose_size * 0.5f * (0.55f + 0.45f * std::abs(std::cos(yaw)));
  const float nose_h = g.nose_size * nose.fy;
  const float mouth_w = g.mouth_width * 0.5f * mouth.fx;
  const float mouth_h = 0.05f * mouth.fy;

  const Rgb bg = kBackgrounds[pose.background];
  const Rgb bg2 = kBackgrounds[(pose.background + 3) % kBackgroundCount];
  const int bg_pattern = pose.background % 3;

  Sample s;
  s.resolution = r;
  s.pose = pose;
  s.image = Tensor(Shape{r, r, 3});
  s.mask.assign(static_cast<std::size_t>(r) * r, kBackground);

  auto in_ellipse = [](float u, float v, float x, float y, float a, float b) {
    if (a <= 0.0f || b <= 0.0f) return false;
    const float du = (u - x) / a, dv = (v - y) / b;
    return du * du + dv * dv <= 1.0f;
  };

  for (int py = 0; py < r; ++py) {
    // Integer numerators keep the grid exactly symmetric about zero.
    const float v = static_cast<float>(2 * py + 1 - r) / static_cast<float>(r);
    for (int px = 0; px < r; ++px) {
      const float u = static_cast<float>(2 * px + 1 - r) / static_cast<float>(r);
      std::uint8_t cls = kBackground;
      Rgb color;
      switch (bg_pattern) {
        case 0:
          color = bg;
          break;
        case 1:
          color = mix(bg, bg2, 0.5f * (v + 1.0f));
          break;
        default:
          color = mix(bg, bg2, 0.5f * (u + 1.0f));
          break;
      }

      const float du = (u - cx) / head_a, dv = (v - cy) / head_b;
      const float head_r2 = du * du + dv * dv;
      const bool in_head = head_r2 <= 1.0f;
      if (in_head) {
        cls = kSkin;
        color = scaled(g.skin, 1.0f - 0.18f * head_r2);
      }

      // Hair: crown above the hairline (slightly beyond the head outline) and
      // the back of the head once it rotates into view.
      const bool in_crown = in_ellipse(u, v, cx, cy - 0.03f, head_a * 1.1f, head_b * 1.08f) && v < hairline;
      bool in_back = false;
      if (in_head && v < mouth.y) {
        const float face_angle = std::asin(std::clamp(du, -1.0f, 1.0f)) - yaw;
        in_back = std::abs(face_angle) > 1.25f;
      }
      if (in_crown || in_back) {
        cls = kHair;
        color = g.hair;
      }

      if (in_head) {
        const Projected* eyes[2] = {&left_eye, &right_eye};
        const std::uint8_t eye_cls[2] = {kLeftEye, kRightEye};
        for (int e = 0; e < 2; ++e) {
          const Projected& p = *eyes[e];
          if (p.fx <= 0.05f) continue;
          const float a = g.eye_size * p.fx, b = eye_h * p.fy;
          if (in_ellipse(u, v, p.x, p.y, a, b)) {
            cls = eye_cls[e];
            color = in_ellipse(u, v, p.x, p.y, 0.5f * a, b) ? Rgb{0.10f, 0.08f, 0.08f} : Rgb{0.66f, 0.66f, 0.64f};
          }
        }
        // Nose: triangle with its apex at the top.
        if (v >= nose.y - nose_h && v <= nose.y + nose_h) {
          const float t = (v - (nose.y - nose_h)) / (2.0f * nose_h);
          if (std::abs(u - nose.x) <= nose_w * t) {
            cls = kNose;
            color = scaled(g.skin, 0.78f);
          }
        }
        if (in_ellipse(u, v, mouth.x, mouth.y, mouth_w, mouth_h)) {
          cls = kMouth;
          color = {0.55f, 0.20f, 0.22f};
        }
        if (g.facial_hair && cls == kSkin && v > nose.y + 0.5f * nose_h) {
          color = mix(color, g.hair, 0.65f);
        }
        if (g.spectacles && cls != kHair) {
          for (const Projected* p : eyes) {
            if (p->fx <= 0.05f) continue;
            const float a = g.eye_size * p->fx, b = eye_h * p->fy;
            const bool rim = in_ellipse(u, v, p->x, p->y, 1.45f * a, 1.6f * b) &&
                             !in_ellipse(u, v, p->x, p->y, 1.15f * a, 1.3f * b);
            if (rim) color = {0.06f, 0.06f, 0.07f};
          }
          const float lo = std::min(left_eye.x, right_eye.x), hi = std::max(left_eye.x, right_eye.x);
          if (u > lo && u < hi && std::abs(v - 0.5f * (left_eye.y + right_eye.y)) < 0.025f &&
              cls == kSkin) {
            color = {0.06f, 0.06f, 0.07f};
          }
        }
      }

      s.mask[static_cast<std::size_t>(py) * r + px] = cls;
      for (int c = 0; c < 3; ++c) {
        s.image[(static_cast<std::size_t>(py) * r + px) * 3 + c] =
            std::clamp(color[c] * pose.illumination, 0.0f, 1.0f);
      }
    }
  }
  return s;
}

PoseParams stratified_pose(std::uint64_t dataset_seed, int identity, int view, int views_per_identity) {
  const auto id = static_cast<std::uint64_t>(identity);
  // Latin-hypercube: yaw strata follow view order, pitch strata a seeded permutation.
  std::vector<int> perm(views_per_identity);
  for (int i = 0; i < views_per_identity; ++i) perm[i] = i;
  Rng prng(mix_seed(dataset_seed, id, 0x7069746368));
  for (int i = views_per_identity - 1; i > 0; --i) {
    std::swap(perm[i], perm[prng.below(static_cast<std::uint64_t>(i) + 1)]);
  }
  Rng rng(mix_seed(dataset_seed, id, static_cast<std::uint64_t>(view), 0x706f7365));
  const double n = views_per_identity;
  PoseParams p;
  p.yaw_deg = static_cast<float>(-60.0 + 120.0 * (view + rng.uniform()) / n);
  p.pitch_deg = static_cast<float>(-30.0 + 60.0 * (perm[view] + rng.uniform()) / n);
  p.illumination = static_cast<float>(rng.uniform(0.6, 1.4));
  p.background = static_cast<int>(rng.below(kBackgroundCount));
  p.yaw_deg = std::clamp(p.yaw_deg, -60.0f, 60.0f);
  p.pitch_deg = std::clamp(p.pitch_deg, -30.0f, 30.0f);
  p.illumination = std::clamp(p.illumination, 0.6f, 1.4f);
  return p;
}

Dataset generate_dataset(int identity_count, int views_per_identity, int resolution, std::uint64_t seed) {
  if (identity_count < 1 || views_per_identity < 1) throw ValueError("identity and view counts must be >= 1");
  Dataset ds;
  ds.identity_count = identity_count;
  ds.resolution = resolution;
  ds.palette = default_palette();
  ds.samples.reserve(static_cast<std::size_t>(identity_count) * views_per_identity);
  for (int id = 0; id < identity_count; ++id) {
    const IdentityGenotype g = sample_identity(seed, id);
    for (int view = 0; view < views_per_identity; ++view) {
      Sample s = render(g, stratified_pose(seed, id, view, views_per_identity), resolution);
      s.identity = id;
      s.view = view;
      ds.samples.push_back(std::move(s));
    }
  }
  return ds;
}

const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain:
      return "train";
    case Split::kVal:
      return "val";
    case Split::kTest:
      return "test";
  }
  return "?";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  throw ValueError("unknown split '" + name + "'");
}

SplitCounts split_counts(std::size_t n, const SplitFractions& f) {
  SplitCounts c;
  c.test = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(f.test * static_cast<double>(n))));
  c.val = static_cast<std::size_t>(std::lround(f.validation * static_cast<double>(n - c.test)));
  c.train = n - c.test - c.val;
  return c;
}

std::vector<std::size_t> SplitAssignment::indices(Split which) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < tags.size(); ++i) {
    if (tags[i] == which) out.push_back(i);
  }
  return out;
}

SplitCounts SplitAssignment::totals() const {
  SplitCounts c;
  for (Split s : tags) {
    if (s == Split::kTrain) ++c.train;
    if (s == Split::kVal) ++c.val;
    if (s == Split::kTest) ++c.test;
  }
  return c;
}

SplitAssignment split(const Dataset& dataset, std::uint64_t seed, const SplitFractions& fractions) {
  std::vector<std::vector<std::size_t>> by_identity(dataset.identity_count);
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    const int id = dataset.samples[i].identity;
    if (id < 0 || id >= dataset.identity_count) throw ValueError("sample identity outside dataset identity count");
    by_identity[id].push_back(i);
  }
  SplitAssignment out;
  out.tags.assign(dataset.samples.size(), Split::kTrain);
  for (int id = 0; id < dataset.identity_count; ++id) {
    auto& members = by_identity[id];
    if (members.size() < 10) {
      throw ValueError("identity " + std::to_string(id) + " has " + std::to_string(members.size()) +
                       " samples; splitting needs at least 10");
    }
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(id), 0x73706c6974));
    for (std::size_t i = members.size() - 1; i > 0; --i) std::swap(members[i], members[rng.below(i + 1)]);
    const SplitCounts c = split_counts(members.size(), fractions);
    for (std::size_t k = 0; k < members.size(); ++k) {
      out.tags[members[k]] = k < c.test ? Split::kTest : (k < c.test + c.val ? Split::kVal : Split::kTrain);
    }
  }
  return out;
}

std::vector<std::size_t> class_histogram(const Sample& s, int classes) {
  std::vector<std::size_t> h(classes, 0);
  for (std::uint8_t c : s.mask) {
    if (c < classes) ++h[c];
  }
  return h;
}

}  // namespace segdistill::synth
