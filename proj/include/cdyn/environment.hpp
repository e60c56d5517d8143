// Copyright 2026 The cdyn Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef CDYN_ENVIRONMENT_HPP_
#define CDYN_ENVIRONMENT_HPP_

#include "cdyn/types.hpp"

namespace cdyn {

// Flat floor at height g_h (solid below) and a vertical wall at x = p_w
// (solid for x > p_w).
struct EnvModel {
  double g_h = 0.0;  // m
  double p_w = 0.0;  // m
};

enum class EnvFace { kFloor = 0, kWall = 1 };

struct EnvDistance {
  double distance;  // m
  Vec2 normal;      // unit, pointing out of the solid
  EnvFace face;
};

inline EnvDistance env_sdf(const Vec2& p, const EnvModel& env) {
  const double floor = p.y() - env.g_h;
  const double wall = env.p_w - p.x();
  if (floor <= wall) return {floor, Vec2(0.0, 1.0), EnvFace::kFloor};
  return {wall, Vec2(-1.0, 0.0), EnvFace::kWall};
}

}  // namespace cdyn

#endif  // CDYN_ENVIRONMENT_HPP_
