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


#ifndef CDYN_CDYN_HPP_
#define CDYN_CDYN_HPP_

#include "cdyn/bench.hpp"
#include "cdyn/environment.hpp"
#include "cdyn/explore.hpp"
#include "cdyn/filter.hpp"
#include "cdyn/parallel.hpp"
#include "cdyn/qp_solver.hpp"
#include "cdyn/qsim.hpp"
#include "cdyn/sdf_net.hpp"
#include "cdyn/shape.hpp"
#include "cdyn/surface.hpp"
#include "cdyn/types.hpp"

#endif  // CDYN_CDYN_HPP_
