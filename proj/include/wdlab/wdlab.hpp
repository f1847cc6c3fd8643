// Copyright (c) 2026 The wdlab Authors. All Rights Reserved.
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

#pragma once

#include "wdlab/curvature.hpp"
#include "wdlab/diagnostics.hpp"
#include "wdlab/error.hpp"
#include "wdlab/harness/checkpoint.hpp"
#include "wdlab/harness/config.hpp"
#include "wdlab/harness/data.hpp"
#include "wdlab/harness/grid.hpp"
#include "wdlab/harness/replicate.hpp"
#include "wdlab/harness/svg.hpp"
#include "wdlab/harness/train.hpp"
#include "wdlab/linalg.hpp"
#include "wdlab/loss.hpp"
#include "wdlab/nn.hpp"
#include "wdlab/optim.hpp"
#include "wdlab/verify.hpp"
