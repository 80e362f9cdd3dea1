// Copyright 2026 The adadiffuse Authors.
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

#include "adadiffuse/real_buffer.hpp"
#include "adadiffuse/mlp.hpp"
#include "adadiffuse/adam.hpp"
#include "adadiffuse/gradient_check.hpp"
#include "adadiffuse/schedule.hpp"
#include "adadiffuse/datasets.hpp"
#include "adadiffuse/models.hpp"
#include "adadiffuse/diffusion.hpp"
#include "adadiffuse/sampler.hpp"
#include "adadiffuse/metrics.hpp"
#include "adadiffuse/checkpoint.hpp"
#include "adadiffuse/config.hpp"
#include "adadiffuse/io.hpp"
#include "adadiffuse/harness.hpp"
#include "adadiffuse/cli.hpp"
