// Copyright 2026 The resdiff Authors.
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

#include "resdiff/analysis.hpp"
#include "resdiff/autodiff.hpp"
#include "resdiff/checkpoint.hpp"
#include "resdiff/codec.hpp"
#include "resdiff/common.hpp"
#include "resdiff/config.hpp"
#include "resdiff/corpus.hpp"
#include "resdiff/denoiser.hpp"
#include "resdiff/diffusion.hpp"
#include "resdiff/image_io.hpp"
#include "resdiff/range_coder.hpp"
#include "resdiff/residual.hpp"
#include "resdiff/rng.hpp"
#include "resdiff/sampler.hpp"
#include "resdiff/schedule.hpp"
#include "resdiff/train.hpp"
