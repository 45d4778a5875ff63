// Copyright 2026 The crica Authors.
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

#include "crica/autodiff.hpp"
#include "crica/backbone.hpp"
#include "crica/binary_io.hpp"
#include "crica/checkpoint.hpp"
#include "crica/config.hpp"
#include "crica/crica_encoder.hpp"
#include "crica/dataset.hpp"
#include "crica/descriptor_set.hpp"
#include "crica/error.hpp"
#include "crica/grad_check.hpp"
#include "crica/gradcheck_suite.hpp"
#include "crica/kernels.hpp"
#include "crica/metric_learning.hpp"
#include "crica/model.hpp"
#include "crica/mulconv_adapter.hpp"
#include "crica/optimizer.hpp"
#include "crica/parameters.hpp"
#include "crica/pca.hpp"
#include "crica/random.hpp"
#include "crica/retrieval.hpp"
#include "crica/spm.hpp"
#include "crica/synth_data.hpp"
#include "crica/tensor.hpp"
#include "crica/trainer.hpp"
#include "crica/transformer.hpp"
