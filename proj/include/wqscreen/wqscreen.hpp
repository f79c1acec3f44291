/*
 * Copyright 2026 The wqscreen Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include "wqscreen/calibration.hpp"
#include "wqscreen/common.hpp"
#include "wqscreen/csv.hpp"
#include "wqscreen/explain.hpp"
#include "wqscreen/features.hpp"
#include "wqscreen/metrics.hpp"
#include "wqscreen/pipeline.hpp"
#include "wqscreen/qc.hpp"
#include "wqscreen/records.hpp"
#include "wqscreen/split.hpp"
#include "wqscreen/stats.hpp"
#include "wqscreen/synth.hpp"
#include "wqscreen/trees.hpp"
