/* Copyright 2026 The pvl Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include "pvl/binary.hpp"
#include "pvl/builders.hpp"
#include "pvl/cache.hpp"
#include "pvl/error.hpp"
#include "pvl/generate.hpp"
#include "pvl/harness.hpp"
#include "pvl/kvcache.hpp"
#include "pvl/model.hpp"
#include "pvl/model_io.hpp"
#include "pvl/numcore.hpp"
#include "pvl/persona.hpp"
#include "pvl/planted.hpp"
#include "pvl/probes.hpp"
#include "pvl/report.hpp"
#include "pvl/rng.hpp"
#include "pvl/space.hpp"
#include "pvl/trace.hpp"
#include "pvl/transcript.hpp"
