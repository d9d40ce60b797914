#pragma once

#include "safegen/analysis.hpp"
#include "safegen/detector.hpp"
#include "safegen/diffusion.hpp"
#include "safegen/disruption.hpp"
#include "safegen/embedding.hpp"
#include "safegen/errors.hpp"
#include "safegen/linalg.hpp"
#include "safegen/log.hpp"
#include "safegen/parallel.hpp"
#include "safegen/random.hpp"
#include "safegen/registry.hpp"
#include "safegen/safe_pipeline.hpp"
#include "safegen/toy_world.hpp"
