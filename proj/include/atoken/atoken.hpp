#pragma once

#include "atoken/att.hpp"
#include "atoken/binary_io.hpp"
#include "atoken/cce.hpp"
#include "atoken/fmcore.hpp"
#include "atoken/metrics.hpp"
#include "atoken/mfr.hpp"
#include "atoken/numerics.hpp"
#include "atoken/pipeline.hpp"
#include "atoken/render.hpp"
#include "atoken/scene.hpp"
