#pragma once

#include "rgdepth/errors.hpp"
#include "rgdepth/geometry.hpp"
#include "rgdepth/io.hpp"
#include "rgdepth/losses.hpp"
#include "rgdepth/parallel.hpp"
#include "rgdepth/random.hpp"
#include "rgdepth/refine.hpp"
#include "rgdepth/residual_guidance.hpp"
#include "rgdepth/sampling.hpp"
#include "rgdepth/scenes.hpp"
#include "rgdepth/selfcheck.hpp"
#include "rgdepth/tensors.hpp"
