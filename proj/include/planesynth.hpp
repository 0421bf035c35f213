#pragma once

#include "planesynth/errors.hpp"
#include "planesynth/tensor.hpp"
#include "planesynth/geometry.hpp"
#include "planesynth/plane_sampler.hpp"
#include "planesynth/mpi_render.hpp"
#include "planesynth/supervision.hpp"
#include "planesynth/attention.hpp"
#include "planesynth/autodiff.hpp"
#include "planesynth/optim.hpp"
#include "planesynth/metrics.hpp"
#include "planesynth/fit.hpp"
#include "planesynth/scene_lab.hpp"
#include "planesynth/io.hpp"
#include "planesynth/experiment.hpp"
