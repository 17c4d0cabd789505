#pragma once

#include "wire4d/adam.hpp"
#include "wire4d/bezier.hpp"
#include "wire4d/camera.hpp"
#include "wire4d/config.hpp"
#include "wire4d/depth.hpp"
#include "wire4d/error.hpp"
#include "wire4d/export.hpp"
#include "wire4d/fit.hpp"
#include "wire4d/guidance.hpp"
#include "wire4d/image.hpp"
#include "wire4d/init.hpp"
#include "wire4d/loss.hpp"
#include "wire4d/mesh.hpp"
#include "wire4d/metrics.hpp"
#include "wire4d/optimize.hpp"
#include "wire4d/pipeline.hpp"
#include "wire4d/projection.hpp"
#include "wire4d/raster.hpp"
#include "wire4d/spline.hpp"
#include "wire4d/topology.hpp"
#include "wire4d/wire_io.hpp"
