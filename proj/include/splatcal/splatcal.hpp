#pragma once

#include "splatcal/camgrad.hpp"
#include "splatcal/common.hpp"
#include "splatcal/config.hpp"
#include "splatcal/eval.hpp"
#include "splatcal/geometry.hpp"
#include "splatcal/io.hpp"
#include "splatcal/optim.hpp"
#include "splatcal/renderer.hpp"
#include "splatcal/reparam.hpp"
#include "splatcal/report.hpp"
#include "splatcal/scene.hpp"
#include "splatcal/schedule.hpp"
