#pragma once

#include "jmboost/data.hpp"
#include "jmboost/baselearners.hpp"
#include "jmboost/jointlik.hpp"
#include "jmboost/engine.hpp"
#include "jmboost/tuning.hpp"
#include "jmboost/simgen.hpp"
