#pragma once

#include "area/config.hpp"
#include "area/digest.hpp"
#include "area/encoder.hpp"
#include "area/errors.hpp"
#include "area/expert.hpp"
#include "area/hypersphere.hpp"
#include "area/io.hpp"
#include "area/linalg.hpp"
#include "area/pga.hpp"
#include "area/pipeline.hpp"
#include "area/routing.hpp"
#include "area/stream.hpp"
#include "area/synthetic.hpp"
