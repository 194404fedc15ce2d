#pragma once

#include "refined/bmds.hpp"
#include "refined/common.hpp"
#include "refined/dataio.hpp"
#include "refined/distances.hpp"
#include "refined/embedding.hpp"
#include "refined/ensemble.hpp"
#include "refined/evaluation.hpp"
#include "refined/image_io.hpp"
#include "refined/pipeline.hpp"
#include "refined/predictions.hpp"
#include "refined/projections.hpp"
#include "refined/refined.hpp"
