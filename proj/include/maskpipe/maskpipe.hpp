#pragma once

#include "maskpipe/alignment.hpp"
#include "maskpipe/annotations.hpp"
#include "maskpipe/classification.hpp"
#include "maskpipe/detection.hpp"
#include "maskpipe/errors.hpp"
#include "maskpipe/evaluation.hpp"
#include "maskpipe/geometry.hpp"
#include "maskpipe/image.hpp"
#include "maskpipe/image_io.hpp"
#include "maskpipe/pipeline.hpp"
#include "maskpipe/review.hpp"
