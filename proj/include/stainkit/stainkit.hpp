#pragma once

#include "stainkit/augment.hpp"
#include "stainkit/error.hpp"
#include "stainkit/image.hpp"
#include "stainkit/lab.hpp"
#include "stainkit/loss.hpp"
#include "stainkit/metrics.hpp"
#include "stainkit/normalize.hpp"
#include "stainkit/od.hpp"
#include "stainkit/pfm_io.hpp"
#include "stainkit/png_io.hpp"
#include "stainkit/profile.hpp"
#include "stainkit/separation.hpp"

#define STAINKIT_VERSION "0.1.0"
