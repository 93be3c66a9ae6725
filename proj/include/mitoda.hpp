#pragma once

#include "mitoda/checkpoint.hpp"
#include "mitoda/dataio.hpp"
#include "mitoda/error.hpp"
#include "mitoda/harness.hpp"
#include "mitoda/image.hpp"
#include "mitoda/layers.hpp"
#include "mitoda/morpho.hpp"
#include "mitoda/nets.hpp"
#include "mitoda/objectives.hpp"
#include "mitoda/optim.hpp"
#include "mitoda/plot.hpp"
#include "mitoda/png_io.hpp"
#include "mitoda/preprocess.hpp"
#include "mitoda/random.hpp"
#include "mitoda/schedule.hpp"
#include "mitoda/tensor.hpp"
#include "mitoda/train.hpp"
