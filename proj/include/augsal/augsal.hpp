#pragma once

#include "augsal/augmentor.hpp"
#include "augsal/backbone.hpp"
#include "augsal/checkpoint.hpp"
#include "augsal/config.hpp"
#include "augsal/dataset.hpp"
#include "augsal/editor.hpp"
#include "augsal/error.hpp"
#include "augsal/image_io.hpp"
#include "augsal/metrics.hpp"
#include "augsal/nn.hpp"
#include "augsal/objectives.hpp"
#include "augsal/photometrics.hpp"
#include "augsal/pretrained_adapter.hpp"
#include "augsal/readouts.hpp"
#include "augsal/tensor.hpp"
#include "augsal/tensor_io.hpp"
#include "augsal/tiny_backbone.hpp"
#include "augsal/training.hpp"
