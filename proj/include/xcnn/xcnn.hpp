#pragma once

#include "xcnn/deconv.hpp"
#include "xcnn/evaluation.hpp"
#include "xcnn/explain.hpp"
#include "xcnn/image_io.hpp"
#include "xcnn/importance.hpp"
#include "xcnn/network.hpp"
#include "xcnn/perturbation.hpp"
#include "xcnn/serialize.hpp"
#include "xcnn/stats.hpp"
#include "xcnn/train.hpp"
