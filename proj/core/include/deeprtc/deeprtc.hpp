#pragma once

#include "deeprtc/data.hpp"
#include "deeprtc/evaluation.hpp"
#include "deeprtc/inference.hpp"
#include "deeprtc/model.hpp"
#include "deeprtc/taxonomy.hpp"
#include "deeprtc/training.hpp"
