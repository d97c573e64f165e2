#pragma once

#include "fflow/checkpoint.hpp"
#include "fflow/config.hpp"
#include "fflow/datagen.hpp"
#include "fflow/earlystop.hpp"
#include "fflow/embed.hpp"
#include "fflow/errors.hpp"
#include "fflow/flow.hpp"
#include "fflow/lfi.hpp"
#include "fflow/nn.hpp"
#include "fflow/random.hpp"
#include "fflow/stats.hpp"
