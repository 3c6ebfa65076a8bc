#pragma once

#include "mhai/aggregate.hpp"
#include "mhai/chain.hpp"
#include "mhai/client.hpp"
#include "mhai/cohort.hpp"
#include "mhai/config.hpp"
#include "mhai/dataset.hpp"
#include "mhai/error.hpp"
#include "mhai/forest.hpp"
#include "mhai/harness.hpp"
#include "mhai/hash.hpp"
#include "mhai/nn.hpp"
#include "mhai/parallel.hpp"
#include "mhai/stream.hpp"
