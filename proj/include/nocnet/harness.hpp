#pragma once

#include "nocnet/harness/config.hpp"
#include "nocnet/harness/csv.hpp"
#include "nocnet/harness/pipeline.hpp"
#include "nocnet/harness/run.hpp"
