#pragma once

#include "nocnet/datapipe/blur.hpp"
#include "nocnet/datapipe/flow.hpp"
#include "nocnet/datapipe/fourier.hpp"
#include "nocnet/datapipe/image.hpp"
#include "nocnet/datapipe/sampling.hpp"
#include "nocnet/datapipe/synthetic.hpp"
