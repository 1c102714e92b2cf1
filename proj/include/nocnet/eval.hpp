#pragma once

#include "nocnet/eval/matrix.hpp"
#include "nocnet/eval/metrics.hpp"
#include "nocnet/eval/pca.hpp"
#include "nocnet/eval/svm.hpp"
#include "nocnet/eval/tsne.hpp"
