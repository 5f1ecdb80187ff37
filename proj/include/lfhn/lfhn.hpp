#ifndef LFHN_LFHN_HPP
#define LFHN_LFHN_HPP

#include "checkpoint.hpp"
#include "data.hpp"
#include "error.hpp"
#include "eval.hpp"
#include "graph.hpp"
#include "image_io.hpp"
#include "layers.hpp"
#include "network.hpp"
#include "tensor.hpp"
#include "train.hpp"

#endif  // LFHN_LFHN_HPP
