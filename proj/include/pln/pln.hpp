#ifndef PLN_PLN_HPP
#define PLN_PLN_HPP

#include "pln/adam.hpp"
#include "pln/branch.hpp"
#include "pln/checkpoint.hpp"
#include "pln/config.hpp"
#include "pln/dataset.hpp"
#include "pln/encoders.hpp"
#include "pln/errors.hpp"
#include "pln/evaluate.hpp"
#include "pln/gradcheck.hpp"
#include "pln/inference.hpp"
#include "pln/lstm.hpp"
#include "pln/ops.hpp"
#include "pln/params.hpp"
#include "pln/temporal_map.hpp"
#include "pln/tensor.hpp"
#include "pln/training.hpp"

#endif  // PLN_PLN_HPP
