#pragma once

#include "lmtcnn/cost.hpp"
#include "lmtcnn/dataset.hpp"
#include "lmtcnn/image.hpp"
#include "lmtcnn/model_io.hpp"
#include "lmtcnn/network.hpp"
#include "lmtcnn/ops.hpp"
#include "lmtcnn/tensor.hpp"
#include "lmtcnn/threading.hpp"
#include "lmtcnn/train.hpp"
