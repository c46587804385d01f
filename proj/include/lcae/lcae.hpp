#pragma once

#include "lcae/checkpoint.hpp"
#include "lcae/config.hpp"
#include "lcae/detection.hpp"
#include "lcae/embedding.hpp"
#include "lcae/error.hpp"
#include "lcae/evaluation.hpp"
#include "lcae/image.hpp"
#include "lcae/io/archive.hpp"
#include "lcae/io/png.hpp"
#include "lcae/io/volume_io.hpp"
#include "lcae/losses.hpp"
#include "lcae/model.hpp"
#include "lcae/optim.hpp"
#include "lcae/phantom.hpp"
#include "lcae/pipeline.hpp"
#include "lcae/preprocess.hpp"
#include "lcae/report.hpp"
#include "lcae/training.hpp"
#include "lcae/tsne.hpp"
