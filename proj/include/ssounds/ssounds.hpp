#pragma once

#include "ssounds/error.hpp"
#include "ssounds/rng.hpp"
#include "ssounds/hashing.hpp"
#include "ssounds/tensor.hpp"
#include "ssounds/binary_io.hpp"
#include "ssounds/audio.hpp"
#include "ssounds/dsp.hpp"
#include "ssounds/encoders.hpp"
#include "ssounds/archive.hpp"
#include "ssounds/model.hpp"
#include "ssounds/optim.hpp"
#include "ssounds/checkpoint.hpp"
#include "ssounds/augment.hpp"
#include "ssounds/caption_service.hpp"
#include "ssounds/corpus.hpp"
#include "ssounds/training.hpp"
#include "ssounds/evaluation.hpp"
#include "ssounds/conditioning.hpp"
#include "ssounds/config.hpp"
