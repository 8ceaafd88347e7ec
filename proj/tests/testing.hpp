#pragma once

// libtorch's logging header defines its own CHECK, which would shadow doctest's.
#include <torch/torch.h>
#undef CHECK

#include <doctest.h>
