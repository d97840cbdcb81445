#pragma once

#include <gtest/gtest.h>

#include "../common/support.hpp"
