#pragma once

#include "selfdetect/backend.hpp"
#include "selfdetect/core.hpp"
#include "selfdetect/harness.hpp"
#include "selfdetect/http_backend.hpp"
#include "selfdetect/metrics.hpp"
#include "selfdetect/parsing.hpp"
#include "selfdetect/prompts.hpp"
#include "selfdetect/strategies.hpp"
