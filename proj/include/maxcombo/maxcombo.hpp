#pragma once

#include "maxcombo/error.hpp"
#include "maxcombo/normal.hpp"
#include "maxcombo/survival_data.hpp"
#include "maxcombo/mvnorm.hpp"
#include "maxcombo/rank_tests.hpp"
#include "maxcombo/estimands.hpp"
#include "maxcombo/simulation.hpp"
#include "maxcombo/design.hpp"
#include "maxcombo/group_sequential.hpp"
