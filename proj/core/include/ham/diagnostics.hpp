#pragma once

#include "ham/data.hpp"
#include "ham/model.hpp"
#include "ham/params.hpp"

namespace ham {

// Fraction of samples whose predicted class equals the stored label.
double accuracy(const CosineClassifier& model, const ParamSet& params, const DatasetView& view);

/// Among coordinates where both vectors are nonzero, the fraction whose signs
/// differ. 0 when no coordinate qualifies.
double sign_conflict_rate(const ParamSet& v_i, const ParamSet& v_bar);

}  // namespace ham
