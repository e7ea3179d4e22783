// Copyright (c) 2026 The mvdit Authors
// SPDX-License-Identifier: Apache-2.0

#include "mvdit/conditioning/condition.hpp"

namespace mvdit::conditioning {

ConditionTriple make_condition(std::optional<SceneCaption> caption, std::optional<std::vector<LayoutEntry>> layout,
                               std::optional<RoadSketch> sketch) {
    ConditionTriple triple;
    triple.caption = caption;
    if (layout) triple.layout = std::make_shared<const std::vector<LayoutEntry>>(std::move(*layout));
    if (sketch) triple.sketch = std::make_shared<const RoadSketch>(std::move(*sketch));
    return triple;
}

ConditionTriple dropout_conditions(const ConditionTriple& triple, std::mt19937_64& rng, const DropoutRates& rates) {
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    if (uniform(rng) < rates.joint) {
        return ConditionTriple::null();
    }
    ConditionTriple out = triple;
    if (uniform(rng) < rates.each) out.caption.reset();
    if (uniform(rng) < rates.each) out.layout.reset();
    if (uniform(rng) < rates.each) out.sketch.reset();
    return out;
}

}  // namespace mvdit::conditioning
