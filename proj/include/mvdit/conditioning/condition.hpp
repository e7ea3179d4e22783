// Copyright (c) 2026 The mvdit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <memory>
#include <optional>
#include <random>
#include <vector>

#include "mvdit/conditioning/caption.hpp"
#include "mvdit/conditioning/layout.hpp"
#include "mvdit/conditioning/sketch.hpp"

namespace mvdit::conditioning {

/// Caption, layout and sketch conditions; an empty slot is the null
/// condition. Layout and sketch are shared immutable payloads, so copies and
/// slot drops are cheap.
struct ConditionTriple {
    std::optional<SceneCaption> caption;
    std::shared_ptr<const std::vector<LayoutEntry>> layout;
    std::shared_ptr<const RoadSketch> sketch;

    bool has_caption() const { return caption.has_value(); }
    bool has_layout() const { return static_cast<bool>(layout); }
    bool has_sketch() const { return static_cast<bool>(sketch); }

    ConditionTriple without_caption() const { return {std::nullopt, layout, sketch}; }
    ConditionTriple without_layout() const { return {caption, nullptr, sketch}; }
    ConditionTriple without_sketch() const { return {caption, layout, nullptr}; }
    static ConditionTriple null() { return {}; }
};

ConditionTriple make_condition(std::optional<SceneCaption> caption, std::optional<std::vector<LayoutEntry>> layout,
                               std::optional<RoadSketch> sketch);

struct DropoutRates {
    double joint = 0.05;  // all three slots at once
    double each = 0.05;   // per slot, when the joint draw did not fire
};

/// Training-time condition dropout: first a joint draw that nulls every
/// slot, otherwise one independent draw per slot.
ConditionTriple dropout_conditions(const ConditionTriple& triple, std::mt19937_64& rng, const DropoutRates& rates = {});

}  // namespace mvdit::conditioning
