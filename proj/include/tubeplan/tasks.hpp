#pragma once

#include <string>

#include "tubeplan/planner.hpp"

namespace tubeplan {

/// A benchmark scenario: mechanical model, planning problem, solver settings.
struct TaskSpec {
    std::string name;
    MechanicalModel model;
    PlanningProblem problem;
    ScpSettings scp;
};

/// 1-D pusher: one stiffness-controlled finger pushing an object along a
/// line through a single normal contact.
TaskSpec pusher1d();

/// Planar pushing: a point finger against a frictional box slider, with a
/// lateral corridor constraint on the object.
TaskSpec planar_pusher_slider();

/// Two planar fingers manipulating a box; exercises geometry smoothing.
TaskSpec planar_two_finger_box();

/// JSON task file round trip. Unknown fields are rejected; validation errors
/// name the offending field.
TaskSpec load_task(const std::string& path);
void save_task(const TaskSpec& task, const std::string& path);

TaskSpec parse_task_json(const std::string& text);
std::string task_to_json(const TaskSpec& task);

}  // namespace tubeplan
