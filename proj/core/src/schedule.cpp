#include "distillab/schedule.hpp"

#include <cmath>
#include <cstdlib>
#include <stdexcept>

namespace distillab {

void TeacherSchedule::validate() const {
  if (checkpoint_ids.empty())
    throw std::invalid_argument("schedule: at least one checkpoint required");
  if (checkpoint_ids.size() != durations.size())
    throw std::invalid_argument("schedule: checkpoint/duration arity mismatch");
  for (int64_t d : durations)
    if (d < 0) throw std::invalid_argument("schedule: durations must be >= 0");
}

int teacher_at_step(const TeacherSchedule& s, int64_t t) {
  if (t < 0) throw std::invalid_argument("teacher_at_step: negative step");
  int64_t acc = 0;
  for (size_t i = 0; i < s.durations.size(); ++i) {
    acc += s.durations[i];
    if (t < acc) return static_cast<int>(i);
  }
  return static_cast<int>(s.checkpoint_ids.size()) - 1;
}

TeacherSchedule schedule_one_shot(int final_id) {
  TeacherSchedule s;
  s.checkpoint_ids = {final_id};
  s.durations = {0};
  s.validate();
  return s;
}

TeacherSchedule schedule_explicit(std::vector<int> ids, std::vector<int64_t> durations) {
  TeacherSchedule s;
  s.checkpoint_ids = std::move(ids);
  s.durations = std::move(durations);
  s.validate();
  return s;
}

TeacherSchedule schedule_two_shot(int intermediate_id, int final_id, int64_t t) {
  if (t <= 0) throw std::invalid_argument("two_shot: switch step must be positive");
  TeacherSchedule s;
  s.checkpoint_ids = {intermediate_id, final_id};
  s.durations = {t, 0};
  s.validate();
  return s;
}

namespace {

int nearest_step_index(const std::vector<int64_t>& steps, int64_t target) {
  int best = 0;
  int64_t best_gap = std::abs(steps[0] - target);
  for (size_t i = 1; i < steps.size(); ++i) {
    int64_t gap = std::abs(steps[i] - target);
    if (gap < best_gap) {
      best = static_cast<int>(i);
      best_gap = gap;
    }
  }
  return best;
}

}  // namespace

TeacherSchedule schedule_n_t_progressive(const std::vector<int64_t>& available_steps, int n,
                                         int64_t t) {
  if (available_steps.empty())
    throw std::invalid_argument("n_t_progressive: no checkpoints available");
  if (n < 1 || n > static_cast<int>(available_steps.size()))
    throw std::invalid_argument("n_t_progressive: N exceeds available checkpoints");
  if (t <= 0) throw std::invalid_argument("n_t_progressive: T must be positive");
  int64_t total = available_steps.back();
  TeacherSchedule s;
  for (int i = 1; i < n; ++i) {
    int64_t target = total * i / n;
    s.checkpoint_ids.push_back(nearest_step_index(available_steps, target));
    s.durations.push_back(t);
  }
  s.checkpoint_ids.push_back(static_cast<int>(available_steps.size()) - 1);
  s.durations.push_back(t);
  s.validate();
  return s;
}

TeacherSchedule schedule_equal_split(std::vector<int> ids, int64_t student_total) {
  if (ids.empty()) throw std::invalid_argument("equal_split: no checkpoints");
  if (student_total <= 0) throw std::invalid_argument("equal_split: empty student budget");
  int n = static_cast<int>(ids.size());
  TeacherSchedule s;
  s.checkpoint_ids = std::move(ids);
  int64_t base = student_total / n;
  for (int i = 0; i < n; ++i) s.durations.push_back(base);
  s.durations.back() += student_total % n;
  s.validate();
  return s;
}

TeacherSchedule schedule_kappa_split(std::vector<int> ids, double kappa,
                                     int64_t teacher_total) {
  if (!(kappa > 0.0 && kappa <= 1.0))
    throw std::invalid_argument("kappa_split: kappa must lie in (0, 1]");
  if (ids.empty()) throw std::invalid_argument("kappa_split: no checkpoints");
  int n = static_cast<int>(ids.size());
  int64_t per = static_cast<int64_t>(std::llround(
      kappa * static_cast<double>(teacher_total) / static_cast<double>(n)));
  TeacherSchedule s;
  s.checkpoint_ids = std::move(ids);
  s.durations.assign(static_cast<size_t>(n), per);
  s.validate();
  return s;
}

std::vector<int> select_checkpoints_at_multiples(const std::vector<int64_t>& available_steps,
                                                 int64_t c1, int n) {
  if (available_steps.empty())
    throw std::invalid_argument("select_checkpoints: no checkpoints available");
  std::vector<int> out;
  for (int i = 1; i <= n; ++i) out.push_back(nearest_step_index(available_steps, c1 * i));
  return out;
}

}  // namespace distillab
