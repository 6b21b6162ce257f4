#pragma once

#include <cstdint>
#include <vector>

namespace distillab {

// Which teacher checkpoint supervises which student step. Entries refer to
// positions in a caller-owned checkpoint list; after the scheduled durations
// are exhausted the last checkpoint supervises indefinitely.
struct TeacherSchedule {
  std::vector<int> checkpoint_ids;
  std::vector<int64_t> durations;

  void validate() const;
};

int teacher_at_step(const TeacherSchedule& s, int64_t t);

TeacherSchedule schedule_one_shot(int final_id);
TeacherSchedule schedule_explicit(std::vector<int> ids, std::vector<int64_t> durations);

// One intermediate checkpoint for the first `t` steps, then the final one.
TeacherSchedule schedule_two_shot(int intermediate_id, int final_id, int64_t t);

// N-1 equally spaced intermediates plus the final checkpoint, `t` steps
// each. available_steps: ascending training steps of the stored checkpoints;
// returned ids index into that list.
TeacherSchedule schedule_n_t_progressive(const std::vector<int64_t>& available_steps, int n,
                                         int64_t t);

// Splits the student budget into equal intervals across the given ids.
TeacherSchedule schedule_equal_split(std::vector<int> ids, int64_t student_total);

// kappa*teacher_total/N steps per checkpoint; checkpoints that do not fit
// the student's run are simply never reached, and the final checkpoint
// persists. kappa must lie in (0, 1].
TeacherSchedule schedule_kappa_split(std::vector<int> ids, double kappa,
                                     int64_t teacher_total);

// Nearest available checkpoint step for each multiple i*c1, i = 1..n.
std::vector<int> select_checkpoints_at_multiples(const std::vector<int64_t>& available_steps,
                                                 int64_t c1, int n);

}  // namespace distillab
