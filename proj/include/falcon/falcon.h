#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "falcon/denoiser.h"
#include "falcon/samplers.h"
#include "falcon/schedule.h"

namespace falcon {

// A partially denoised chunk produced at decision step `origin` (1-based
// wall-clock step) and noise level `level`.
struct PartialAction {
  int origin = 1;
  int level = 1;
  Matrix values;
};

// Bounded store of partial actions. When full, the entry with the oldest
// origin is evicted first, then the noisiest, then the earliest inserted.
class LatentBuffer {
 public:
  explicit LatentBuffer(std::size_t capacity);

  // Throws std::invalid_argument for origin < 1, level < 1 or non-finite
  // values.
  void insert(PartialAction entry);
  void clear() {
    entries_.clear();
    sequence_.clear();
  }

  std::size_t size() const { return entries_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return entries_.empty(); }
  // Entries in insertion order.
  const std::vector<PartialAction>& entries() const { return entries_; }
  const PartialAction& operator[](std::size_t i) const { return entries_[i]; }

 private:
  std::size_t capacity_;
  std::vector<PartialAction> entries_;
  std::vector<std::uint64_t> sequence_;
  std::uint64_t next_sequence_ = 0;
};

enum class DistanceNorm { kRms, kL2 };
enum class Alignment { kShifted, kWallClock };
enum class SelectionMode { kAdaptive, kFixedLevel };

DistanceNorm parse_distance_norm(std::string_view name);
Alignment parse_alignment(std::string_view name);
SelectionMode parse_selection_mode(std::string_view name);
std::string to_string(DistanceNorm v);
std::string to_string(Alignment v);
std::string to_string(SelectionMode v);

struct FalconConfig {
  double epsilon = 0.04;
  double delta = 0.1;
  double kappa = 1.0;
  int k_min = 20;
  std::size_t capacity = 50;
  DistanceNorm distance = DistanceNorm::kRms;
  Alignment alignment = Alignment::kShifted;
  SelectionMode selection = SelectionMode::kAdaptive;
  int fixed_level = 50;  // only read in kFixedLevel mode

  void validate() const;
};

struct Horizons {
  int execute = 8;   // T_a
  int predict = 16;  // T_p
};

// Unexecuted tail of the previous prediction, covering wall-clock steps
// [start, start + T_p - T_a).
struct ReferenceAction {
  Matrix values;
  int start = 1;
};

ReferenceAction make_reference(const ActionChunk& previous, int previous_t,
                               const Horizons& h);

// Rows of a buffered chunk compared against the reference at decision t.
struct OverlapWindow {
  int candidate_row = 0;
  int reference_row = 0;
  int rows = 0;
};

// kShifted compares the first T_p - T_a rows of the candidate, matching its
// reuse as the chunk for step t. kWallClock intersects the candidate span
// [origin, origin + T_p) with the reference span; may be empty.
std::optional<OverlapWindow> overlap_window(const PartialAction& p, int t,
                                            const Horizons& h,
                                            Alignment alignment);

// Posterior-mean clean estimate of `p` under the current observation,
// restricted to the window rows. One denoiser evaluation.
Matrix tweedie_estimate(const NoiseSchedule& schedule, const Denoiser& denoiser,
                        const ObservationWindow& obs, const PartialAction& p,
                        const OverlapWindow& window);

struct Estimate {
  Matrix rows;
  OverlapWindow window;
};

struct EstimationPass {
  std::vector<std::optional<Estimate>> estimates;  // aligned with the buffer
  int evaluations = 0;
};

// Tweedie estimate for every buffer entry with a nonempty overlap.
EstimationPass estimate_buffer(const NoiseSchedule& schedule,
                               const Denoiser& denoiser,
                               const ObservationWindow& obs,
                               const LatentBuffer& buffer, const Horizons& h,
                               Alignment alignment);

double overlap_distance(const Matrix& estimate, const Matrix& reference,
                        DistanceNorm norm);

// Buffer indices whose estimate lies strictly within epsilon of the reference
// and whose level is at least k_min.
std::vector<std::size_t> build_candidate_set(
    const LatentBuffer& buffer, const std::vector<std::optional<Estimate>>& estimates,
    const ReferenceAction& reference, const FalconConfig& cfg);

struct StartChoice {
  bool gaussian = true;
  std::size_t candidate = 0;  // index into the candidate list
};

// Gaussian start with probability delta or when there are no candidates;
// otherwise a draw with P(k) proportional to exp(-k / kappa) over candidates.
StartChoice select_start(const std::vector<int>& candidate_levels,
                         const FalconConfig& cfg, Rng& rng);

// Per-decision randomness. `chain` feeds the initial noise and sampler steps,
// `selection` the exploration coin and the start draw.
struct DecisionStreams {
  Rng chain;
  Rng selection;
};

DecisionStreams decision_streams(std::uint64_t episode_seed, int decision);

struct FalconState {
  explicit FalconState(std::size_t capacity) : buffer(capacity) {}

  LatentBuffer buffer;
  std::optional<ActionChunk> previous;  // level-0 prediction of the last decision
  int previous_t = 0;
};

struct DecisionResult {
  ActionChunk chunk;
  bool explored = true;  // started from fresh noise at K
  int start_origin = 0;  // origin step of the reused entry, 0 when explored
  int start_level = 0;
  int nfe_sequential = 0;
  int estimation_batch = 0;
  int candidates = 0;
};

struct DecisionContext {
  SamplerKind kind;
  const NoiseSchedule& schedule;
  const StepGrid& grid;
  const Denoiser& denoiser;
  Horizons horizons;
  int action_dim = 2;
};

// Plain baseline decision: full chain from fresh noise.
DecisionResult baseline_decide(const DecisionContext& ctx,
                               const ObservationWindow& obs,
                               DecisionStreams& streams);

// One Falcon decision at step obs.t. The first decision of an episode runs the
// baseline chain; later ones estimate the whole buffer, select a start and
// finish the chain from it. Every visited chunk is inserted into the buffer.
DecisionResult falcon_decide(const DecisionContext& ctx,
                             const ObservationWindow& obs, FalconState& state,
                             const FalconConfig& cfg, DecisionStreams& streams);

}  // namespace falcon
