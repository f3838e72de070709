#pragma once

#include "sparsephase/losses.hpp"
#include "sparsephase/seqcore.hpp"

#include <span>
#include <vector>

namespace sparsephase {

inline constexpr int kBlankToken = -1;
inline constexpr int kStarToken = -2;

enum class TranscriptSource { from_annotations, from_full_labels };

/// Ordered segment labels. Phase tokens are >= 0; STAR appears only after star_augment.
struct Transcript {
  std::vector<int> tokens;
  TranscriptSource source = TranscriptSource::from_annotations;

  bool starred() const;
  /// Throws on BLANK tokens, adjacent duplicate phases, or STAR in an unstarred transcript.
  void validate(bool allow_star) const;
};

/// Removes BLANKs and merges consecutive repeats (a BLANK separates repeats).
std::vector<int> collapse(std::span<const int> path);

Transcript transcript_from_annotations(const AnnotationSet& annotations);
Transcript transcript_from_labels(const PhaseLabelSequence& labels);

/// [y1, ..., yL] -> [*, y1, *, y2, ..., *, yL, *]; [] -> [*].
Transcript star_augment(const Transcript& transcript);

/// Deterministic automaton over frame tokens (phases and BLANK) built from a
/// star-augmented transcript. A state is (segment, last token): the segment counts
/// transcript tokens matched so far, the last token tracks the collapse. The STAR of
/// segment j absorbs any phase run except one that would match y_{j+1} (leftmost
/// matching), so each accepted frame path has exactly one state path. An empty
/// transcript requires the STAR to cover at least one phase.
class StcLattice {
 public:
  StcLattice(const Transcript& augmented, int num_phases);

  int num_states() const { return static_cast<int>(next_.size()) / token_count(); }
  int token_count() const { return num_phases_ + 1; }
  /// Token index num_phases stands for BLANK.
  int blank_index() const { return num_phases_; }
  int start() const { return 0; }
  bool accepting(int state) const { return segment(state) == required_length(); }
  int next(int state, int token_index) const {
    return next_[static_cast<std::size_t>(state * token_count() + token_index)];
  }
  int segment(int state) const { return state / token_count(); }
  /// -1 after a BLANK or at the start, else the last emitted phase.
  int last_phase(int state) const { return state % token_count() - 1; }
  int required_length() const { return static_cast<int>(required_.size()); }

 private:
  int num_phases_;
  std::vector<int> required_;  // transcript phases; kStarToken is a wildcard for []
  std::vector<int> next_;
};

struct LatticeScores {
  LossValue loss;
  double forward_log_z = 0.0;
  double backward_log_z = 0.0;
};

/// -ln sum over frame paths collapsing to the transcript. Requires a BLANK column.
LossValue ctc_loss(const ProbabilityMatrix& probs, const Transcript& transcript);
LatticeScores ctc_scores(const ProbabilityMatrix& probs, const Transcript& transcript);

/// -ln total probability of the lattice built from star_augment(transcript).
LossValue stc_loss(const ProbabilityMatrix& probs, const Transcript& transcript);
LatticeScores stc_scores(const ProbabilityMatrix& probs, const Transcript& transcript);

/// Full argmax per frame with kBlankToken marking BLANK wins.
std::vector<int> raw_predictions(const ProbabilityMatrix& probs);

/// Each BLANK frame takes the label of its nearest non-BLANK frame (ties to the earlier one).
PhaseLabelSequence neighbor_copy(std::span<const int> predictions, int num_phases);

/// argmax per frame followed by neighbor_copy when the BLANK column is present.
PhaseLabelSequence predict_labels(const ProbabilityMatrix& probs);

/// Exhaustive oracle over all (C+1)^T frame paths; returns -ln of the accepted mass
/// (+inf when nothing is accepted). With star set, a path is accepted when the
/// transcript is a subsequence of its non-empty collapse.
double brute_force_path_sum(const ProbabilityMatrix& probs, const Transcript& transcript,
                            bool star);

}  // namespace sparsephase
