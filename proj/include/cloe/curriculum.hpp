#pragma once

#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cloe/core.hpp"
#include "cloe/quality.hpp"

namespace cloe::curriculum {

/// Training ids split at tau: clean = {s >= tau}, noisy = {s < tau}. Both
/// lists, and all_ids, keep manifest order.
struct Partition {
  std::vector<std::string> clean_ids;
  std::vector<std::string> noisy_ids;
  std::vector<std::string> all_ids;
  double tau = 0.5;
};

Partition partition(const Dataset& train, std::span<const quality::CleanlinessScore> scores, double tau);

enum class Phase { CleanOnly, Combined, NoisyOnly, Done };

std::string_view to_string(Phase p);

/// Ids trained on during a phase. Done has no data and throws.
std::vector<std::string> phase_dataset(const Partition& part, Phase phase);

struct EpochLog {
  Phase phase = Phase::CleanOnly;
  int epoch = 0;
  double val_acc = 0.0;
  bool transitioned = false;
};

/// Early-stopping driven phase machine. `sequence` lists the phases still to
/// run, normally CleanOnly, Combined, NoisyOnly; protocols with a single
/// pseudo-phase use a one-element sequence.
struct PhaseState {
  std::vector<Phase> sequence{Phase::CleanOnly, Phase::Combined, Phase::NoisyOnly};
  std::size_t index = 0;
  Phase phase = Phase::CleanOnly;
  double best_val_acc = -std::numeric_limits<double>::infinity();
  int epochs_since_improve = 0;
  int patience = 5;
  int epochs_in_phase = 0;
  int max_epochs_per_phase = 100;
  int epoch = 0;
  std::vector<EpochLog> log;

  static PhaseState start(std::vector<Phase> sequence, int patience = 5, int max_epochs_per_phase = 100);
  bool done() const { return phase == Phase::Done; }
};

/// Feeds one validation accuracy. Strictly better resets the counter; after
/// `patience` non-improving epochs (or the per-phase cap) the state moves to
/// the next phase with a fresh best of -inf.
PhaseState advance(PhaseState state, double val_acc);

enum class Protocol { STD_A, STD_C, CL };

std::string_view to_string(Protocol p);
Protocol parse_protocol(std::string_view s);

struct ScheduledPhase {
  Phase phase;
  std::vector<std::string> ids;
};

/// STD_A: one pass over everything (Combined). STD_C: clean only. CL: the
/// three phases with empty phases dropped and a phase repeating the previous
/// one's id list merged into it.
std::vector<ScheduledPhase> protocol_schedule(Protocol protocol, const Partition& part);

/// CSV `phase,epoch,val_acc,transitioned`.
std::string phase_log_csv(std::span<const EpochLog> log);

}  // namespace cloe::curriculum
