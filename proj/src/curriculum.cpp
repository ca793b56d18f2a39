#include "cloe/curriculum.hpp"

#include <sstream>
#include <unordered_map>

namespace cloe::curriculum {

Partition partition(const Dataset& train, std::span<const quality::CleanlinessScore> scores, double tau) {
  std::unordered_map<std::string_view, double> by_id;
  by_id.reserve(scores.size());
  for (const auto& sc : scores) by_id.emplace(sc.sample_id, sc.s);
  Partition p;
  p.tau = tau;
  for (const auto& s : train.samples) {
    auto it = by_id.find(s.id);
    if (it == by_id.end()) throw DataError("partition: sample '" + s.id + "' has no cleanliness score");
    (quality::pseudo_label(it->second, tau) == quality::QualityLabel::Clean ? p.clean_ids : p.noisy_ids)
        .push_back(s.id);
    p.all_ids.push_back(s.id);
  }
  return p;
}

std::string_view to_string(Phase p) {
  switch (p) {
    case Phase::CleanOnly: return "CleanOnly";
    case Phase::Combined: return "Combined";
    case Phase::NoisyOnly: return "NoisyOnly";
    case Phase::Done: return "Done";
  }
  return "Done";
}

std::vector<std::string> phase_dataset(const Partition& part, Phase phase) {
  switch (phase) {
    case Phase::CleanOnly: return part.clean_ids;
    case Phase::Combined: return part.all_ids;
    case Phase::NoisyOnly: return part.noisy_ids;
    case Phase::Done: break;
  }
  throw DataError("phase_dataset: the Done phase has no data");
}

PhaseState PhaseState::start(std::vector<Phase> sequence, int patience, int max_epochs_per_phase) {
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (max_epochs_per_phase < 1) throw ConfigError("max_epochs_per_phase must be >= 1");
  PhaseState s;
  s.sequence = std::move(sequence);
  s.patience = patience;
  s.max_epochs_per_phase = max_epochs_per_phase;
  s.phase = s.sequence.empty() ? Phase::Done : s.sequence.front();
  return s;
}

PhaseState advance(PhaseState state, double val_acc) {
  if (state.done()) throw DataError("advance: training already finished");
  ++state.epochs_in_phase;
  if (val_acc > state.best_val_acc) {
    state.best_val_acc = val_acc;
    state.epochs_since_improve = 0;
  } else {
    ++state.epochs_since_improve;
  }
  const bool transition =
      state.epochs_since_improve >= state.patience || state.epochs_in_phase >= state.max_epochs_per_phase;
  state.log.push_back({state.phase, state.epoch, val_acc, transition});
  ++state.epoch;
  if (transition) {
    ++state.index;
    state.phase = state.index < state.sequence.size() ? state.sequence[state.index] : Phase::Done;
    state.epochs_since_improve = 0;
    state.epochs_in_phase = 0;
    state.best_val_acc = -std::numeric_limits<double>::infinity();
  }
  return state;
}

std::string_view to_string(Protocol p) {
  switch (p) {
    case Protocol::STD_A: return "STD_A";
    case Protocol::STD_C: return "STD_C";
    case Protocol::CL: return "CL";
  }
  return "CL";
}

Protocol parse_protocol(std::string_view s) {
  if (s == "STD_A") return Protocol::STD_A;
  if (s == "STD_C") return Protocol::STD_C;
  if (s == "CL") return Protocol::CL;
  throw ConfigError("unknown protocol '" + std::string(s) + "'");
}

std::vector<ScheduledPhase> protocol_schedule(Protocol protocol, const Partition& part) {
  switch (protocol) {
    case Protocol::STD_A:
      return {{Phase::Combined, part.all_ids}};
    case Protocol::STD_C:
      if (part.clean_ids.empty()) throw DataError("STD_C: no clean samples at this threshold");
      return {{Phase::CleanOnly, part.clean_ids}};
    case Protocol::CL: {
      std::vector<ScheduledPhase> out;
      for (Phase ph : {Phase::CleanOnly, Phase::Combined, Phase::NoisyOnly}) {
        auto ids = phase_dataset(part, ph);
        if (ids.empty()) continue;
        if (!out.empty() && out.back().ids == ids) continue;
        out.push_back({ph, std::move(ids)});
      }
      return out;
    }
  }
  return {};
}

std::string phase_log_csv(std::span<const EpochLog> log) {
  std::ostringstream os;
  os << "phase,epoch,val_acc,transitioned\n";
  for (const auto& e : log) {
    os << to_string(e.phase) << ',' << e.epoch << ',' << format_real(e.val_acc) << ',' << (e.transitioned ? 1 : 0)
       << '\n';
  }
  return os.str();
}

}  // namespace cloe::curriculum
