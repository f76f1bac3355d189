#ifndef PULSE_CSC_RECORDS_HPP
#define PULSE_CSC_RECORDS_HPP

#include <array>
#include <optional>
#include <string>
#include <string_view>

#include "pulse_csc/error.hpp"
#include "pulse_csc/signal.hpp"

namespace pulse_csc {

enum class ArtifactKind { device_displacement, forearm_motion, hand_motion, poor_contact };

inline constexpr std::array<ArtifactKind, 4> all_artifact_kinds{
    ArtifactKind::device_displacement, ArtifactKind::forearm_motion, ArtifactKind::hand_motion,
    ArtifactKind::poor_contact};

inline std::string_view to_string(ArtifactKind k) {
  switch (k) {
    case ArtifactKind::device_displacement: return "device_displacement";
    case ArtifactKind::forearm_motion: return "forearm_motion";
    case ArtifactKind::hand_motion: return "hand_motion";
    case ArtifactKind::poor_contact: return "poor_contact";
  }
  return "unknown";
}

inline ArtifactKind artifact_kind_from_string(std::string_view s) {
  for (auto k : all_artifact_kinds)
    if (to_string(k) == s) return k;
  throw Error(ErrorCode::schema, "unknown artifact kind '" + std::string(s) + "'");
}

struct ArtifactSpec {
  ArtifactKind kind = ArtifactKind::device_displacement;
  double amplitude = 0.0;       // relative to the clean signal's RMS
  double spectral_slope = 0.0;  // dB per Hz
  double duration_s = 0.0;
  double start_s = 0.0;

  friend bool operator==(const ArtifactSpec&, const ArtifactSpec&) = default;
};

/// Paired clean/noisy segment with its subject and corruption metadata.
struct SegmentRecord {
  std::string subject_id;
  Signal clean;
  Signal noisy;
  std::optional<ArtifactSpec> artifact;
  std::optional<double> ground_truth_hr;
  std::optional<std::string> activity;

  friend bool operator==(const SegmentRecord&, const SegmentRecord&) = default;
};

}  // namespace pulse_csc

#endif  // PULSE_CSC_RECORDS_HPP
