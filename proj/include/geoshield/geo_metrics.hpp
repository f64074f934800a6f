#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace geoshield {

/// Mean Earth radius used for every great-circle distance in this library.
inline constexpr double kEarthRadiusKm = 6371.0;

/// Street, city, region, country and continent granularities.
inline constexpr std::array<double, 5> kDefaultThresholdsKm = {1.0, 25.0, 200.0, 750.0,
                                                               2500.0};

/// Latitude/longitude in degrees. Construct through make(), which validates
/// ranges and maps longitude 180 onto -180 so lon lies in [-180, 180).
class GeoCoordinate {
 public:
  static GeoCoordinate make(double lat_deg, double lon_deg);

  double lat() const noexcept { return lat_; }
  double lon() const noexcept { return lon_; }

  friend bool operator==(const GeoCoordinate&, const GeoCoordinate&) = default;

 private:
  GeoCoordinate(double lat, double lon) : lat_(lat), lon_(lon) {}
  double lat_ = 0.0;
  double lon_ = 0.0;
};

/// Great-circle distance in km via the haversine formulation.
double haversine_distance(const GeoCoordinate& a, const GeoCoordinate& b);

/// Distance between a model prediction and ground truth; the quantity a
/// protection run tries to maximise. Same value as haversine_distance.
double protection_objective(const GeoCoordinate& predicted, const GeoCoordinate& truth);

/// Fraction of distances with d <= t for every threshold t (inclusive).
/// Thresholds must be positive and strictly increasing. An empty distance
/// list raises EmptyReportError.
std::vector<double> bucket_accuracy(std::span<const double> distances_km,
                                    std::span<const double> thresholds_km);

struct DistanceEntry {
  std::string image_id;
  std::optional<double> distance_km;  // nullopt for a refusal
};

struct DistanceReport {
  std::vector<double> thresholds_km;
  std::vector<double> accuracy;
  std::optional<double> avg_distance_km;  // nullopt when every entry is a refusal
  std::size_t n = 0;
  std::size_t n_refused = 0;
  std::vector<DistanceEntry> entries;
};

/// Aggregates per-image distances. Refusals count as misses in every bucket
/// and are excluded from the average.
DistanceReport make_distance_report(std::vector<DistanceEntry> entries,
                                    std::span<const double> thresholds_km = kDefaultThresholdsKm);

nlohmann::json to_json(const DistanceReport& report);
DistanceReport distance_report_from_json(const nlohmann::json& j);

}  // namespace geoshield
