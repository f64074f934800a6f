#include "geoshield/geo_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "geoshield/errors.hpp"

namespace geoshield {

namespace {

double radians(double deg) { return deg * std::numbers::pi / 180.0; }

}  // namespace

GeoCoordinate GeoCoordinate::make(double lat_deg, double lon_deg) {
  if (!std::isfinite(lat_deg) || lat_deg < -90.0 || lat_deg > 90.0) {
    std::ostringstream msg;
    msg << "GeoCoordinate.lat out of range [-90, 90]: " << lat_deg;
    throw DomainError(msg.str());
  }
  if (!std::isfinite(lon_deg) || lon_deg < -180.0 || lon_deg > 180.0) {
    std::ostringstream msg;
    msg << "GeoCoordinate.lon out of range [-180, 180]: " << lon_deg;
    throw DomainError(msg.str());
  }
  if (lon_deg == 180.0) lon_deg = -180.0;
  return GeoCoordinate(lat_deg, lon_deg);
}

double haversine_distance(const GeoCoordinate& a, const GeoCoordinate& b) {
  const double phi1 = radians(a.lat());
  const double phi2 = radians(b.lat());
  const double dphi = phi2 - phi1;
  // Wrap so pairs straddling the date line take the short way round.
  const double dlambda = radians(std::remainder(b.lon() - a.lon(), 360.0));

  const double s_phi = std::sin(dphi / 2.0);
  const double s_lambda = std::sin(dlambda / 2.0);
  double hav = s_phi * s_phi + std::cos(phi1) * std::cos(phi2) * s_lambda * s_lambda;
  hav = std::clamp(hav, 0.0, 1.0);
  // atan2 form yields the half central angle; the full angle is twice that.
  return 2.0 * kEarthRadiusKm * std::atan2(std::sqrt(hav), std::sqrt(1.0 - hav));
}

double protection_objective(const GeoCoordinate& predicted, const GeoCoordinate& truth) {
  return haversine_distance(predicted, truth);
}

namespace {

void check_thresholds(std::span<const double> thresholds_km) {
  if (thresholds_km.empty()) throw DomainError("bucket thresholds must be non-empty");
  for (std::size_t i = 0; i < thresholds_km.size(); ++i) {
    if (!(thresholds_km[i] > 0.0)) throw DomainError("bucket thresholds must be positive");
    if (i > 0 && !(thresholds_km[i] > thresholds_km[i - 1]))
      throw DomainError("bucket thresholds must be strictly increasing");
  }
}

}  // namespace

std::vector<double> bucket_accuracy(std::span<const double> distances_km,
                                    std::span<const double> thresholds_km) {
  check_thresholds(thresholds_km);
  if (distances_km.empty())
    throw EmptyReportError("bucket_accuracy: no distances to aggregate");
  std::vector<double> out;
  out.reserve(thresholds_km.size());
  for (double t : thresholds_km) {
    const auto hits = std::count_if(distances_km.begin(), distances_km.end(),
                                    [t](double d) { return d <= t; });
    out.push_back(static_cast<double>(hits) / static_cast<double>(distances_km.size()));
  }
  return out;
}

DistanceReport make_distance_report(std::vector<DistanceEntry> entries,
                                    std::span<const double> thresholds_km) {
  check_thresholds(thresholds_km);
  if (entries.empty()) throw EmptyReportError("distance report: no entries");

  DistanceReport report;
  report.thresholds_km.assign(thresholds_km.begin(), thresholds_km.end());
  report.n = entries.size();

  std::vector<double> answered;
  for (const auto& e : entries) {
    if (e.distance_km) {
      if (*e.distance_km < 0.0 || !std::isfinite(*e.distance_km))
        throw DomainError("distance report: invalid distance for " + e.image_id);
      answered.push_back(*e.distance_km);
    } else {
      ++report.n_refused;
    }
  }

  report.accuracy.assign(thresholds_km.size(), 0.0);
  if (!answered.empty()) {
    for (std::size_t k = 0; k < thresholds_km.size(); ++k) {
      const double t = thresholds_km[k];
      const auto hits =
          std::count_if(answered.begin(), answered.end(), [t](double d) { return d <= t; });
      report.accuracy[k] = static_cast<double>(hits) / static_cast<double>(report.n);
    }
    double sum = 0.0;
    for (double d : answered) sum += d;
    report.avg_distance_km = sum / static_cast<double>(answered.size());
  }
  report.entries = std::move(entries);
  return report;
}

nlohmann::json to_json(const DistanceReport& report) {
  nlohmann::json j;
  j["thresholds_km"] = report.thresholds_km;
  j["accuracy"] = report.accuracy;
  j["avg_distance_km"] =
      report.avg_distance_km ? nlohmann::json(*report.avg_distance_km) : nlohmann::json(nullptr);
  j["n"] = report.n;
  j["n_refused"] = report.n_refused;
  auto per_image = nlohmann::json::array();
  for (const auto& e : report.entries) {
    per_image.push_back({{"image_id", e.image_id},
                         {"distance_km", e.distance_km ? nlohmann::json(*e.distance_km)
                                                       : nlohmann::json(nullptr)}});
  }
  j["per_image"] = std::move(per_image);
  return j;
}

DistanceReport distance_report_from_json(const nlohmann::json& j) {
  DistanceReport r;
  r.thresholds_km = j.at("thresholds_km").get<std::vector<double>>();
  r.accuracy = j.at("accuracy").get<std::vector<double>>();
  if (!j.at("avg_distance_km").is_null()) r.avg_distance_km = j["avg_distance_km"].get<double>();
  r.n = j.at("n").get<std::size_t>();
  r.n_refused = j.value("n_refused", std::size_t{0});
  if (j.contains("per_image")) {
    for (const auto& e : j["per_image"]) {
      DistanceEntry entry{e.at("image_id").get<std::string>(), std::nullopt};
      if (!e.at("distance_km").is_null()) entry.distance_km = e["distance_km"].get<double>();
      r.entries.push_back(std::move(entry));
    }
  }
  return r;
}

}  // namespace geoshield
