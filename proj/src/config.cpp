#include "sevis/config.hpp"

#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace sevis {

namespace {

using nlohmann::json;

EstimatorMode mode_from_string(const std::string& s) {
  if (s == "vio") return EstimatorMode::kVio;
  if (s == "full_slam") return EstimatorMode::kFullSlam;
  if (s == "sevis") return EstimatorMode::kSevis;
  throw std::invalid_argument("unknown estimator mode: " + s);
}

void parse_sim(const json& j, SimConfig& sim) {
  sim.imu_rate_hz = j.value("imu_rate_hz", sim.imu_rate_hz);
  sim.cam_rate_hz = j.value("cam_rate_hz", sim.cam_rate_hz);
  sim.duration_s = j.value("duration_s", sim.duration_s);
  sim.loop_period_s = j.value("loop_period_s", sim.loop_period_s);
  sim.circle_radius_m = j.value("circle_radius_m", sim.circle_radius_m);
  sim.circle_height_m = j.value("circle_height_m", sim.circle_height_m);
  sim.cylinder_radius_m = j.value("cylinder_radius_m", sim.cylinder_radius_m);
  sim.cylinder_height_m = j.value("cylinder_height_m", sim.cylinder_height_m);
  sim.landmark_count = j.value("landmark_count", sim.landmark_count);
  sim.fov_deg = j.value("fov_deg", sim.fov_deg);
  sim.bearing_sigma_deg = j.value("bearing_sigma_deg", sim.bearing_sigma_deg);
  sim.depth_min_m = j.value("depth_min_m", sim.depth_min_m);
  sim.depth_max_m = j.value("depth_max_m", sim.depth_max_m);
  sim.gyro_arw_deg_per_sqrt_hr = j.value("gyro_arw_deg_per_sqrt_hr", sim.gyro_arw_deg_per_sqrt_hr);
  sim.gyro_rrw_deg_per_s_per_sqrt_hr =
      j.value("gyro_rrw_deg_per_s_per_sqrt_hr", sim.gyro_rrw_deg_per_s_per_sqrt_hr);
  sim.accel_vrw_m_per_s_per_sqrt_hr =
      j.value("accel_vrw_m_per_s_per_sqrt_hr", sim.accel_vrw_m_per_s_per_sqrt_hr);
  sim.accel_arw_milli_g_per_sqrt_hr =
      j.value("accel_arw_milli_g_per_sqrt_hr", sim.accel_arw_milli_g_per_sqrt_hr);
  sim.noise_scale = j.value("noise_scale", sim.noise_scale);
}

EstimatorConfig parse_estimator(const json& j) {
  EstimatorConfig est = EstimatorConfig::preset(mode_from_string(j.value("mode", "sevis")));
  est.max_clones = j.value("max_clones", est.max_clones);
  est.max_slam_features = j.value("max_slam_features", est.max_slam_features);
  est.max_map_features = j.value("max_map_features", est.max_map_features);
  est.max_update_rows = j.value("max_update_rows", est.max_update_rows);
  est.recall = j.value("recall", est.recall);
  est.outlier_rate = j.value("outlier_rate", est.outlier_rate);
  est.mahalanobis_gate = j.value("mahalanobis_gate", est.mahalanobis_gate);
  est.init_att_sigma_deg = j.value("init_att_sigma_deg", est.init_att_sigma_deg);
  est.init_vel_sigma = j.value("init_vel_sigma", est.init_vel_sigma);
  est.init_pos_sigma = j.value("init_pos_sigma", est.init_pos_sigma);
  est.psd_check_period = j.value("psd_check_period", est.psd_check_period);
  return est;
}

json sim_to_json(const SimConfig& sim) {
  return json{{"imu_rate_hz", sim.imu_rate_hz},
              {"cam_rate_hz", sim.cam_rate_hz},
              {"duration_s", sim.duration_s},
              {"loop_period_s", sim.loop_period_s},
              {"circle_radius_m", sim.circle_radius_m},
              {"circle_height_m", sim.circle_height_m},
              {"cylinder_radius_m", sim.cylinder_radius_m},
              {"cylinder_height_m", sim.cylinder_height_m},
              {"landmark_count", sim.landmark_count},
              {"fov_deg", sim.fov_deg},
              {"bearing_sigma_deg", sim.bearing_sigma_deg},
              {"depth_min_m", sim.depth_min_m},
              {"depth_max_m", sim.depth_max_m},
              {"gyro_arw_deg_per_sqrt_hr", sim.gyro_arw_deg_per_sqrt_hr},
              {"gyro_rrw_deg_per_s_per_sqrt_hr", sim.gyro_rrw_deg_per_s_per_sqrt_hr},
              {"accel_vrw_m_per_s_per_sqrt_hr", sim.accel_vrw_m_per_s_per_sqrt_hr},
              {"accel_arw_milli_g_per_sqrt_hr", sim.accel_arw_milli_g_per_sqrt_hr},
              {"noise_scale", sim.noise_scale}};
}

json estimator_to_json(const EstimatorConfig& est) {
  return json{{"mode", est.name()},
              {"max_clones", est.max_clones},
              {"max_slam_features", est.max_slam_features},
              {"max_map_features", est.max_map_features},
              {"max_update_rows", est.max_update_rows},
              {"recall", est.recall},
              {"outlier_rate", est.outlier_rate},
              {"mahalanobis_gate", est.mahalanobis_gate},
              {"init_att_sigma_deg", est.init_att_sigma_deg},
              {"init_vel_sigma", est.init_vel_sigma},
              {"init_pos_sigma", est.init_pos_sigma},
              {"psd_check_period", est.psd_check_period}};
}

}  // namespace

HarnessConfig HarnessConfig::defaults() {
  HarnessConfig cfg;
  cfg.estimators = {EstimatorConfig::preset(EstimatorMode::kVio),
                    EstimatorConfig::preset(EstimatorMode::kFullSlam),
                    EstimatorConfig::preset(EstimatorMode::kSevis)};
  return cfg;
}

HarnessConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  json j;
  in >> j;

  HarnessConfig cfg = HarnessConfig::defaults();
  if (j.contains("sim")) parse_sim(j["sim"], cfg.sim);
  if (j.contains("estimators")) {
    cfg.estimators.clear();
    for (const json& je : j["estimators"]) cfg.estimators.push_back(parse_estimator(je));
  }
  cfg.runs = j.value("runs", cfg.runs);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.workers = j.value("workers", cfg.workers);
  cfg.out_dir = j.value("out_dir", cfg.out_dir);
  return cfg;
}

std::string config_to_json(const HarnessConfig& cfg) {
  json j;
  j["sim"] = sim_to_json(cfg.sim);
  j["estimators"] = json::array();
  for (const EstimatorConfig& est : cfg.estimators) j["estimators"].push_back(estimator_to_json(est));
  j["runs"] = cfg.runs;
  j["seed"] = cfg.seed;
  j["workers"] = cfg.workers;
  j["out_dir"] = cfg.out_dir;
  return j.dump(2);
}

}  // namespace sevis
