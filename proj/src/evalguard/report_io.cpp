#include "mtb/evalguard/report_io.hpp"

#include <fmt/format.h>

#include "mtb/errors.hpp"

namespace mtb {

using nlohmann::json;

json report_to_json(const MetricsReport& report) {
  json triggers = json::array();
  for (const auto& t : report.per_trigger) {
    triggers.push_back({{"trigger", t.trigger_index},
                        {"concept", t.concept_label},
                        {"asr", t.asr},
                        {"tcr", t.tcr},
                        {"failed", t.failed},
                        {"counts", {{"success", t.counts.success}, {"confusion", t.counts.confusion},
                                    {"failed", t.counts.failed}}}});
  }
  return {{"per_trigger", triggers},
          {"mean_asr", report.mean_asr},
          {"mean_tcr", report.mean_tcr},
          {"mean_failed", report.mean_failed},
          {"clean_accuracy", report.clean_accuracy},
          {"clean_correct", report.clean_correct},
          {"clean_total", report.clean_total},
          {"transform", report.transform},
          {"config_hash", report.config_hash}};
}

MetricsReport report_from_json(const json& j) {
  try {
    MetricsReport r;
    for (const auto& t : j.at("per_trigger")) {
      TriggerMetrics m;
      m.trigger_index = t.at("trigger").get<std::size_t>();
      m.concept_label = t.at("concept").get<std::string>();
      m.asr = t.at("asr").get<double>();
      m.tcr = t.at("tcr").get<double>();
      m.failed = t.at("failed").get<double>();
      m.counts.success = t.at("counts").at("success").get<std::size_t>();
      m.counts.confusion = t.at("counts").at("confusion").get<std::size_t>();
      m.counts.failed = t.at("counts").at("failed").get<std::size_t>();
      r.per_trigger.push_back(std::move(m));
    }
    r.mean_asr = j.at("mean_asr").get<double>();
    r.mean_tcr = j.at("mean_tcr").get<double>();
    r.mean_failed = j.at("mean_failed").get<double>();
    r.clean_accuracy = j.at("clean_accuracy").get<double>();
    r.clean_correct = j.at("clean_correct").get<std::size_t>();
    r.clean_total = j.at("clean_total").get<std::size_t>();
    r.transform = j.at("transform").get<std::string>();
    r.config_hash = j.at("config_hash").get<std::string>();
    return r;
  } catch (const json::exception& e) {
    throw IoError(fmt::format("malformed metrics report: {}", e.what()));
  }
}

std::string metrics_csv_rows(const MetricsReport& report, const ReportContext& ctx) {
  std::string out;
  const std::string prefix = fmt::format("{},{},{},{},{}", ctx.method, ctx.n, ctx.m, ctx.epsilon, report.transform);
  for (const auto& t : report.per_trigger) {
    out += fmt::format("{},{},{},{},{},{}\n", prefix, t.trigger_index, t.asr, t.tcr, t.failed, report.clean_accuracy);
  }
  out += fmt::format("{},mean,{},{},{},{}\n", prefix, report.mean_asr, report.mean_tcr, report.mean_failed,
                     report.clean_accuracy);
  return out;
}

}  // namespace mtb
