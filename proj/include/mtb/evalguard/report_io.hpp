#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "mtb/evalguard/metrics.hpp"

namespace mtb {

struct ReportContext {
  std::string method;
  std::size_t n = 0;
  std::size_t m = 0;
  double epsilon = 0.0;
};

nlohmann::json report_to_json(const MetricsReport& report);
MetricsReport report_from_json(const nlohmann::json& json);

inline constexpr const char* kMetricsCsvHeader = "method,N,M,epsilon,transform,trigger,asr,tcr,failed,clean_acc";

// One row per trigger and a final "mean" row, each ending in a newline.
std::string metrics_csv_rows(const MetricsReport& report, const ReportContext& context);

// 2D PCA of clean (B x d) and triggered (N x B x d) embeddings as CSV with
// columns group,trigger,pc1,pc2 (trigger 0 marks clean rows).
std::string plotdata_csv(const Tensor& clean_embeds, const Tensor& triggered_embeds);

}  // namespace mtb
