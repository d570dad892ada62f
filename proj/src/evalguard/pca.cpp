#include <Eigen/Dense>
#include <fmt/format.h>

#include "mtb/errors.hpp"
#include "mtb/evalguard/report_io.hpp"

namespace mtb {

std::string plotdata_csv(const Tensor& clean_embeds, const Tensor& triggered_embeds) {
  if (clean_embeds.rank() != 2 || triggered_embeds.rank() != 3 ||
      clean_embeds.extent(1) != triggered_embeds.extent(2)) {
    throw ShapeError("plotdata expects B x d clean and N x B x d triggered embeddings");
  }
  const std::size_t d = clean_embeds.extent(1);
  const std::size_t n_clean = clean_embeds.extent(0);
  const std::size_t per_trigger = triggered_embeds.extent(1);
  const std::size_t rows = n_clean + triggered_embeds.extent(0) * per_trigger;

  Eigen::MatrixXd x(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(d));
  for (std::size_t r = 0; r < n_clean; ++r) {
    for (std::size_t j = 0; j < d; ++j) x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = clean_embeds[r * d + j];
  }
  for (std::size_t r = 0; r < rows - n_clean; ++r) {
    for (std::size_t j = 0; j < d; ++j) {
      x(static_cast<Eigen::Index>(n_clean + r), static_cast<Eigen::Index>(j)) = triggered_embeds[r * d + j];
    }
  }
  const Eigen::RowVectorXd mean = x.colwise().mean();
  x.rowwise() -= mean;
  const Eigen::MatrixXd cov = x.transpose() * x / static_cast<double>(rows);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  // Eigenvalues ascend; take the last two and fix each sign so its largest
  // component is positive.
  Eigen::MatrixXd basis(static_cast<Eigen::Index>(d), 2);
  for (int c = 0; c < 2; ++c) {
    Eigen::VectorXd v = solver.eigenvectors().col(static_cast<Eigen::Index>(d) - 1 - c);
    Eigen::Index at = 0;
    v.cwiseAbs().maxCoeff(&at);
    if (v(at) < 0) v = -v;
    basis.col(c) = v;
  }
  const Eigen::MatrixXd coords = x * basis;

  std::string out = "group,trigger,pc1,pc2\n";
  for (std::size_t r = 0; r < rows; ++r) {
    const bool clean = r < n_clean;
    const std::size_t trigger = clean ? 0 : (r - n_clean) / per_trigger + 1;
    out += fmt::format("{},{},{:.6f},{:.6f}\n", clean ? "clean" : "poisoned", trigger,
                       coords(static_cast<Eigen::Index>(r), 0), coords(static_cast<Eigen::Index>(r), 1));
  }
  return out;
}

}  // namespace mtb
