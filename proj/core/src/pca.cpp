#include "tgnn/pca.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "tgnn/error.hpp"

namespace tgnn {

PcaModel pca_fit(const std::vector<double>& rows, std::size_t n, std::size_t d,
                 std::size_t out_dim) {
  if (n < 2) throw Error("pca", "need at least 2 samples");
  if (rows.size() != n * d) throw Error("pca", "matrix size does not match n x d");
  if (out_dim == 0 || out_dim > std::min(n, d)) {
    throw Error("pca", "output dimension exceeds rank budget min(n, d)");
  }
  for (double v : rows) {
    if (!std::isfinite(v)) throw Error("pca", "non-finite input value");
  }

  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const RowMat> x(rows.data(), static_cast<Eigen::Index>(n),
                             static_cast<Eigen::Index>(d));
  Eigen::VectorXd mean = x.colwise().mean();
  RowMat centered = x.rowwise() - mean.transpose();

  Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
  const Eigen::VectorXd& sigma = svd.singularValues();
  const Eigen::MatrixXd& v = svd.matrixV();  // d x min(n,d)

  const double denom = static_cast<double>(n - 1);
  double total_variance = centered.squaredNorm() / denom;

  PcaModel model;
  model.raw_dim = d;
  model.out_dim = out_dim;
  model.mean.assign(mean.data(), mean.data() + d);
  model.components.resize(out_dim * d);
  model.explained_variance.resize(out_dim);
  model.explained_variance_ratio.resize(out_dim);
  for (std::size_t i = 0; i < out_dim; ++i) {
    Eigen::VectorXd comp = v.col(static_cast<Eigen::Index>(i));
    // Deterministic sign: largest-magnitude entry positive.
    Eigen::Index arg = 0;
    comp.cwiseAbs().maxCoeff(&arg);
    if (comp(arg) < 0.0) comp = -comp;
    for (std::size_t j = 0; j < d; ++j) model.components[i * d + j] = comp(static_cast<Eigen::Index>(j));
    const double lambda = sigma(static_cast<Eigen::Index>(i)) * sigma(static_cast<Eigen::Index>(i)) / denom;
    model.explained_variance[i] = lambda;
    model.explained_variance_ratio[i] = total_variance > 0.0 ? lambda / total_variance : 0.0;
  }
  return model;
}

std::vector<double> pca_transform(const PcaModel& model, std::span<const double> x) {
  if (x.size() != model.raw_dim) throw Error("pca", "input dimension mismatch");
  std::vector<double> out(model.out_dim, 0.0);
  for (std::size_t i = 0; i < model.out_dim; ++i) {
    const double* comp = model.components.data() + i * model.raw_dim;
    double acc = 0.0;
    for (std::size_t j = 0; j < model.raw_dim; ++j) acc += comp[j] * (x[j] - model.mean[j]);
    out[i] = acc;
  }
  return out;
}

double pca_reconstruction_error(const PcaModel& model, const std::vector<double>& rows,
                                std::size_t n, std::size_t d) {
  if (d != model.raw_dim || rows.size() != n * d) throw Error("pca", "matrix size mismatch");
  double sse = 0.0;
  std::vector<double> centered(d), recon(d);
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = rows.data() + r * d;
    for (std::size_t j = 0; j < d; ++j) {
      centered[j] = row[j] - model.mean[j];
      recon[j] = 0.0;
    }
    for (std::size_t i = 0; i < model.out_dim; ++i) {
      const double* comp = model.components.data() + i * d;
      double coord = 0.0;
      for (std::size_t j = 0; j < d; ++j) coord += comp[j] * centered[j];
      for (std::size_t j = 0; j < d; ++j) recon[j] += coord * comp[j];
    }
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = centered[j] - recon[j];
      sse += diff * diff;
    }
  }
  return sse / static_cast<double>(n - 1);
}

void save_pca_model(const std::string& path, const PcaModel& model) {
  std::ofstream out(path);
  if (!out) throw Error("io", "cannot open '" + path + "' for writing");
  char buf[64];
  auto emit = [&](const std::vector<double>& v) {
    for (std::size_t i = 0; i < v.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.17g", v[i]);
      if (i) out << ' ';
      out << buf;
    }
    out << '\n';
  };
  out << "tgnn-pca v1\n";
  out << "raw_dim " << model.raw_dim << '\n';
  out << "out_dim " << model.out_dim << '\n';
  out << "mean\n";
  emit(model.mean);
  out << "components\n";
  for (std::size_t i = 0; i < model.out_dim; ++i) {
    emit({model.components.begin() + i * model.raw_dim,
          model.components.begin() + (i + 1) * model.raw_dim});
  }
  out << "explained_variance\n";
  emit(model.explained_variance);
  out << "explained_variance_ratio\n";
  emit(model.explained_variance_ratio);
  if (!out) throw Error("io", "failed writing '" + path + "'");
}

PcaModel load_pca_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("io", "cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || line != "tgnn-pca v1") {
    throw Error("checkpoint", path + ": not a tgnn-pca v1 file");
  }
  PcaModel model;
  std::string key;
  if (!(in >> key >> model.raw_dim) || key != "raw_dim") throw Error("checkpoint", "bad raw_dim");
  if (!(in >> key >> model.out_dim) || key != "out_dim") throw Error("checkpoint", "bad out_dim");
  auto read_vec = [&](const std::string& expect, std::vector<double>& v, std::size_t count) {
    if (!(in >> key) || key != expect) throw Error("checkpoint", "expected section " + expect);
    v.resize(count);
    for (auto& x : v) {
      if (!(in >> x)) throw Error("checkpoint", "truncated section " + expect);
    }
  };
  read_vec("mean", model.mean, model.raw_dim);
  if (!(in >> key) || key != "components") throw Error("checkpoint", "expected components");
  model.components.resize(model.out_dim * model.raw_dim);
  for (auto& x : model.components) {
    if (!(in >> x)) throw Error("checkpoint", "truncated components");
  }
  read_vec("explained_variance", model.explained_variance, model.out_dim);
  read_vec("explained_variance_ratio", model.explained_variance_ratio, model.out_dim);
  return model;
}

}  // namespace tgnn
