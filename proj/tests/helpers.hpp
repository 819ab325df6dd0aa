#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <random>
#include <string>

#include "geoadapt/model.hpp"
#include "geoadapt/tensor.hpp"
#include "oracles.hpp"

namespace testing {

inline geoadapt::Tensor to_tensor(const oracle::Mat& m) {
  std::vector<double> v;
  for (const auto& row : m) v.insert(v.end(), row.begin(), row.end());
  return geoadapt::Tensor::matrix(m.size(), m.empty() ? 0 : m[0].size(), std::move(v));
}

inline oracle::Mat to_mat(const geoadapt::Tensor& t) {
  oracle::Mat m = oracle::zeros(t.rows(), t.cols());
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t c = 0; c < t.cols(); ++c) m[r][c] = t.at(r, c);
  return m;
}

inline Eigen::MatrixXd to_eigen(const oracle::Mat& m) {
  Eigen::MatrixXd e(static_cast<Eigen::Index>(m.size()), static_cast<Eigen::Index>(m[0].size()));
  for (std::size_t r = 0; r < m.size(); ++r)
    for (std::size_t c = 0; c < m[0].size(); ++c) e(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = m[r][c];
  return e;
}

inline std::vector<oracle::Layer> layers_of(const std::vector<geoadapt::DenseLayer>& stack) {
  std::vector<oracle::Layer> out;
  for (const auto& l : stack) {
    const auto bias = to_mat(l.bias);
    out.push_back({to_mat(l.weight), bias[0]});
  }
  return out;
}

/// Small model spec used across unit tests.
inline geoadapt::ModelSpec small_spec(std::size_t input_dim = 3, std::size_t classes = 2) {
  geoadapt::ModelSpec s;
  s.input_dim = input_dim;
  s.encoder_hidden = {5};
  s.latent_dim = 4;
  s.semantic_dim = 2;
  s.decoder_hidden = {5};
  s.num_classes = classes;
  return s;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("geoadapt-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing
