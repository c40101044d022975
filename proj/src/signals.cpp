#include "pgff/signals.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <system_error>
#include <vector>

namespace pgff {

Trajectory differentiate_reference(const Eigen::VectorXd& theta_d, double ts) {
  const Eigen::Index n = theta_d.size();
  if (n < 3) {
    throw std::invalid_argument(
        "differentiate_reference: need at least 3 samples, got " +
        std::to_string(n));
  }
  if (!(ts > 0.0)) {
    throw std::invalid_argument("differentiate_reference: ts must be > 0");
  }

  Trajectory traj;
  traj.ts = ts;
  traj.theta_d = theta_d;
  traj.theta_d_dot.resize(n);
  traj.theta_d_ddot.resize(n);

  const double inv_2h = 1.0 / (2.0 * ts);
  const double inv_h2 = 1.0 / (ts * ts);
  for (Eigen::Index k = 1; k + 1 < n; ++k) {
    traj.theta_d_dot[k] = (theta_d[k + 1] - theta_d[k - 1]) * inv_2h;
    traj.theta_d_ddot[k] =
        (theta_d[k + 1] - 2.0 * theta_d[k] + theta_d[k - 1]) * inv_h2;
  }

  // Second-order one-sided stencils at the endpoints.
  traj.theta_d_dot[0] =
      (-3.0 * theta_d[0] + 4.0 * theta_d[1] - theta_d[2]) * inv_2h;
  traj.theta_d_dot[n - 1] =
      (3.0 * theta_d[n - 1] - 4.0 * theta_d[n - 2] + theta_d[n - 3]) * inv_2h;
  if (n >= 4) {
    traj.theta_d_ddot[0] = (2.0 * theta_d[0] - 5.0 * theta_d[1] +
                            4.0 * theta_d[2] - theta_d[3]) *
                           inv_h2;
    traj.theta_d_ddot[n - 1] = (2.0 * theta_d[n - 1] - 5.0 * theta_d[n - 2] +
                                4.0 * theta_d[n - 3] - theta_d[n - 4]) *
                               inv_h2;
  } else {
    // Three samples only: fall back to the (already exact on quadratics)
    // three-point stencil.
    traj.theta_d_ddot[0] =
        (theta_d[0] - 2.0 * theta_d[1] + theta_d[2]) * inv_h2;
    traj.theta_d_ddot[n - 1] = traj.theta_d_ddot[0];
  }
  return traj;
}

SplitIndices split_dataset(Eigen::Index n, double f_train, double f_val,
                           double f_test) {
  if (!(f_train > 0.0) || !(f_val > 0.0) || !(f_test > 0.0)) {
    throw std::invalid_argument("split_dataset: fractions must be positive");
  }
  if (std::abs(f_train + f_val + f_test - 1.0) > 1e-9) {
    throw std::invalid_argument("split_dataset: fractions must sum to 1");
  }
  const auto n_train = static_cast<Eigen::Index>(
      std::floor(f_train * static_cast<double>(n)));
  const auto n_val =
      static_cast<Eigen::Index>(std::floor(f_val * static_cast<double>(n)));
  const Eigen::Index n_test = n - n_train - n_val;
  if (n_train < 1 || n_val < 1 || n_test < 1) {
    throw std::invalid_argument(
        "split_dataset: n = " + std::to_string(n) +
        " too small, a block would be empty");
  }
  SplitIndices s;
  s.train = {0, n_train};
  s.validation = {n_train, n_train + n_val};
  s.test = {n_train + n_val, n};
  return s;
}

SplitIndices split_dataset(const IODataset& ds, double f_train, double f_val,
                           double f_test) {
  return split_dataset(ds.size(), f_train, f_val, f_test);
}

ErrorNorms error_norms(const Eigen::Ref<const Eigen::VectorXd>& s) {
  if (s.size() == 0) {
    throw std::invalid_argument("error_norms: empty signal");
  }
  ErrorNorms n;
  n.rms = std::sqrt(s.squaredNorm() / static_cast<double>(s.size()));
  n.ma = s.cwiseAbs().mean();
  n.inf = s.cwiseAbs().maxCoeff();
  return n;
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace {

double parse_double(std::string_view text, const std::filesystem::path& path,
                    std::size_t line_no) {
  double v = 0.0;
  const char* first = text.data();
  const char* last = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) {
    throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                             ": malformed number '" + std::string(text) + "'");
  }
  if (!std::isfinite(v)) {
    throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                             ": non-finite value '" + std::string(text) + "'");
  }
  return v;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return fields;
}

void check_finite_columns(std::initializer_list<const Eigen::VectorXd*> cols,
                          const std::filesystem::path& path) {
  for (const auto* c : cols) {
    if (c->size() > 0 && !c->allFinite()) {
      throw std::runtime_error("write csv: non-finite value in " +
                               path.string());
    }
  }
}

std::ifstream open_for_read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open " + path.string());
  }
  return in;
}

std::ofstream open_for_write(const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot write " + path.string());
  }
  return out;
}

void expect_header(const std::string& got, const std::string& want,
                   const std::filesystem::path& path) {
  if (got != want) {
    throw std::runtime_error(path.string() + ":1: expected header '" + want +
                             "', got '" + got + "'");
  }
}

std::string chomp(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

}  // namespace

void write_dataset_csv(const IODataset& ds,
                       const std::filesystem::path& path) {
  check_finite_columns({&ds.theta, &ds.u_hat}, path);
  std::ofstream out = open_for_write(path);
  out << "k,theta,u_hat\n";
  for (Eigen::Index k = 0; k < ds.size(); ++k) {
    out << k << ',' << format_double(ds.theta[k]) << ','
        << format_double(ds.u_hat[k]) << '\n';
  }
}

IODataset read_dataset_csv(const std::filesystem::path& path, double ts) {
  std::ifstream in = open_for_read(path);
  std::string line;
  if (!std::getline(in, line)) {
    throw std::runtime_error(path.string() + ": empty file, missing header");
  }
  expect_header(chomp(line), "k,theta,u_hat", path);

  std::vector<double> theta;
  std::vector<double> u_hat;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    line = chomp(line);
    if (line.empty()) continue;
    const auto fields = split_fields(line);
    if (fields.size() != 3) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                               ": expected 3 columns, got " +
                               std::to_string(fields.size()));
    }
    parse_double(fields[0], path, line_no);  // sample index, value unused
    theta.push_back(parse_double(fields[1], path, line_no));
    u_hat.push_back(parse_double(fields[2], path, line_no));
  }
  IODataset ds;
  ds.ts = ts;
  ds.theta = Eigen::Map<const Eigen::VectorXd>(theta.data(),
                                               static_cast<Eigen::Index>(theta.size()));
  ds.u_hat = Eigen::Map<const Eigen::VectorXd>(u_hat.data(),
                                               static_cast<Eigen::Index>(u_hat.size()));
  return ds;
}

void write_trajectory_csv(const Trajectory& traj,
                          const std::filesystem::path& path) {
  check_finite_columns({&traj.theta_d, &traj.theta_d_dot, &traj.theta_d_ddot},
                       path);
  std::ofstream out = open_for_write(path);
  out << "k,theta_d,theta_d_dot,theta_d_ddot\n";
  for (Eigen::Index k = 0; k < traj.size(); ++k) {
    out << k << ',' << format_double(traj.theta_d[k]) << ','
        << format_double(traj.theta_d_dot[k]) << ','
        << format_double(traj.theta_d_ddot[k]) << '\n';
  }
}

Trajectory read_trajectory_csv(const std::filesystem::path& path, double ts) {
  std::ifstream in = open_for_read(path);
  std::string line;
  if (!std::getline(in, line)) {
    throw std::runtime_error(path.string() + ": empty file, missing header");
  }
  expect_header(chomp(line), "k,theta_d,theta_d_dot,theta_d_ddot", path);

  Trajectory traj;
  traj.ts = ts;
  std::vector<double> pos, vel, acc;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    line = chomp(line);
    if (line.empty()) continue;
    const auto fields = split_fields(line);
    if (fields.size() != 4) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                               ": expected 4 columns, got " +
                               std::to_string(fields.size()));
    }
    parse_double(fields[0], path, line_no);
    pos.push_back(parse_double(fields[1], path, line_no));
    vel.push_back(parse_double(fields[2], path, line_no));
    acc.push_back(parse_double(fields[3], path, line_no));
  }
  const auto n = static_cast<Eigen::Index>(pos.size());
  traj.theta_d = Eigen::Map<const Eigen::VectorXd>(pos.data(), n);
  traj.theta_d_dot = Eigen::Map<const Eigen::VectorXd>(vel.data(), n);
  traj.theta_d_ddot = Eigen::Map<const Eigen::VectorXd>(acc.data(), n);
  return traj;
}

}  // namespace pgff
