#include "hmatgp/kernel.hpp"

#include <cmath>

namespace hmatgp {

NodeSet::NodeSet(Matrix coords) : coords_(std::move(coords)) {
  if (coords_.rows() < 1 || coords_.cols() < 1) throw InvalidArgument("NodeSet needs d >= 1 and n >= 1");
  if (!coords_.allFinite()) throw InvalidArgument("NodeSet coordinates must be finite");
}

NodeSet NodeSet::select(IndexSpan indices) const {
  Matrix out(dim(), static_cast<Index>(indices.size()));
  for (std::size_t j = 0; j < indices.size(); ++j) {
    if (indices[j] < 0 || indices[j] >= size()) throw InvalidArgument("node index out of range");
    out.col(static_cast<Index>(j)) = coords_.col(indices[j]);
  }
  return NodeSet(std::move(out));
}

KernelSpec KernelSpec::isotropic(KernelFamily family, double ell, double noise) {
  KernelSpec s;
  s.family = family;
  s.hyper.lengthscales = Vector::Constant(1, ell);
  s.hyper.noise_variance = noise;
  return s;
}

KernelSpec KernelSpec::ard(const Vector& ells, double noise) {
  KernelSpec s;
  s.family = KernelFamily::ard_squared_exponential;
  s.hyper.lengthscales = ells;
  s.hyper.noise_variance = noise;
  return s;
}

Index KernelSpec::parameter_count(Index d) const {
  return family == KernelFamily::ard_squared_exponential ? d : 1;
}

void KernelSpec::validate(Index d) const {
  if (hyper.lengthscales.size() != parameter_count(d))
    throw InvalidArgument("lengthscale count does not match kernel family");
  if (!(hyper.lengthscales.array() > 0.0).all() || !hyper.lengthscales.allFinite())
    throw InvalidArgument("lengthscales must be positive");
  if (!(hyper.noise_variance >= 0.0)) throw InvalidArgument("noise variance must be nonnegative");
}

KernelSpec KernelSpec::with_lengthscales(const Vector& ells) const {
  KernelSpec s = *this;
  s.hyper.lengthscales = ells;
  return s;
}

KernelFamily parse_family(const std::string& name) {
  if (name == "se" || name == "squared_exponential") return KernelFamily::squared_exponential;
  if (name == "exp" || name == "exponential") return KernelFamily::exponential;
  if (name == "ard" || name == "ard_squared_exponential") return KernelFamily::ard_squared_exponential;
  if (name == "l1" || name == "l1_distance") return KernelFamily::l1_distance;
  throw InvalidArgument("unknown kernel family: " + name);
}

std::string family_name(KernelFamily family) {
  switch (family) {
    case KernelFamily::squared_exponential: return "se";
    case KernelFamily::exponential: return "exp";
    case KernelFamily::ard_squared_exponential: return "ard";
    case KernelFamily::l1_distance: return "l1";
  }
  return "?";
}

namespace {

double ell_for(const KernelSpec& spec, Index p) {
  return spec.hyper.lengthscales.size() == 1 ? spec.hyper.lengthscales[0] : spec.hyper.lengthscales[p];
}

// Quadratic form f for the exp family, or the scaled l1 distance for l1_distance.
double scaled_distance(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b,
                       const KernelSpec& spec) {
  double acc = 0.0;
  for (Index p = 0; p < a.size(); ++p) {
    const double t = (a[p] - b[p]) / ell_for(spec, p);
    acc += spec.family == KernelFamily::l1_distance ? std::abs(t) : t * t;
  }
  return acc;
}

double from_distance(double f, KernelFamily family) {
  switch (family) {
    case KernelFamily::squared_exponential:
    case KernelFamily::ard_squared_exponential: return std::exp(-0.5 * f);
    case KernelFamily::exponential: return std::exp(-std::sqrt(f));
    case KernelFamily::l1_distance: return std::exp(-f);
  }
  return 0.0;
}

void check_indices(const NodeSet& nodes, IndexSpan idx) {
  for (Index i : idx)
    if (i < 0 || i >= nodes.size()) throw InvalidArgument("node index out of range");
}

// Coordinates of the selected points divided by their lengthscale.
Matrix gather_scaled(const Matrix& coords, IndexSpan idx, const KernelSpec& spec) {
  Matrix out(coords.rows(), static_cast<Index>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j)
    for (Index p = 0; p < coords.rows(); ++p)
      out(p, static_cast<Index>(j)) = coords(p, idx[j]) / ell_for(spec, p);
  return out;
}

Matrix scale_all(const Matrix& coords, const KernelSpec& spec) {
  Matrix out = coords;
  for (Index p = 0; p < coords.rows(); ++p) out.row(p) /= ell_for(spec, p);
  return out;
}

Matrix block_from_scaled(const Matrix& a, const Matrix& b, KernelFamily family) {
  const Index m = a.cols(), n = b.cols(), d = a.rows();
  Matrix out(m, n);
  const bool l1 = family == KernelFamily::l1_distance;
#pragma omp parallel for schedule(static) if (m * n > 20000)
  for (Index j = 0; j < n; ++j) {
    for (Index i = 0; i < m; ++i) {
      double acc = 0.0;
      for (Index p = 0; p < d; ++p) {
        const double t = a(p, i) - b(p, j);
        acc += l1 ? std::abs(t) : t * t;
      }
      out(i, j) = from_distance(acc, family);
    }
  }
  return out;
}

}  // namespace

double kernel_value(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b,
                    const KernelSpec& spec) {
  return from_distance(scaled_distance(a, b, spec), spec.family);
}

Matrix eval_block(const NodeSet& nodes, IndexSpan rows, IndexSpan cols, const KernelSpec& spec) {
  spec.validate(nodes.dim());
  check_indices(nodes, rows);
  check_indices(nodes, cols);
  return block_from_scaled(gather_scaled(nodes.coords(), rows, spec),
                           gather_scaled(nodes.coords(), cols, spec), spec.family);
}

Matrix eval_block_serial(const NodeSet& nodes, IndexSpan rows, IndexSpan cols,
                         const KernelSpec& spec) {
  spec.validate(nodes.dim());
  check_indices(nodes, rows);
  check_indices(nodes, cols);
  Matrix out(static_cast<Index>(rows.size()), static_cast<Index>(cols.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < cols.size(); ++j)
      out(static_cast<Index>(i), static_cast<Index>(j)) =
          kernel_value(nodes.point(rows[i]), nodes.point(cols[j]), spec);
  return out;
}

Matrix eval_cross(const Matrix& a, const Matrix& b, const KernelSpec& spec) {
  if (a.rows() != b.rows()) throw InvalidArgument("point dimensions differ");
  spec.validate(a.rows());
  return block_from_scaled(scale_all(a, spec), scale_all(b, spec), spec.family);
}

std::vector<Matrix> eval_block_derivative(const NodeSet& nodes, IndexSpan rows, IndexSpan cols,
                                          const KernelSpec& spec) {
  spec.validate(nodes.dim());
  check_indices(nodes, rows);
  check_indices(nodes, cols);
  const Matrix a = gather_scaled(nodes.coords(), rows, spec);
  const Matrix b = gather_scaled(nodes.coords(), cols, spec);
  const Index m = a.cols(), n = b.cols(), d = a.rows();
  const Index np = spec.parameter_count(d);
  const Vector& ell = spec.hyper.lengthscales;
  std::vector<Matrix> out(static_cast<std::size_t>(np), Matrix(m, n));
#pragma omp parallel for schedule(static) if (m * n > 20000)
  for (Index j = 0; j < n; ++j) {
    for (Index i = 0; i < m; ++i) {
      double acc = 0.0;
      for (Index p = 0; p < d; ++p) {
        const double t = a(p, i) - b(p, j);
        acc += spec.family == KernelFamily::l1_distance ? std::abs(t) : t * t;
      }
      const double k = from_distance(acc, spec.family);
      switch (spec.family) {
        case KernelFamily::squared_exponential: out[0](i, j) = k * acc / ell[0]; break;
        // k * sqrt(f) / ell vanishes at f = 0, matching the defined limit.
        case KernelFamily::exponential: out[0](i, j) = k * std::sqrt(acc) / ell[0]; break;
        case KernelFamily::l1_distance: out[0](i, j) = k * acc / ell[0]; break;
        case KernelFamily::ard_squared_exponential:
          for (Index p = 0; p < d; ++p) {
            const double t = a(p, i) - b(p, j);
            out[static_cast<std::size_t>(p)](i, j) = k * t * t / ell[p];
          }
          break;
      }
    }
  }
  return out;
}

}  // namespace hmatgp
