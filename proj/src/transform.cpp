#include "histostack/transform.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace histostack {

Matrix3 identity_matrix() { return {{{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}, {0.0, 0.0, 1.0}}}; }

Matrix3 matmul(const Matrix3& a, const Matrix3& b) {
    Matrix3 r{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) r[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
    return r;
}

Point matvec(const Matrix3& m, const Point& p) {
    return {m[0][0] * p[0] + m[0][1] * p[1] + m[0][2] * p[2], m[1][0] * p[0] + m[1][1] * p[1] + m[1][2] * p[2],
            m[2][0] * p[0] + m[2][1] * p[1] + m[2][2] * p[2]};
}

double determinant(const Matrix3& m) {
    return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
           m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
}

namespace {

void check_dim(int dim) {
    if (dim != 2 && dim != 3) throw std::invalid_argument("transform dimension must be 2 or 3");
}

Point add(const Point& a, const Point& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
Point sub(const Point& a, const Point& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }

}  // namespace

Affine Affine::identity(int dim) { return Affine(dim, identity_matrix(), {}, {}); }

Affine Affine::translation(int dim, const Point& t) { return Affine(dim, identity_matrix(), t, {}); }

Affine Affine::rotation_2d(double radians, const Point& center) {
    const double c = std::cos(radians), s = std::sin(radians);
    Matrix3 m = identity_matrix();
    m[0][0] = c;
    m[0][1] = -s;
    m[1][0] = s;
    m[1][1] = c;
    return Affine(2, m, {}, {center[0], center[1], 0.0});
}

Affine::Affine(int dim, const Matrix3& linear, const Point& translation, const Point& center)
    : dim_(dim), linear_(linear), translation_(translation), center_(center) {
    check_dim(dim);
    for (const auto& row : linear_)
        for (double v : row)
            if (!std::isfinite(v)) throw std::invalid_argument("affine entries must be finite");
    for (int i = 0; i < 3; ++i)
        if (!std::isfinite(translation_[i]) || !std::isfinite(center_[i]))
            throw std::invalid_argument("affine entries must be finite");
    if (dim == 2) {
        if (linear_[2][0] != 0.0 || linear_[2][1] != 0.0 || linear_[0][2] != 0.0 || linear_[1][2] != 0.0 ||
            linear_[2][2] != 1.0 || translation_[2] != 0.0 || center_[2] != 0.0)
            throw std::invalid_argument("2D affine must not act on z");
    }
    if (histostack::determinant(linear_) == 0.0) throw std::invalid_argument("affine linear part is singular");
}

double Affine::determinant() const { return histostack::determinant(linear_); }

Point Affine::apply(const Point& p) const {
    return add(add(matvec(linear_, sub(p, center_)), center_), translation_);
}

Affine Affine::recentered(const Point& center) const {
    // L(p - c) + c + t == L(p - c') + c' + t'  =>  t' = t + L(c' - c) - (c' - c)
    const Point dc = sub(center, center_);
    const Point t = sub(add(translation_, matvec(linear_, dc)), dc);
    return Affine(dim_, linear_, t, center);
}

Affine invert_affine(const Affine& a) {
    const Matrix3& m = a.linear();
    const double det = determinant(m);
    if (std::abs(det) < 1e-12) throw std::domain_error("affine is not invertible (|det| < 1e-12)");
    Matrix3 inv{};
    inv[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) / det;
    inv[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) / det;
    inv[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) / det;
    inv[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) / det;
    inv[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / det;
    inv[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) / det;
    inv[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) / det;
    inv[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) / det;
    inv[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / det;
    if (a.dim() == 2) {
        inv[0][2] = inv[1][2] = inv[2][0] = inv[2][1] = 0.0;
        inv[2][2] = 1.0;
    }
    // y = L(p - c) + c + t  =>  p = L^-1 (y - c - t) + c, expressed about c + t.
    const Point c2 = add(a.center(), a.translation());
    const Point t2 = sub(a.center(), c2);
    return Affine(a.dim(), inv, t2, c2);
}

Affine multiply(const Affine& outer, const Affine& inner) {
    if (outer.dim() != inner.dim()) throw std::invalid_argument("cannot multiply affines of different dimension");
    const Matrix3 l = matmul(outer.linear(), inner.linear());
    const Point& cb = inner.center();
    // outer(inner(p)) = La Lb (p - cb) + cb + [La(cb + tb - ca) + ca + ta - cb]
    const Point inner_c = add(cb, inner.translation());
    const Point t = sub(add(add(matvec(outer.linear(), sub(inner_c, outer.center())), outer.center()),
                            outer.translation()),
                        cb);
    Matrix3 lm = l;
    Point tt = t;
    if (outer.dim() == 2) {
        lm[0][2] = lm[1][2] = lm[2][0] = lm[2][1] = 0.0;
        lm[2][2] = 1.0;
        tt[2] = 0.0;
    }
    return Affine(outer.dim(), lm, tt, cb);
}

// ---------------------------------------------------------------------------

DisplacementField::DisplacementField(int dim, const std::array<int, 3>& dims, const std::array<double, 3>& spacing,
                                     std::vector<std::vector<double>> components)
    : dim_(dim), dims_(dims), spacing_(spacing) {
    check_dim(dim);
    if (dim == 2 && dims_[2] != 1) throw std::invalid_argument("2D displacement field must have depth 1");
    for (int d = 0; d < 3; ++d) {
        if (dims_[d] <= 0) throw std::invalid_argument("displacement field dims must be positive");
        if (!(spacing_[d] > 0.0)) throw std::invalid_argument("displacement field spacing must be positive");
    }
    if (static_cast<int>(components.size()) != dim)
        throw std::invalid_argument("displacement field needs one component buffer per axis");
    for (const auto& c : components) {
        if (c.size() != count()) throw std::invalid_argument("displacement component size does not match grid");
        for (double v : c)
            if (!std::isfinite(v)) throw std::invalid_argument("displacement vectors must be finite");
    }
    components_ = std::make_shared<const std::vector<std::vector<double>>>(std::move(components));
}

DisplacementField DisplacementField::zero(int dim, const std::array<int, 3>& dims,
                                          const std::array<double, 3>& spacing) {
    const std::size_t n = static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
    return DisplacementField(dim, dims, spacing, std::vector<std::vector<double>>(dim, std::vector<double>(n, 0.0)));
}

template <int D>
DisplacementField DisplacementField::zero(const Geometry<D>& g) {
    if constexpr (D == 2)
        return zero(2, {g.size[0], g.size[1], 1}, {g.spacing[0], g.spacing[1], 1.0});
    else
        return zero(3, {g.size[0], g.size[1], g.size[2]}, {g.spacing[0], g.spacing[1], g.spacing[2]});
}

template <int D>
DisplacementField DisplacementField::from_components(const Geometry<D>& g,
                                                     std::array<std::vector<double>, D> components) {
    std::vector<std::vector<double>> comps;
    for (auto& c : components) comps.push_back(std::move(c));
    if constexpr (D == 2)
        return DisplacementField(2, {g.size[0], g.size[1], 1}, {g.spacing[0], g.spacing[1], 1.0}, std::move(comps));
    else
        return DisplacementField(3, {g.size[0], g.size[1], g.size[2]}, {g.spacing[0], g.spacing[1], g.spacing[2]},
                                 std::move(comps));
}

template <int D>
Geometry<D> DisplacementField::geometry() const {
    if (D != dim_) throw std::invalid_argument("field dimension mismatch");
    Geometry<D> g;
    for (int d = 0; d < D; ++d) {
        g.size[d] = dims_[d];
        g.spacing[d] = spacing_[d];
    }
    return g;
}

Point DisplacementField::displacement(const Point& p) const {
    Point u{};
    if (!components_) return u;
    if (dim_ == 2) {
        const Geometry<2> g = geometry<2>();
        const ContinuousIndex<2> ci{p[0] / spacing_[0], p[1] / spacing_[1]};
        for (int c = 0; c < 2; ++c) u[c] = sample_linear_clamped<2>((*components_)[c], g, ci);
    } else {
        const Geometry<3> g = geometry<3>();
        const ContinuousIndex<3> ci{p[0] / spacing_[0], p[1] / spacing_[1], p[2] / spacing_[2]};
        for (int c = 0; c < 3; ++c) u[c] = sample_linear_clamped<3>((*components_)[c], g, ci);
    }
    return u;
}

Point DisplacementField::vector_at(std::size_t index) const {
    Point u{};
    for (int c = 0; c < dim_; ++c) u[c] = (*components_)[c][index];
    return u;
}

Point DisplacementField::apply(const Point& p) const { return add(p, displacement(p)); }

double DisplacementField::max_magnitude() const {
    double m = 0.0;
    for (std::size_t i = 0; i < count(); ++i) {
        const Point u = vector_at(i);
        m = std::max(m, std::sqrt(u[0] * u[0] + u[1] * u[1] + u[2] * u[2]));
    }
    return m;
}

double DisplacementField::mean_magnitude() const {
    double s = 0.0;
    for (std::size_t i = 0; i < count(); ++i) {
        const Point u = vector_at(i);
        s += std::sqrt(u[0] * u[0] + u[1] * u[1] + u[2] * u[2]);
    }
    return count() ? s / static_cast<double>(count()) : 0.0;
}

double DisplacementField::rms_difference(const DisplacementField& other) const {
    if (other.dims_ != dims_ || other.dim_ != dim_) throw std::invalid_argument("fields live on different grids");
    double s = 0.0;
    for (std::size_t i = 0; i < count(); ++i) {
        const Point a = vector_at(i), b = other.vector_at(i);
        for (int c = 0; c < 3; ++c) s += (a[c] - b[c]) * (a[c] - b[c]);
    }
    return count() ? std::sqrt(s / static_cast<double>(count())) : 0.0;
}

bool DisplacementField::operator==(const DisplacementField& other) const {
    if (dim_ != other.dim_ || dims_ != other.dims_ || spacing_ != other.spacing_) return false;
    if (components_ == other.components_) return true;
    if (!components_ || !other.components_) return false;
    return *components_ == *other.components_;
}

// ---------------------------------------------------------------------------

int dim_of(const Transform& t) {
    return std::visit([](const auto& e) { return e.dim(); }, t);
}

TransformChain::TransformChain(int dim) : dim_(dim) { check_dim(dim); }

TransformChain::TransformChain(const Affine& affine) : dim_(affine.dim()) { elements_.emplace_back(affine); }

TransformChain::TransformChain(const DisplacementField& field) : dim_(field.dim()) { elements_.emplace_back(field); }

void TransformChain::append(const Transform& t) {
    if (dim_of(t) != dim_)
        throw std::invalid_argument("cannot append a " + std::to_string(dim_of(t)) + "D transform to a " +
                                    std::to_string(dim_) + "D chain");
    if (!elements_.empty() && std::holds_alternative<Affine>(elements_.back()) && std::holds_alternative<Affine>(t)) {
        elements_.back() = multiply(std::get<Affine>(t), std::get<Affine>(elements_.back()));
        return;
    }
    elements_.push_back(t);
}

Point TransformChain::apply(const Point& p) const {
    Point q = p;
    for (const auto& e : elements_) q = std::visit([&](const auto& t) { return t.apply(q); }, e);
    return q;
}

Point apply(const Affine& t, const Point& p) { return t.apply(p); }
Point apply(const DisplacementField& t, const Point& p) { return t.apply(p); }
Point apply(const TransformChain& t, const Point& p) { return t.apply(p); }

TransformChain compose(const TransformChain& a, const TransformChain& b) {
    if (a.dim() != b.dim())
        throw std::invalid_argument("cannot compose chains of dimension " + std::to_string(a.dim()) + " and " +
                                    std::to_string(b.dim()));
    TransformChain out = b;
    for (const auto& e : a.elements()) out.append(e);
    return out;
}

PointInversion invert_point(const DisplacementField& field, const Point& p, const FieldInversionParams& params) {
    const auto& sp = field.spacing();
    double min_spacing = std::min(sp[0], sp[1]);
    if (field.dim() == 3) min_spacing = std::min(min_spacing, sp[2]);
    const double tol = params.tolerance_voxels * min_spacing;
    PointInversion r{p, false};
    for (int it = 0; it < params.iterations; ++it) {
        const Point u = field.displacement(r.point);
        const Point next = sub(p, u);
        const Point d = sub(next, r.point);
        r.point = next;
        if (std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]) < tol) {
            r.converged = true;
            break;
        }
    }
    return r;
}

DisplacementField invert_field(const DisplacementField& field, const FieldInversionParams& params) {
    const auto& dims = field.dims();
    const auto& sp = field.spacing();
    std::vector<std::vector<double>> comps(field.dim(), std::vector<double>(field.count()));
    std::size_t idx = 0;
    for (int z = 0; z < dims[2]; ++z)
        for (int y = 0; y < dims[1]; ++y)
            for (int x = 0; x < dims[0]; ++x, ++idx) {
                const Point p{x * sp[0], y * sp[1], field.dim() == 3 ? z * sp[2] : 0.0};
                const Point q = invert_point(field, p, params).point;
                for (int c = 0; c < field.dim(); ++c) comps[c][idx] = q[c] - p[c];
            }
    return DisplacementField(field.dim(), dims, sp, std::move(comps));
}

TransformChain invert(const TransformChain& chain, const FieldInversionParams& params) {
    TransformChain out(chain.dim());
    const auto& el = chain.elements();
    for (auto it = el.rbegin(); it != el.rend(); ++it) {
        if (const auto* a = std::get_if<Affine>(&*it))
            out.append(invert_affine(*a));
        else
            out.append(invert_field(std::get<DisplacementField>(*it), params));
    }
    return out;
}

double jacobian_min_det(const DisplacementField& field) {
    const auto& dims = field.dims();
    const auto& sp = field.spacing();
    const int dim = field.dim();
    auto idx = [&](int x, int y, int z) {
        return static_cast<std::size_t>(x) + static_cast<std::size_t>(dims[0]) * (y + static_cast<std::size_t>(dims[1]) * z);
    };
    // d u_c / d axis at (x,y,z)
    auto deriv = [&](int c, int axis, int x, int y, int z) {
        std::array<int, 3> p{x, y, z};
        const int n = dims[axis];
        if (n < 2) return 0.0;
        std::array<int, 3> lo = p, hi = p;
        double h = 2.0;
        if (p[axis] == 0) {
            hi[axis] = 1;
            h = 1.0;
        } else if (p[axis] == n - 1) {
            lo[axis] = n - 2;
            h = 1.0;
        } else {
            lo[axis] -= 1;
            hi[axis] += 1;
        }
        const auto comp = field.component(c);
        return (comp[idx(hi[0], hi[1], hi[2])] - comp[idx(lo[0], lo[1], lo[2])]) / (h * sp[axis]);
    };
    double min_det = std::numeric_limits<double>::infinity();
    for (int z = 0; z < dims[2]; ++z)
        for (int y = 0; y < dims[1]; ++y)
            for (int x = 0; x < dims[0]; ++x) {
                Matrix3 j = identity_matrix();
                for (int c = 0; c < dim; ++c)
                    for (int a = 0; a < dim; ++a) j[c][a] += deriv(c, a, x, y, z);
                min_det = std::min(min_det, determinant(j));
            }
    return min_det;
}

template DisplacementField DisplacementField::zero<2>(const Geometry<2>&);
template DisplacementField DisplacementField::zero<3>(const Geometry<3>&);
template DisplacementField DisplacementField::from_components<2>(const Geometry<2>&, std::array<std::vector<double>, 2>);
template DisplacementField DisplacementField::from_components<3>(const Geometry<3>&, std::array<std::vector<double>, 3>);
template Geometry<2> DisplacementField::geometry<2>() const;
template Geometry<3> DisplacementField::geometry<3>() const;

}  // namespace histostack
