#pragma once

#include <array>
#include <memory>
#include <span>
#include <variant>
#include <vector>

#include "histostack/image.hpp"

namespace histostack {

// Physical point in micrometres. 2D transforms leave z at 0.
using Point = std::array<double, 3>;
using Matrix3 = std::array<std::array<double, 3>, 3>;

Matrix3 identity_matrix();
Matrix3 matmul(const Matrix3& a, const Matrix3& b);
Point matvec(const Matrix3& m, const Point& p);
double determinant(const Matrix3& m);

// p -> linear * (p - center) + center + translation
class Affine {
public:
    static Affine identity(int dim);
    static Affine translation(int dim, const Point& t);
    static Affine rotation_2d(double radians, const Point& center);

    // A 2D affine must leave the z row/column at identity and have zero z
    // translation and centre. Throws when the linear part is singular.
    Affine(int dim, const Matrix3& linear, const Point& translation, const Point& center);

    int dim() const { return dim_; }
    const Matrix3& linear() const { return linear_; }
    const Point& translation() const { return translation_; }
    const Point& center() const { return center_; }
    double determinant() const;

    Point apply(const Point& p) const;

    // Same mapping, re-expressed about another centre.
    Affine recentered(const Point& center) const;

    bool operator==(const Affine&) const = default;

private:
    int dim_ = 2;
    Matrix3 linear_ = identity_matrix();
    Point translation_{};
    Point center_{};
};

// Throws std::domain_error when |det| < 1e-12.
Affine invert_affine(const Affine& a);

// outer(inner(p)); the result keeps inner's centre.
Affine multiply(const Affine& outer, const Affine& inner);

// Dense displacement on a regular grid with origin at 0. Vectors are in
// micrometres and are evaluated by linear interpolation, clamped to the
// edge value outside the grid. A field maps p -> p + u(p).
class DisplacementField {
public:
    DisplacementField() = default;
    // components: `dim` buffers of size dims[0]*dims[1]*dims[2], x-fastest.
    // 2D fields use dims[2] == 1.
    DisplacementField(int dim, const std::array<int, 3>& dims, const std::array<double, 3>& spacing,
                      std::vector<std::vector<double>> components);

    static DisplacementField zero(int dim, const std::array<int, 3>& dims, const std::array<double, 3>& spacing);
    template <int D>
    static DisplacementField zero(const Geometry<D>& geometry);
    template <int D>
    static DisplacementField from_components(const Geometry<D>& geometry, std::array<std::vector<double>, D> components);

    int dim() const { return dim_; }
    const std::array<int, 3>& dims() const { return dims_; }
    const std::array<double, 3>& spacing() const { return spacing_; }
    std::size_t count() const { return static_cast<std::size_t>(dims_[0]) * dims_[1] * dims_[2]; }
    std::span<const double> component(int c) const { return (*components_)[c]; }

    template <int D>
    Geometry<D> geometry() const;

    Point displacement(const Point& p) const;
    Point vector_at(std::size_t index) const;
    Point apply(const Point& p) const;

    double max_magnitude() const;
    double mean_magnitude() const;
    double rms_difference(const DisplacementField& other) const;

    bool operator==(const DisplacementField& other) const;

private:
    int dim_ = 2;
    std::array<int, 3> dims_{1, 1, 1};
    std::array<double, 3> spacing_{1.0, 1.0, 1.0};
    std::shared_ptr<const std::vector<std::vector<double>>> components_;
};

using Transform = std::variant<Affine, DisplacementField>;

// Elements apply in list order: chain(p) = e_n(...e_1(e_0(p))).
class TransformChain {
public:
    explicit TransformChain(int dim);
    TransformChain(const Affine& affine);              // NOLINT(google-explicit-constructor)
    TransformChain(const DisplacementField& field);    // NOLINT(google-explicit-constructor)

    int dim() const { return dim_; }
    const std::vector<Transform>& elements() const { return elements_; }
    bool empty() const { return elements_.empty(); }

    // Appends a transform applied after the existing ones. Adjacent affines
    // are multiplied into one element.
    void append(const Transform& t);

    Point apply(const Point& p) const;

    bool operator==(const TransformChain&) const = default;

private:
    int dim_;
    std::vector<Transform> elements_;
};

int dim_of(const Transform& t);

Point apply(const Affine& t, const Point& p);
Point apply(const DisplacementField& t, const Point& p);
Point apply(const TransformChain& t, const Point& p);

// apply(compose(a, b), p) == apply(a, apply(b, p)). Throws on dimension mismatch.
TransformChain compose(const TransformChain& a, const TransformChain& b);

struct FieldInversionParams {
    int iterations = 20;
    double tolerance_voxels = 0.01;
};

struct PointInversion {
    Point point{};
    bool converged = false;
};

// Solves q + u(q) = p for q by fixed-point iteration.
PointInversion invert_point(const DisplacementField& field, const Point& p, const FieldInversionParams& params = {});

// Inverse displacement sampled on the same grid.
DisplacementField invert_field(const DisplacementField& field, const FieldInversionParams& params = {});

// Reverses the chain and inverts each element.
TransformChain invert(const TransformChain& chain, const FieldInversionParams& params = {});

// min over grid of det(I + grad u); central differences inside, one-sided at edges.
double jacobian_min_det(const DisplacementField& field);

}  // namespace histostack
