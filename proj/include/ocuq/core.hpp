#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace ocuq {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVectorX = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

/// Dense row-major f64 matrix used for weights and feature batches.
using Matrix = MatrixX<double>;
using Vector = VectorX<double>;
using RowVector = RowVectorX<double>;
using FeatureMatrix = MatrixX<float>;

using Index = Eigen::Index;
using ClassId = std::uint16_t;

/// Base error. `code()` is the short machine-greppable tag printed by the CLI.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& what)
        : std::runtime_error(what), code_(std::move(code)) {}
    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

#define OCUQ_DEFINE_ERROR(Name, Code) \
    class Name : public Error {        \
    public:                            \
        explicit Name(const std::string& what) : Error(Code, what) {} \
    };

OCUQ_DEFINE_ERROR(ShapeError, "E_SHAPE")
OCUQ_DEFINE_ERROR(InputError, "E_INPUT")
OCUQ_DEFINE_ERROR(StateError, "E_STATE")
OCUQ_DEFINE_ERROR(NumericError, "E_NUMERIC")
OCUQ_DEFINE_ERROR(FitError, "E_FIT")
OCUQ_DEFINE_ERROR(GenerationError, "E_GENERATION")
OCUQ_DEFINE_ERROR(ConfigError, "E_CONFIG")
OCUQ_DEFINE_ERROR(IoError, "E_IO")
OCUQ_DEFINE_ERROR(FormatError, "E_FORMAT")
OCUQ_DEFINE_ERROR(KindMismatchError, "E_KIND")
OCUQ_DEFINE_ERROR(VersionError, "E_VERSION")

#undef OCUQ_DEFINE_ERROR

inline void require_shape(bool ok, const std::string& what) {
    if (!ok) throw ShapeError(what);
}

template <typename Derived>
void require_finite(const Eigen::DenseBase<Derived>& m, const char* where) {
    if (!m.allFinite()) throw NumericError(std::string("non-finite values in ") + where);
}

inline double round_to_float(double x) { return static_cast<double>(static_cast<float>(x)); }

}  // namespace ocuq
