#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace gf {

// Error categories map 1:1 onto CLI exit codes (validation=2, io=3, numeric=4).
enum class ErrorKind { validation, io, numeric };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, std::string msg) : std::runtime_error(std::move(msg)), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

#define GF_ERROR_CLASS(Name, Kind)                                                       \
    class Name : public Error {                                                          \
    public:                                                                              \
        explicit Name(std::string msg) : Error(ErrorKind::Kind, std::move(msg)) {}       \
    }

GF_ERROR_CLASS(InvalidCanvas, validation);
GF_ERROR_CLASS(MissingGlyph, validation);
GF_ERROR_CLASS(EmptyIntersection, validation);
GF_ERROR_CLASS(InvalidRange, validation);
GF_ERROR_CLASS(ShapeMismatch, validation);
GF_ERROR_CLASS(NoiseAtFinalStep, validation);
GF_ERROR_CLASS(InvalidConfig, validation);
GF_ERROR_CLASS(IndexOutOfRange, validation);
GF_ERROR_CLASS(WeightSumError, validation);
GF_ERROR_CLASS(InvalidSteps, validation);
GF_ERROR_CLASS(ManifestMismatch, validation);
GF_ERROR_CLASS(RaggedRows, validation);
GF_ERROR_CLASS(DegenerateContour, validation);
GF_ERROR_CLASS(SvgParseError, validation);
GF_ERROR_CLASS(FontError, io);
GF_ERROR_CLASS(IoError, io);
GF_ERROR_CLASS(NonFiniteLoss, numeric);

#undef GF_ERROR_CLASS

} // namespace gf
