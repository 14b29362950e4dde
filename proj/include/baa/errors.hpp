#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace baa {

/// Base class for every error caused by user input: bad files, bad
/// configuration, inconsistent checkpoints. The CLI maps these to exit 2.
class InputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class MalformedRow : public InputError {
public:
    MalformedRow(std::size_t line, const std::string& why)
        : InputError("malformed row at line " + std::to_string(line) + ": " + why), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class MissingImage : public InputError {
public:
    explicit MissingImage(std::string id)
        : InputError("missing image for record " + id), id_(std::move(id)) {}
    const std::string& id() const noexcept { return id_; }

private:
    std::string id_;
};

class DuplicateId : public InputError {
public:
    explicit DuplicateId(std::string id)
        : InputError("duplicate record id " + id), id_(std::move(id)) {}
    const std::string& id() const noexcept { return id_; }

private:
    std::string id_;
};

class InsufficientSamples : public InputError {
public:
    using InputError::InputError;
};

class IoError : public InputError {
public:
    using InputError::InputError;
};

class ImageLoadError : public InputError {
public:
    explicit ImageLoadError(std::string id)
        : InputError("cannot load image for record " + id), id_(std::move(id)) {}
    const std::string& id() const noexcept { return id_; }

private:
    std::string id_;
};

class EmptyImage : public InputError {
public:
    EmptyImage() : InputError("image is empty") {}
};

class UnknownBackbone : public InputError {
public:
    explicit UnknownBackbone(const std::string& id) : InputError("unknown backbone: " + id) {}
};

class WeightsUnavailable : public InputError {
public:
    using InputError::InputError;
};

class ShapeMismatch : public InputError {
public:
    using InputError::InputError;
};

class CheckpointMismatch : public InputError {
public:
    using InputError::InputError;
};

class LengthMismatch : public InputError {
public:
    LengthMismatch(std::size_t a, std::size_t b)
        : InputError("length mismatch: " + std::to_string(a) + " vs " + std::to_string(b)) {}
};

class EmptyBatch : public InputError {
public:
    EmptyBatch() : InputError("empty batch") {}
};

class DuplicateCell : public InputError {
public:
    using InputError::InputError;
};

class PayloadMismatch : public InputError {
public:
    using InputError::InputError;
};

class ConfigError : public InputError {
public:
    using InputError::InputError;
};

} // namespace baa
