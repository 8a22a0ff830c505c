// Copyright (c) 2026 the mpo-over authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace mpo_over {

// Error taxonomy shared by the library and the CLI. Everything derived from
// InvalidInput maps to CLI exit code 2, any other Error to exit code 1.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InvalidInput : Error {
    using Error::Error;
};

struct SizeMismatch : InvalidInput {
    using InvalidInput::InvalidInput;
};
struct BadWildcard : InvalidInput {
    using InvalidInput::InvalidInput;
};
struct ShapeMismatch : InvalidInput {
    using InvalidInput::InvalidInput;
};
struct FactorProductMismatch : InvalidInput {
    using InvalidInput::InvalidInput;
};
struct BadBondCap : InvalidInput {
    using InvalidInput::InvalidInput;
};
struct AlreadyFactored : InvalidInput {
    using InvalidInput::InvalidInput;
};
struct PlanMismatch : InvalidInput {
    using InvalidInput::InvalidInput;
};
struct MissingAccumulator : InvalidInput {
    using InvalidInput::InvalidInput;
};
struct BadConfig : InvalidInput {
    using InvalidInput::InvalidInput;
};
struct BadFile : InvalidInput {
    using InvalidInput::InvalidInput;
};

struct NonFinite : Error {
    using Error::Error;
};
struct DidNotConverge : Error {
    using Error::Error;
};
struct IoError : Error {
    using Error::Error;
};

}  // namespace mpo_over
