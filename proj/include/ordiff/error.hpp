// SPDX-License-Identifier: Apache-2.0
#ifndef ORDIFF_ERROR_HPP_
#define ORDIFF_ERROR_HPP_

#include <stdexcept>
#include <string>
#include <string_view>

namespace ordiff {

enum class Errc {
    empty_corpus,
    invalid_byte,
    even_length,
    unknown_id,
    corpus_too_short,
    empty_vocab,
    no_windows,
    window_length_mismatch,
    b_too_large,
    degenerate_entropy,
    non_monotonic,
    bad_timestep,
    division_by_zero_mask,
    empty_support,
    not_fully_masked,
    mask_residue,
    too_large,
    bad_config,
    length_exceeded,
    non_finite_loss,
    shape_mismatch,
    non_toy_input,
    version_mismatch,
    corrupt_file,
    incompatible_schedule,
    empty_input,
    io_error,
    parse_error,
};

inline constexpr std::string_view errc_name(Errc c) noexcept {
    switch (c) {
    case Errc::empty_corpus: return "EmptyCorpus";
    case Errc::invalid_byte: return "InvalidByte";
    case Errc::even_length: return "EvenLength";
    case Errc::unknown_id: return "UnknownId";
    case Errc::corpus_too_short: return "CorpusTooShort";
    case Errc::empty_vocab: return "EmptyVocab";
    case Errc::no_windows: return "NoWindows";
    case Errc::window_length_mismatch: return "WindowLengthMismatch";
    case Errc::b_too_large: return "BTooLarge";
    case Errc::degenerate_entropy: return "DegenerateEntropy";
    case Errc::non_monotonic: return "NonMonotonic";
    case Errc::bad_timestep: return "BadTimestep";
    case Errc::division_by_zero_mask: return "DivisionByZeroMask";
    case Errc::empty_support: return "EmptySupport";
    case Errc::not_fully_masked: return "NotFullyMasked";
    case Errc::mask_residue: return "MaskResidue";
    case Errc::too_large: return "TooLarge";
    case Errc::bad_config: return "BadConfig";
    case Errc::length_exceeded: return "LengthExceeded";
    case Errc::non_finite_loss: return "NonFiniteLoss";
    case Errc::shape_mismatch: return "ShapeMismatch";
    case Errc::non_toy_input: return "NonToyInput";
    case Errc::version_mismatch: return "VersionMismatch";
    case Errc::corrupt_file: return "CorruptFile";
    case Errc::incompatible_schedule: return "IncompatibleSchedule";
    case Errc::empty_input: return "EmptyInput";
    case Errc::io_error: return "IoError";
    case Errc::parse_error: return "ParseError";
    }
    return "Unknown";
}

/// Every failure raised by the library carries one of the codes above.
class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what)
        : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

} // namespace ordiff

#endif // ORDIFF_ERROR_HPP_
