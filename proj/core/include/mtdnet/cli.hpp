#pragma once

namespace mtdnet {

/// Entry point behind the mtdnet binary; also callable from tests.
/// Subcommands: gen-data, train, train-cross, eval, gradcheck, case-study,
/// ablate. Returns 0 on success; nonzero with a diagnostic on stderr naming
/// the failing stage.
int cli_main(int argc, const char* const* argv);

}  // namespace mtdnet
