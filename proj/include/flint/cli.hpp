#pragma once

// The `flint` command line: gen, train, infer, baseline, eval, viz.
//
// Exit codes: 0 ok, 1 unexpected failure, 2 usage, 3 I/O, 4 configuration or
// data, 5 archive misalignment.

namespace flint {

int run_cli(int argc, char** argv);

}  // namespace flint
