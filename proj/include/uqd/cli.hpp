#ifndef UQD_CLI_HPP
#define UQD_CLI_HPP

#include <string>
#include <vector>

namespace uqd::cli {

// Entry point behind main(). args excludes argv[0]. Returns the process
// exit code: 0 success, 1 contract/config/usage errors, 2 I/O errors.
int run(const std::vector<std::string>& args);

// Worker cap: min(UQD_THREADS if set, hardware concurrency), at least 1.
int thread_budget();

} // namespace uqd::cli

#endif
