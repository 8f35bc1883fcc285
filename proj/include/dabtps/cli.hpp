#pragma once

// Command-line front end over the pipeline stages. Factored out of main()
// so tests can drive it in-process.
//
// Exit codes: 0 success, 1 a stage failed or acceptance checks failed,
// 2 usage error (bad flags, bad config).

#include <string>
#include <vector>

namespace dabtps {

int cli_main(int argc, const char* const* argv);

// convenience wrapper: args exclude the program name
int cli_main(const std::vector<std::string>& args);

}  // namespace dabtps
