#pragma once

#include <ostream>

namespace phcp::cli {

/// Entry point of the `phcp` tool. Returns the process exit code:
/// 0 ok, 1 other failure, 2 config error, 3 missing prerequisite, 4 numerical failure.
int main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace phcp::cli
