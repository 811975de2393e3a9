#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace dtkc {

// Entry point of the dtkc command-line tool. Returns 0 on success, 2 on usage
// errors (help goes to `err`) and 1 on runtime errors.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dtkc
