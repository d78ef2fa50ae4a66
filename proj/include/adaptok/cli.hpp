#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace adaptok::cli {

// Runs one subcommand. `args` excludes the program name. Returns 0 on
// success, 1 on user error, 2 on internal error.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// 64-bit FNV-1a of the file bytes as 16 hex digits.
std::string file_digest(const std::filesystem::path& path);

std::string version();

}  // namespace adaptok::cli
