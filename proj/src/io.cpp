#include "ssni/io.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

namespace ssni::io {

void atomic_write_file(const std::string& path, const std::string& contents) {
  namespace fs = std::filesystem;
  fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    os.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!os) throw std::runtime_error("short write to " + tmp.string());
  }
  fs::rename(tmp, target);
}

}  // namespace ssni::io
