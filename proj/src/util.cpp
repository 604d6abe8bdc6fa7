#include "derain/util.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <sstream>

namespace derain {

std::string format_double(double v, int precision) {
    std::ostringstream os;
    os.precision(precision);
    os << v;
    return os.str();
}

void append_line_locked(const std::string& path, const std::string& line,
                        const std::string& header_if_new) {
    int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
    if (fd < 0)
        throw IoError("cannot open '" + path + "' for append: " + std::strerror(errno));
    if (::flock(fd, LOCK_EX) != 0) {
        ::close(fd);
        throw IoError("cannot lock '" + path + "': " + std::strerror(errno));
    }
    std::string out;
    off_t end = ::lseek(fd, 0, SEEK_END);
    if (end == 0 && !header_if_new.empty()) out = header_if_new + "\n";
    out += line + "\n";
    ssize_t written = ::write(fd, out.data(), out.size());
    ::flock(fd, LOCK_UN);
    ::close(fd);
    if (written != static_cast<ssize_t>(out.size()))
        throw IoError("short write to '" + path + "'");
}

} // namespace derain
