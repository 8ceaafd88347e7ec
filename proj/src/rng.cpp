#include "tripro/rng.hpp"

#include "tripro/errors.hpp"

#include <sstream>

namespace tripro {

std::string Rng::state() const {
    std::ostringstream out;
    out << engine_;
    return out.str();
}

void Rng::restore(const std::string& state) {
    std::istringstream in(state);
    in >> engine_;
    if (in.fail()) throw FormatError("corrupt rng state");
}

} // namespace tripro
