#include "stnet/network.hpp"

// Anchor the template instantiations used across the tools and tests so they
// compile once.
namespace stnet {

template class Network<float>;
template class Network<double>;

}  // namespace stnet
