#include "bnf/rqs.hpp"

// Header-only templates; this TU exists to give the component a compiled
// anchor and to catch header breakage early.
