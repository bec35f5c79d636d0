#include "bnf/diffcore.hpp"

namespace bnf {

void Tape::backward(Var loss) {
  if (loss.tape != this || loss.idx < 0 || static_cast<size_t>(loss.idx) >= val_.size())
    throw tape_error("loss is not on this tape", loss.idx);
  adj_.assign(val_.size(), 0.0);
  adj_[loss.idx] = 1.0;
  for (int32_t n = loss.idx; n >= 0; --n) {
    const double a = adj_[n];
    if (a == 0.0) continue;
    const uint32_t b = edge_start_[n], e = edge_start_[n + 1];
    for (uint32_t k = b; k < e; ++k) adj_[edges_[k].src] += edges_[k].partial * a;
  }
}

}  // namespace bnf
