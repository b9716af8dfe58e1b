#include "cmw/loss.hpp"

namespace cmw {

double eval_epe(const FlowField& pred, const FlowField& gt)
{
    if (!pred.same_size(gt)) throw std::invalid_argument("eval_epe: field size mismatch");
    if (pred.u.size() == 0) throw std::invalid_argument("eval_epe: empty field");
    const auto du = pred.u.cast<double>() - gt.u.cast<double>();
    const auto dv = pred.v.cast<double>() - gt.v.cast<double>();
    return (du.square() + dv.square()).sqrt().mean();
}

} // namespace cmw
