#include "dualpf/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "dualpf/errors.hpp"

namespace dualpf {

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

namespace {

void note(GradCheckReport& r, double a, double n, const std::string& where) {
  const double e = relative_error(a, n);
  ++r.coordinates;
  if (r.worst.empty() || e > r.max_rel_error) {
    r.max_rel_error = e;
    r.worst = where;
    r.worst_analytic = a;
    r.worst_numeric = n;
  }
}

}  // namespace

GradCheckReport grad_check(const std::function<Tensor(Tape&, const Tensor&)>& f, const Shape& shape,
                           std::vector<double> x, double eps) {
  std::vector<double> analytic;
  {
    Tape tape;
    Tensor xt = tape.variable(shape, x);
    Tensor loss = f(tape, xt);
    if (loss.numel() != 1) throw ContractError("grad_check: function is not scalar-valued");
    tape.backward(loss);
    auto g = xt.grad();
    analytic.assign(x.size(), 0.0);
    std::copy(g.begin(), g.end(), analytic.begin());
  }
  auto eval = [&](const std::vector<double>& at) {
    Tape tape(false);
    return f(tape, tape.constant(shape, at)).item();
  };
  GradCheckReport report;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + eps;
    const double up = eval(x);
    x[i] = orig - eps;
    const double down = eval(x);
    x[i] = orig;
    note(report, analytic[i], (up - down) / (2.0 * eps), "x[" + std::to_string(i) + "]");
  }
  return report;
}

GradCheckReport grad_check_params(const std::function<Tensor(Tape&)>& f, std::span<ParamStore* const> stores,
                                  double eps, std::size_t max_per_param) {
  std::vector<GradBuffer> analytic;
  {
    Tape tape;
    Tensor loss = f(tape);
    if (loss.numel() != 1) throw ContractError("grad_check: function is not scalar-valued");
    tape.backward(loss);
    for (ParamStore* s : stores) analytic.push_back(tape.param_grads(*s));
  }
  auto eval = [&] {
    Tape tape(false);
    return f(tape).item();
  };
  GradCheckReport report;
  for (std::size_t si = 0; si < stores.size(); ++si) {
    ParamStore& store = *stores[si];
    for (std::size_t id : store.ordered()) {
      auto w = store.value_mut(id);
      const std::size_t n = w.size();
      const std::size_t probes = max_per_param ? std::min(max_per_param, n) : n;
      for (std::size_t p = 0; p < probes; ++p) {
        const std::size_t k = probes == n ? p : (p * n) / probes;
        const double orig = w[k];
        w[k] = orig + eps;
        const double up = eval();
        w[k] = orig - eps;
        const double down = eval();
        w[k] = orig;
        const double a = analytic[si][id].empty() ? 0.0 : analytic[si][id][k];
        note(report, a, (up - down) / (2.0 * eps),
             "store" + std::to_string(si) + ":" + store.name(id) + "[" + std::to_string(k) + "]");
      }
    }
  }
  return report;
}

}  // namespace dualpf
