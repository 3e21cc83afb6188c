#pragma once

// Adaptive 8th-order Dormand-Prince integrator (DOP853) with the 7th-order
// continuous extension, after Hairer, Norsett & Wanner, "Solving Ordinary
// Differential Equations I", 2nd ed.
//
// The state is a fixed-size std::array so the whole stepper lives on the
// stack. The right-hand side is any callable with signature
//   void(double t, const State& y, State& dydt).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <utility>
#include <vector>

#include "trapsim/core.hpp"

namespace trapsim {

struct Dop853Settings {
  double abstol = 1e-10;
  double reltol = 1e-10;
  double max_step = std::numeric_limits<double>::infinity();
  double initial_step = 0.0;  // 0 -> automatic
  long max_steps = 100'000'000;
};

namespace dop853_detail {
// clang-format off
inline constexpr double c2 = 0.526001519587677318785587544488e-01;
inline constexpr double c3 = 0.789002279381515978178381316732e-01;
inline constexpr double c4 = 0.118350341907227396726757197510e+00;
inline constexpr double c5 = 0.281649658092772603273242802490e+00;
inline constexpr double c6 = 0.333333333333333333333333333333e+00;
inline constexpr double c7 = 0.25e+00;
inline constexpr double c8 = 0.307692307692307692307692307692e+00;
inline constexpr double c9 = 0.651282051282051282051282051282e+00;
inline constexpr double c10 = 0.6e+00;
inline constexpr double c11 = 0.857142857142857142857142857142e+00;
inline constexpr double c14 = 0.1e+00;
inline constexpr double c15 = 0.2e+00;
inline constexpr double c16 = 0.777777777777777777777777777778e+00;

inline constexpr double a21 = 5.26001519587677318785587544488e-2;
inline constexpr double a31 = 1.97250569845378994544595329183e-2;
inline constexpr double a32 = 5.91751709536136983633785987549e-2;
inline constexpr double a41 = 2.95875854768068491816892993775e-2;
inline constexpr double a43 = 8.87627564304205475450678981324e-2;
inline constexpr double a51 = 2.41365134159266685502369798665e-1;
inline constexpr double a53 = -8.84549479328286085344864962717e-1;
inline constexpr double a54 = 9.24834003261792003115737966543e-1;
inline constexpr double a61 = 3.7037037037037037037037037037e-2;
inline constexpr double a64 = 1.70828608729473871279604482173e-1;
inline constexpr double a65 = 1.25467687566822425016691814123e-1;
inline constexpr double a71 = 3.7109375e-2;
inline constexpr double a74 = 1.70252211019544039314978060272e-1;
inline constexpr double a75 = 6.02165389804559606850219397283e-2;
inline constexpr double a76 = -1.7578125e-2;
inline constexpr double a81 = 3.70920001185047927108779319836e-2;
inline constexpr double a84 = 1.70383925712239993810214054705e-1;
inline constexpr double a85 = 1.07262030446373284651809199168e-1;
inline constexpr double a86 = -1.53194377486244017527936158236e-2;
inline constexpr double a87 = 8.27378916381402288758473766002e-3;
inline constexpr double a91 = 6.24110958716075717114429577812e-1;
inline constexpr double a94 = -3.36089262944694129406857109825e0;
inline constexpr double a95 = -8.68219346841726006818189891453e-1;
inline constexpr double a96 = 2.75920996994467083049415600797e1;
inline constexpr double a97 = 2.01540675504778934086186788979e1;
inline constexpr double a98 = -4.34898841810699588477366255144e1;
inline constexpr double a101 = 4.77662536438264365890433908527e-1;
inline constexpr double a104 = -2.48811461997166764192642586468e0;
inline constexpr double a105 = -5.90290826836842996371446475743e-1;
inline constexpr double a106 = 2.12300514481811942347288949897e1;
inline constexpr double a107 = 1.52792336328824235832596922938e1;
inline constexpr double a108 = -3.32882109689848629194453265587e1;
inline constexpr double a109 = -2.03312017085086261358222928593e-2;
inline constexpr double a111 = -9.3714243008598732571704021658e-1;
inline constexpr double a114 = 5.18637242884406370830023853209e0;
inline constexpr double a115 = 1.09143734899672957818500254654e0;
inline constexpr double a116 = -8.14978701074692612513997267357e0;
inline constexpr double a117 = -1.85200656599969598641566180701e1;
inline constexpr double a118 = 2.27394870993505042818970056734e1;
inline constexpr double a119 = 2.49360555267965238987089396762e0;
inline constexpr double a1110 = -3.0467644718982195003823669022e0;
inline constexpr double a121 = 2.27331014751653820792359768449e0;
inline constexpr double a124 = -1.05344954667372501984066689879e1;
inline constexpr double a125 = -2.00087205822486249909675718444e0;
inline constexpr double a126 = -1.79589318631187989172765950534e1;
inline constexpr double a127 = 2.79488845294199600508499808837e1;
inline constexpr double a128 = -2.85899827713502369474065508674e0;
inline constexpr double a129 = -8.87285693353062954433549289258e0;
inline constexpr double a1210 = 1.23605671757943030647266201528e1;
inline constexpr double a1211 = 6.43392746015763530355970484046e-1;

inline constexpr double a141 = 5.61675022830479523392909219681e-2;
inline constexpr double a147 = 2.53500210216624811088794765333e-1;
inline constexpr double a148 = -2.46239037470802489917441475441e-1;
inline constexpr double a149 = -1.24191423263816360469010140626e-1;
inline constexpr double a1410 = 1.5329179827876569731206322685e-1;
inline constexpr double a1411 = 8.20105229563468988491666602057e-3;
inline constexpr double a1412 = 7.56789766054569976138603589584e-3;
inline constexpr double a1413 = -8.298e-3;
inline constexpr double a151 = 3.18346481635021405060768473261e-2;
inline constexpr double a156 = 2.83009096723667755288322961402e-2;
inline constexpr double a157 = 5.35419883074385676223797384372e-2;
inline constexpr double a158 = -5.49237485713909884646569340306e-2;
inline constexpr double a1511 = -1.08347328697249322858509316994e-4;
inline constexpr double a1512 = 3.82571090835658412954920192323e-4;
inline constexpr double a1513 = -3.40465008687404560802977114492e-4;
inline constexpr double a1514 = 1.41312443674632500278074618366e-1;
inline constexpr double a161 = -4.28896301583791923408573538692e-1;
inline constexpr double a166 = -4.69762141536116384314449447206e0;
inline constexpr double a167 = 7.68342119606259904184240953878e0;
inline constexpr double a168 = 4.06898981839711007970213554331e0;
inline constexpr double a169 = 3.56727187455281109270669543021e-1;
inline constexpr double a1613 = -1.39902416515901462129418009734e-3;
inline constexpr double a1614 = 2.9475147891527723389556272149e0;
inline constexpr double a1615 = -9.15095847217987001081870187138e0;

inline constexpr double b1 = 5.42937341165687622380535766363e-2;
inline constexpr double b6 = 4.45031289275240888144113950566e0;
inline constexpr double b7 = 1.89151789931450038304281599044e0;
inline constexpr double b8 = -5.8012039600105847814672114227e0;
inline constexpr double b9 = 3.1116436695781989440891606237e-1;
inline constexpr double b10 = -1.52160949662516078556178806805e-1;
inline constexpr double b11 = 2.01365400804030348374776537501e-1;
inline constexpr double b12 = 4.47106157277725905176885569043e-2;

inline constexpr double bhh1 = 0.244094488188976377952755905512e+00;
inline constexpr double bhh2 = 0.733846688281611857341361741547e+00;
inline constexpr double bhh3 = 0.220588235294117647058823529412e-01;

inline constexpr double er1 = 0.1312004499419488073250102996e-01;
inline constexpr double er6 = -0.1225156446376204440720569753e+01;
inline constexpr double er7 = -0.4957589496572501915214079952e+00;
inline constexpr double er8 = 0.1664377182454986536961530415e+01;
inline constexpr double er9 = -0.3503288487499736816886487290e+00;
inline constexpr double er10 = 0.3341791187130174790297318841e+00;
inline constexpr double er11 = 0.8192320648511571246570742613e-01;
inline constexpr double er12 = -0.2235530786388629525884427845e-01;

inline constexpr double d41 = -0.84289382761090128651353491142e+01;
inline constexpr double d46 = 0.56671495351937776962531783590e+00;
inline constexpr double d47 = -0.30689499459498916912797304727e+01;
inline constexpr double d48 = 0.23846676565120698287728149680e+01;
inline constexpr double d49 = 0.21170345824450282767155149946e+01;
inline constexpr double d410 = -0.87139158377797299206789907490e+00;
inline constexpr double d411 = 0.22404374302607882758541771650e+01;
inline constexpr double d412 = 0.63157877876946881815570249290e+00;
inline constexpr double d413 = -0.88990336451333310820698117400e-01;
inline constexpr double d414 = 0.18148505520854727256656404962e+02;
inline constexpr double d415 = -0.91946323924783554000451984436e+01;
inline constexpr double d416 = -0.44360363875948939664310572000e+01;
inline constexpr double d51 = 0.10427508642579134603413151009e+02;
inline constexpr double d56 = 0.24228349177525818288430175319e+03;
inline constexpr double d57 = 0.16520045171727028198505394887e+03;
inline constexpr double d58 = -0.37454675472269020279518312152e+03;
inline constexpr double d59 = -0.22113666853125306036270938578e+02;
inline constexpr double d510 = 0.77334326684722638389603898808e+01;
inline constexpr double d511 = -0.30674084731089398182061213626e+02;
inline constexpr double d512 = -0.93321305264302278729567221706e+01;
inline constexpr double d513 = 0.15697238121770843886131091075e+02;
inline constexpr double d514 = -0.31139403219565177677282850411e+02;
inline constexpr double d515 = -0.93529243588444783865713862664e+01;
inline constexpr double d516 = 0.35816841486394083752465898540e+02;
inline constexpr double d61 = 0.19985053242002433820987653617e+02;
inline constexpr double d66 = -0.38703730874935176555105901742e+03;
inline constexpr double d67 = -0.18917813819516756882830838328e+03;
inline constexpr double d68 = 0.52780815920542364900561016686e+03;
inline constexpr double d69 = -0.11573902539959630126141871134e+02;
inline constexpr double d610 = 0.68812326946963000169666922661e+01;
inline constexpr double d611 = -0.10006050966910838403183860980e+01;
inline constexpr double d612 = 0.77771377980534432092869265740e+00;
inline constexpr double d613 = -0.27782057523535084065932004339e+01;
inline constexpr double d614 = -0.60196695231264120758267380846e+02;
inline constexpr double d615 = 0.84320405506677161018159903784e+02;
inline constexpr double d616 = 0.11992291136182789328035130030e+02;
inline constexpr double d71 = -0.25693933462703749003312586129e+02;
inline constexpr double d76 = -0.15418974869023643374053993627e+03;
inline constexpr double d77 = -0.23152937917604549567536039109e+03;
inline constexpr double d78 = 0.35763911791061412378285349910e+03;
inline constexpr double d79 = 0.93405324183624310003907691704e+02;
inline constexpr double d710 = -0.37458323136451633156875139351e+02;
inline constexpr double d711 = 0.10409964950896230045147246184e+03;
inline constexpr double d712 = 0.29840293426660503123344363579e+02;
inline constexpr double d713 = -0.43533456590011143754432175058e+02;
inline constexpr double d714 = 0.96324553959188282948394950600e+02;
inline constexpr double d715 = -0.39177261675615439165231486172e+02;
inline constexpr double d716 = -0.14972683625798562581422125276e+03;
// clang-format on
}  // namespace dop853_detail

template <std::size_t N, class Rhs>
class Dop853 {
 public:
  using State = std::array<double, N>;

  /// `scale` sets the per-component magnitude against which abstol is
  /// measured: the error weight of component i is abstol*scale[i] +
  /// reltol*|y_i|. Pass ones for plain absolute tolerances.
  Dop853(Rhs rhs, Dop853Settings settings, State scale)
      : rhs_(std::move(rhs)), settings_(settings), scale_(scale) {}

  Dop853(Rhs rhs, Dop853Settings settings) : Dop853(std::move(rhs), settings, ones()) {}

  /// Start (or restart) from (t, y). The derivative is re-evaluated, so this
  /// is also how a discontinuity in the right-hand side is handled. The
  /// previous step size is kept as a hint when `keep_step` is set.
  void reset(double t, const State& y, bool keep_step = false) {
    t_ = t;
    y_ = y;
    rhs_(t_, y_, k1_);
    ++evaluations_;
    if (!keep_step || !(h_ > 0.0)) {
      h_ = settings_.initial_step > 0.0 ? settings_.initial_step : initial_step_guess();
    }
    has_step_ = false;
    dense_ready_ = false;
  }

  double time() const { return t_; }
  const State& state() const { return y_; }
  const State& derivative() const { return k1_; }
  double step_size() const { return h_; }
  long accepted_steps() const { return accepted_; }
  long rejected_steps() const { return rejected_; }
  long evaluations() const { return evaluations_; }
  Rhs& rhs() { return rhs_; }

  /// Take one accepted step that does not go past t_limit. Returns the new
  /// time. Throws IntegrationError on step-size underflow or non-finite
  /// state.
  double step(double t_limit) {
    using namespace dop853_detail;
    if (!(t_limit > t_)) return t_;
    constexpr double uround = std::numeric_limits<double>::epsilon();
    bool last_rejected = false;
    for (;;) {
      if (accepted_ + rejected_ >= settings_.max_steps) {
        throw IntegrationError("dop853: maximum number of steps exceeded", t_);
      }
      double h = std::min(h_, settings_.max_step);
      bool clamped = false;
      if (t_ + h >= t_limit || t_ + 1.01 * h >= t_limit) {
        h = t_limit - t_;
        clamped = true;
      }
      if (h < 16.0 * uround * std::abs(t_) || !(h > 0.0)) {
        throw IntegrationError("dop853: step size underflow", t_);
      }

      stages(h);

      double err = error_norm(h);
      if (!std::isfinite(err)) {
        // Treat a non-finite trial as a hard rejection; a persistent blow-up
        // ends in step-size underflow above.
        ++rejected_;
        h_ = h * 0.1;
        last_rejected = true;
        continue;
      }
      // Step-size factor, beta = 0 (no PI control), as in the reference code.
      double fac = std::pow(err, 0.125) / kSafe;
      fac = std::clamp(fac, 1.0 / kFacMax, 1.0 / kFacMin);
      double h_new = h / fac;

      if (err <= 1.0) {
        ++accepted_;
        rhs_(t_ + h, y_new_, k4_);  // FSAL derivative at the new point
        ++evaluations_;
        if (last_rejected) h_new = std::min(h_new, h);
        // Keep the unclamped proposal when this step was shortened to land on
        // t_limit, otherwise sampled integration would ratchet h down.
        if (clamped) h_new = std::max(h_new, h_);
        for (std::size_t i = 0; i < N; ++i) {
          if (!std::isfinite(y_new_[i])) {
            throw IntegrationError("dop853: non-finite state", t_);
          }
        }
        y_old_ = y_;
        k1_old_ = k1_;
        t_old_ = t_;
        h_last_ = h;
        t_ = clamped ? t_limit : t_ + h;
        y_ = y_new_;
        k1_ = k4_;
        h_ = h_new;
        has_step_ = true;
        dense_ready_ = false;
        return t_;
      }
      ++rejected_;
      h_ = h / std::min(1.0 / kFacMin, std::pow(err, 0.125) / kSafe);
      last_rejected = true;
    }
  }

  /// Dense output on the last accepted step, valid for t in [t_old, t].
  /// The first call after a step costs three extra evaluations.
  State interpolate(double t) {
    if (!has_step_) return y_;
    if (!dense_ready_) prepare_dense();
    const double s = (t - t_old_) / h_last_;
    const double s1 = 1.0 - s;
    State out;
    for (std::size_t i = 0; i < N; ++i) {
      const double conpar = rc5_[i] + s * (rc6_[i] + s1 * (rc7_[i] + s * rc8_[i]));
      out[i] = rc1_[i] + s * (rc2_[i] + s1 * (rc3_[i] + s * (rc4_[i] + s1 * conpar)));
    }
    return out;
  }

 private:
  static constexpr double kSafe = 0.9;
  static constexpr double kFacMin = 0.333;  // step may shrink by at most 1/kFacMin
  static constexpr double kFacMax = 6.0;    // and grow by at most kFacMax

  static State ones() {
    State s;
    s.fill(1.0);
    return s;
  }

  double weight(std::size_t i, double a, double b) const {
    return settings_.abstol * scale_[i] + settings_.reltol * std::max(std::abs(a), std::abs(b));
  }

  double initial_step_guess() {
    double dnf = 0.0, dny = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      const double sk = weight(i, y_[i], 0.0);
      dnf += (k1_[i] / sk) * (k1_[i] / sk);
      dny += (y_[i] / sk) * (y_[i] / sk);
    }
    double h = (dnf <= 1e-10 || dny <= 1e-10) ? 1.0e-6 : std::sqrt(dny / dnf) * 0.01;
    h = std::min(h, settings_.max_step);
    State y1, f1;
    for (std::size_t i = 0; i < N; ++i) y1[i] = y_[i] + h * k1_[i];
    rhs_(t_ + h, y1, f1);
    ++evaluations_;
    double der2 = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      const double sk = weight(i, y_[i], 0.0);
      const double d = (f1[i] - k1_[i]) / sk;
      der2 += d * d;
    }
    der2 = std::sqrt(der2) / h;
    const double der12 = std::max(std::abs(der2), std::sqrt(dnf));
    const double h1 = der12 <= 1e-15 ? std::max(1.0e-6, std::abs(h) * 1.0e-3)
                                     : std::pow(0.01 / der12, 1.0 / 8.0);
    return std::min({100.0 * h, h1, settings_.max_step});
  }

  void stages(double h) {
    using namespace dop853_detail;
    const State& y = y_;
    State& w = tmp_;
    for (std::size_t i = 0; i < N; ++i) w[i] = y[i] + h * a21 * k1_[i];
    rhs_(t_ + c2 * h, w, k2_);
    for (std::size_t i = 0; i < N; ++i) w[i] = y[i] + h * (a31 * k1_[i] + a32 * k2_[i]);
    rhs_(t_ + c3 * h, w, k3_);
    for (std::size_t i = 0; i < N; ++i) w[i] = y[i] + h * (a41 * k1_[i] + a43 * k3_[i]);
    rhs_(t_ + c4 * h, w, k4_);
    for (std::size_t i = 0; i < N; ++i)
      w[i] = y[i] + h * (a51 * k1_[i] + a53 * k3_[i] + a54 * k4_[i]);
    rhs_(t_ + c5 * h, w, k5_);
    for (std::size_t i = 0; i < N; ++i)
      w[i] = y[i] + h * (a61 * k1_[i] + a64 * k4_[i] + a65 * k5_[i]);
    rhs_(t_ + c6 * h, w, k6_);
    for (std::size_t i = 0; i < N; ++i)
      w[i] = y[i] + h * (a71 * k1_[i] + a74 * k4_[i] + a75 * k5_[i] + a76 * k6_[i]);
    rhs_(t_ + c7 * h, w, k7_);
    for (std::size_t i = 0; i < N; ++i)
      w[i] = y[i] + h * (a81 * k1_[i] + a84 * k4_[i] + a85 * k5_[i] + a86 * k6_[i] + a87 * k7_[i]);
    rhs_(t_ + c8 * h, w, k8_);
    for (std::size_t i = 0; i < N; ++i)
      w[i] = y[i] + h * (a91 * k1_[i] + a94 * k4_[i] + a95 * k5_[i] + a96 * k6_[i] +
                         a97 * k7_[i] + a98 * k8_[i]);
    rhs_(t_ + c9 * h, w, k9_);
    for (std::size_t i = 0; i < N; ++i)
      w[i] = y[i] + h * (a101 * k1_[i] + a104 * k4_[i] + a105 * k5_[i] + a106 * k6_[i] +
                         a107 * k7_[i] + a108 * k8_[i] + a109 * k9_[i]);
    rhs_(t_ + c10 * h, w, k10_);
    for (std::size_t i = 0; i < N; ++i)
      w[i] = y[i] + h * (a111 * k1_[i] + a114 * k4_[i] + a115 * k5_[i] + a116 * k6_[i] +
                         a117 * k7_[i] + a118 * k8_[i] + a119 * k9_[i] + a1110 * k10_[i]);
    rhs_(t_ + c11 * h, w, k11_);
    for (std::size_t i = 0; i < N; ++i)
      w[i] = y[i] + h * (a121 * k1_[i] + a124 * k4_[i] + a125 * k5_[i] + a126 * k6_[i] +
                         a127 * k7_[i] + a128 * k8_[i] + a129 * k9_[i] + a1210 * k10_[i] +
                         a1211 * k11_[i]);
    rhs_(t_ + h, w, k12_);
    evaluations_ += 11;
    for (std::size_t i = 0; i < N; ++i) {
      bsum_[i] = b1 * k1_[i] + b6 * k6_[i] + b7 * k7_[i] + b8 * k8_[i] + b9 * k9_[i] +
                 b10 * k10_[i] + b11 * k11_[i] + b12 * k12_[i];
      y_new_[i] = y[i] + h * bsum_[i];
    }
  }

  double error_norm(double h) const {
    using namespace dop853_detail;
    double err5 = 0.0, err3 = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      const double sk = weight(i, y_[i], y_new_[i]);
      const double e3 = bsum_[i] - bhh1 * k1_[i] - bhh2 * k9_[i] - bhh3 * k12_[i];
      const double e5 = er1 * k1_[i] + er6 * k6_[i] + er7 * k7_[i] + er8 * k8_[i] +
                        er9 * k9_[i] + er10 * k10_[i] + er11 * k11_[i] + er12 * k12_[i];
      err3 += (e3 / sk) * (e3 / sk);
      err5 += (e5 / sk) * (e5 / sk);
    }
    double deno = err5 + 0.01 * err3;
    if (deno <= 0.0) deno = 1.0;
    return std::abs(h) * err5 * std::sqrt(1.0 / (static_cast<double>(N) * deno));
  }

  // Continuous extension; k2..k12 still hold the stages of the last
  // accepted step, k1_old_ its initial derivative and k1_ the new one.
  void prepare_dense() {
    using namespace dop853_detail;
    const double h = h_last_;
    const double t = t_old_;
    const State& y = y_old_;
    const State& f0 = k1_old_;
    const State& f1 = k1_;
    for (std::size_t i = 0; i < N; ++i) {
      rc1_[i] = y[i];
      const double ydiff = y_[i] - y[i];
      rc2_[i] = ydiff;
      const double bspl = h * f0[i] - ydiff;
      rc3_[i] = bspl;
      rc4_[i] = ydiff - h * f1[i] - bspl;
      rc5_[i] = d41 * f0[i] + d46 * k6_[i] + d47 * k7_[i] + d48 * k8_[i] + d49 * k9_[i] +
                d410 * k10_[i] + d411 * k11_[i] + d412 * k12_[i];
      rc6_[i] = d51 * f0[i] + d56 * k6_[i] + d57 * k7_[i] + d58 * k8_[i] + d59 * k9_[i] +
                d510 * k10_[i] + d511 * k11_[i] + d512 * k12_[i];
      rc7_[i] = d61 * f0[i] + d66 * k6_[i] + d67 * k7_[i] + d68 * k8_[i] + d69 * k9_[i] +
                d610 * k10_[i] + d611 * k11_[i] + d612 * k12_[i];
      rc8_[i] = d71 * f0[i] + d76 * k6_[i] + d77 * k7_[i] + d78 * k8_[i] + d79 * k9_[i] +
                d710 * k10_[i] + d711 * k11_[i] + d712 * k12_[i];
    }
    State& w = tmp_;
    State k14, k15, k16;
    for (std::size_t i = 0; i < N; ++i)
      w[i] = y[i] + h * (a141 * f0[i] + a147 * k7_[i] + a148 * k8_[i] + a149 * k9_[i] +
                         a1410 * k10_[i] + a1411 * k11_[i] + a1412 * k12_[i] + a1413 * f1[i]);
    rhs_(t + c14 * h, w, k14);
    for (std::size_t i = 0; i < N; ++i)
      w[i] = y[i] + h * (a151 * f0[i] + a156 * k6_[i] + a157 * k7_[i] + a158 * k8_[i] +
                         a1511 * k11_[i] + a1512 * k12_[i] + a1513 * f1[i] + a1514 * k14[i]);
    rhs_(t + c15 * h, w, k15);
    for (std::size_t i = 0; i < N; ++i)
      w[i] = y[i] + h * (a161 * f0[i] + a166 * k6_[i] + a167 * k7_[i] + a168 * k8_[i] +
                         a169 * k9_[i] + a1613 * f1[i] + a1614 * k14[i] + a1615 * k15[i]);
    rhs_(t + c16 * h, w, k16);
    evaluations_ += 3;
    for (std::size_t i = 0; i < N; ++i) {
      rc5_[i] = h * (rc5_[i] + d413 * f1[i] + d414 * k14[i] + d415 * k15[i] + d416 * k16[i]);
      rc6_[i] = h * (rc6_[i] + d513 * f1[i] + d514 * k14[i] + d515 * k15[i] + d516 * k16[i]);
      rc7_[i] = h * (rc7_[i] + d613 * f1[i] + d614 * k14[i] + d615 * k15[i] + d616 * k16[i]);
      rc8_[i] = h * (rc8_[i] + d713 * f1[i] + d714 * k14[i] + d715 * k15[i] + d716 * k16[i]);
    }
    dense_ready_ = true;
  }

  Rhs rhs_;
  Dop853Settings settings_;
  State scale_;

  double t_ = 0.0, t_old_ = 0.0, h_ = 0.0, h_last_ = 0.0;
  State y_{}, y_old_{}, y_new_{}, tmp_{}, bsum_{};
  State k1_{}, k1_old_{}, k2_{}, k3_{}, k4_{}, k5_{}, k6_{}, k7_{}, k8_{}, k9_{}, k10_{},
      k11_{}, k12_{};
  State rc1_{}, rc2_{}, rc3_{}, rc4_{}, rc5_{}, rc6_{}, rc7_{}, rc8_{};
  bool has_step_ = false, dense_ready_ = false;
  long accepted_ = 0, rejected_ = 0, evaluations_ = 0;
};

/// Integrate from (t0, y0) to t_end and hand uniformly spaced samples
/// t0 + k*dt (k = 0, 1, ...) to `sink(t, y)`. The sink may return false to
/// stop early. Steps never straddle a time in `breakpoints` (kinks of the
/// right-hand side); the stepper restarts there. Returns the stepper so
/// callers can inspect statistics.
template <std::size_t N, class Rhs, class Sink>
Dop853<N, Rhs> integrate_sampled(Rhs rhs, const Dop853Settings& settings,
                                 const std::array<double, N>& scale, double t0,
                                 const std::array<double, N>& y0, double t_end, double dt,
                                 Sink&& sink, std::vector<double> breakpoints = {}) {
  Dop853<N, Rhs> stepper(std::move(rhs), settings, scale);
  stepper.reset(t0, y0);
  std::sort(breakpoints.begin(), breakpoints.end());
  auto bp = std::upper_bound(breakpoints.begin(), breakpoints.end(), t0);
  const double t_stop = t_end + 1e-9 * dt;
  if (!sink(t0, y0)) return stepper;
  long k = 1;
  double t_next = t0 + dt;
  while (t_next <= t_stop) {
    const double limit = (bp != breakpoints.end() && *bp < t_end) ? *bp : t_end;
    stepper.step(limit);
    while (t_next <= stepper.time() && t_next <= t_stop) {
      const auto y = t_next == stepper.time() ? stepper.state() : stepper.interpolate(t_next);
      if (!sink(t_next, y)) return stepper;
      ++k;
      t_next = t0 + static_cast<double>(k) * dt;
    }
    if (stepper.time() >= t_end) break;
    if (stepper.time() == limit) {
      stepper.reset(limit, stepper.state(), true);
      ++bp;
    }
  }
  return stepper;
}

}  // namespace trapsim
