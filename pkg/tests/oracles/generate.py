"""Regenerate ``values.json`` from first principles with mpmath.

Independent of the package on purpose: nothing here imports annipol.
Run ``python tests/oracles/generate.py`` to refresh; the JSON is committed.
"""

import json
from pathlib import Path

import mpmath as mp

mp.mp.dps = 30
M = mp.mpf(511)


def rad(deg):
    return mp.pi * mp.mpf(deg) / 180


def e_out(energy, theta):
    return energy / (1 + (energy / M) * (1 - mp.cos(rad(theta))))


def kn_parts(energy, theta):
    eps = e_out(energy, theta) / energy
    s2 = mp.sin(rad(theta)) ** 2
    return eps**2 * (eps + 1 / eps - s2), eps**2 * s2


def analyzing(energy, theta):
    f, g = kn_parts(energy, theta)
    return g / f


def optimal(energy):
    return mp.findroot(lambda t: mp.diff(lambda x: analyzing(energy, x), t), 82)


def window_mu(w1, e1, w2, e2):
    def moments(w, e):
        f = mp.quad(lambda t: kn_parts(e, t)[0] * mp.sin(rad(t)), w)
        g = mp.quad(lambda t: kn_parts(e, t)[1] * mp.sin(rad(t)), w)
        return f, g

    f1, g1 = moments(w1, e1)
    f2, g2 = moments(w2, e2)
    return g1 * g2 / (f1 * f2)


def theta_cdf(energy, step=0.25):
    grid = [i * step for i in range(int(180 / step) + 1)]
    dens = lambda t: kn_parts(energy, t)[0] * mp.sin(rad(t))
    total = mp.quad(dens, [0, 90, 180])
    out, acc, prev = [], mp.mpf(0), 0
    for t in grid:
        if t > prev:
            acc += mp.quad(dens, [prev, t])
        out.append(float(acc / total))
        prev = t
    return grid, out


def dphi_bin_probs(mu, n_bins=24):
    w = mp.mpf(360) / n_bins
    edges = [-180 - w / 2 + k * w for k in range(n_bins + 1)]
    return [float(mp.quad(lambda x: (1 - mu * mp.cos(2 * rad(x))) / 360, [a, b])) for a, b in zip(edges, edges[1:])]


def main():
    e30, e50, e10 = e_out(M, 30), e_out(M, 50), e_out(M, 10)
    a82 = analyzing(M, 82)
    mu82 = a82**2
    mu_half = mu82 / 2
    vals = {
        "scattered_energy": {"10": float(e10), "30": float(e30), "50": float(e50)},
        "scatterer_deposit": {"10": float(M - e10), "30": float(M - e30), "50": float(M - e50)},
        "optimal_theta": {"511": float(optimal(M)), "450": float(optimal(450)), "376": float(optimal(376)),
                          "e30": float(optimal(e30)), "e50": float(optimal(e50)), "e10": float(optimal(e10))},
        "analyzing_power": {"511_82": float(a82), "511_90": float(analyzing(M, 90)),
                            "e30_83": float(analyzing(e30, 83))},
        "mu_82_82": float(mu82),
        "R_82_82": float((1 + mu82) / (1 - mu82)),
        "R_82_82_half": float((1 + mu_half) / (1 - mu_half)),
        "mu_e30_pair": float(a82 * analyzing(e30, 83)),
        "window_mu": {
            "511_72_90_72_90": float(window_mu([72, 90], M, [72, 90], M)),
            "e30_72_90_73_90": float(window_mu([72, 90], M, [73, 90], e30)),
            "511_60_120_60_120": float(window_mu([60, 120], M, [60, 120], M)),
        },
        "sigma_511_fwhm081": float(mp.mpf("0.081") * M / (2 * mp.sqrt(2 * mp.log(2)))),
        "coverage_deg": {"50": float(mp.degrees(mp.atan(mp.mpf("8.8") / 50))),
                         "75": float(mp.degrees(mp.atan(mp.mpf("8.8") / 75)))},
        "dphi_bin_probs_mu03": dphi_bin_probs(mp.mpf("0.3")),
    }
    grid, cdf511 = theta_cdf(M)
    _, cdf450 = theta_cdf(e30)
    vals["theta_cdf"] = {"grid_deg": grid, "511": cdf511, "e30": cdf450}
    out = Path(__file__).with_name("values.json")
    out.write_text(json.dumps(vals, indent=1) + "\n")


if __name__ == "__main__":
    main()
