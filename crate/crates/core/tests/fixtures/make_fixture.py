"""Regenerate the 200-subject fixture and its reference values.

Run from this directory:  python3 make_fixture.py

Reference values come from statsmodels' GLM (coefficients, fitted values,
covariance, leverage) plus a direct numpy transcription of the sandwich,
marginal-effect, influence-function and semi-parametric variance formulas.
None of this shares code with the Rust implementation.
"""

import json

import numpy as np
import statsmodels.api as sm

SEED = 20240917
N = 200


def generate():
    rng = np.random.default_rng(SEED)
    x_cont = rng.standard_normal(N)
    x_cat = (rng.random(N) < 0.5).astype(float)
    z = np.zeros(N)
    z[rng.permutation(N)[: N // 2]] = 1.0
    eta = -1.7 + 1.1 * z + 1.5 * x_cont - 1.0 * x_cat
    y = (rng.random(N) < 1.0 / (1.0 + np.exp(-eta))).astype(float)
    return y, z, x_cont, x_cat


def sandwich_weights(res, h, n, p, kind):
    if kind == "const":
        return np.full(n, np.sum(res**2) / (n - p))
    if kind == "HC0":
        return res**2
    if kind == "HC1":
        return res**2 * n / (n - p)
    if kind == "HC2":
        return res**2 / (1 - h)
    if kind == "HC3":
        return res**2 / (1 - h) ** 2
    ph = round(h.sum())
    if kind == "HC4":
        d = np.minimum(4.0, n * h / ph)
        return res**2 / (1 - h) ** d
    if kind == "HC4m":
        d = np.minimum(1.0, n * h / ph) + np.minimum(1.5, n * h / ph)
        return res**2 / (1 - h) ** d
    if kind == "HC5":
        d = np.minimum(n * h / ph, np.maximum(4.0, n * 0.7 * h.max() / ph))
        return res**2 / np.sqrt((1 - h) ** d)
    raise ValueError(kind)


def main():
    y, z, x_cont, x_cat = generate()
    with open("trial200.csv", "w") as fh:
        fh.write("y,z,x_cont,x_cat\n")
        for row in zip(y, z, x_cont, x_cat):
            fh.write(f"{int(row[0])},{int(row[1])},{float(row[2])!r},{int(row[3])}\n")

    X = np.column_stack([np.ones(N), z, x_cont, x_cat])
    n, p = X.shape
    fit = sm.GLM(y, X, family=sm.families.Binomial()).fit(tol=1e-14, maxiter=100)
    b = fit.params
    pi = fit.fittedvalues
    v_model = fit.cov_params()
    hat = fit.get_influence().hat_matrix_diag
    res = y - pi

    sandwich = {}
    for kind in ["const", "HC0", "HC1", "HC2", "HC3", "HC4", "HC4m", "HC5"]:
        om = sandwich_weights(res, hat, n, p, kind)
        sandwich[kind] = (v_model @ (X.T * om) @ X @ v_model).tolist()

    # counterfactual predictions and marginal effect
    X1 = X.copy()
    X1[:, 1] = 1.0
    X0 = X.copy()
    X0[:, 1] = 0.0
    pi1 = 1 / (1 + np.exp(-X1 @ b))
    pi0 = 1 / (1 + np.exp(-X0 @ b))
    rd = pi1.mean() - pi0.mean()
    d1 = (X1 * (pi1 * (1 - pi1))[:, None]).mean(axis=0)
    d0 = (X0 * (pi0 * (1 - pi0))[:, None]).mean(axis=0)
    g = d1 - d0
    var_m1 = g @ v_model @ g
    sigma2 = np.var(pi1 - pi0, ddof=1)

    # efficient influence function
    M = (X.T * (pi * (1 - pi))) @ X / n
    lam_b = np.linalg.solve(M, (X * res[:, None]).T).T
    lam_rd = (pi1 - pi1.mean()) - (pi0 - pi0.mean()) + lam_b @ g
    var_eif = np.var(lam_rd, ddof=1) / n

    # semi-parametric
    def sv(a):
        return np.var(a, ddof=1)

    def sc(a, c):
        return np.cov(a, c, ddof=1)[0, 1]

    t1 = z == 1
    t0 = z == 0
    th1 = t1.mean()
    th0 = t0.mean()
    var1 = (sv(y[t1] - pi1[t1]) / th1 + 2 * sc(y[t1], pi1[t1]) - sv(pi1)) / n
    var0 = (sv(y[t0] - pi0[t0]) / th0 + 2 * sc(y[t0], pi0[t0]) - sv(pi0)) / n
    cov01 = (sc(y[t0], pi1[t0]) + sc(y[t1], pi0[t1]) - sc(pi0, pi1)) / n
    var_sp = var1 - 2 * cov01 + var0

    out = {
        "seed": SEED,
        "n": n,
        "coefficients": b.tolist(),
        "fitted": pi.tolist(),
        "hat": hat.tolist(),
        "v_model": v_model.tolist(),
        "sandwich": sandwich,
        "pi1": pi1.tolist(),
        "pi0": pi0.tolist(),
        "rd": rd,
        "grad1": d1.tolist(),
        "grad0": d0.tolist(),
        "sigma2_rd": sigma2,
        "var_delta_model": var_m1,
        "se_delta_model": float(np.sqrt(var_m1)),
        "var_eif": var_eif,
        "var_semiparametric": var_sp,
    }
    with open("trial200_reference.json", "w") as fh:
        json.dump(out, fh, indent=1)


if __name__ == "__main__":
    main()
