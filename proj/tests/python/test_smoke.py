"""Smoke tests for the python module: exercises the main operations end to
end against the exact oracles."""

import math
import sys

import numpy as np

import iapf


def check(name, condition):
    status = "ok" if condition else "FAIL"
    print(f"  {name}: {status}")
    return bool(condition)


def lg_scalar(a=0.7, b=0.5, horizon=30, seed=5):
    m = np.zeros(1)
    eye = np.eye(1)
    ys = iapf.simulate_linear_gaussian(m, eye, np.array([[a]]), np.array([[b]]), eye, eye,
                                       horizon, seed=seed)
    model = iapf.build_linear_gaussian(m, eye, np.array([[a]]), np.array([[b]]), eye, eye, ys)
    return model


def main():
    ok = True
    model = lg_scalar()
    kalman = iapf.kalman_filter_smoother(model)

    psi, log_l = iapf.exact_psi_star_lgssm(model)
    ok &= check("optimal twist normalizer equals the kalman likelihood",
                abs(log_l - kalman.log_likelihood) < 1e-9)

    out = iapf.run_psi_apf(model, psi, n=10, seed=3)
    ok &= check("optimal-twist filter is exact", abs(out.log_z - kalman.log_likelihood) < 1e-8)
    ok &= check("optimal-twist filter never resamples", out.resampling_count == 0)

    bpf = iapf.run_bpf(model, n=500, seed=7, record_ancestry=True)
    ok &= check("bootstrap estimate is finite", math.isfinite(bpf.log_z))
    lineages = iapf.ancestral_lineages(bpf)
    ok &= check("lineages have the right shape", lineages.shape == (model.horizon, 500))

    res = iapf.run_iapf(model, n0=200, seed=11)
    ok &= check("iterated filter lands near the truth",
                abs(res.log_z - kalman.log_likelihood) < 0.5)
    ok &= check("iterated filter reports its trace", len(res.iterations) >= 2)

    rt = iapf.PsiSequence.from_json(res.psi.to_json())
    x = np.array([0.25])
    ok &= check("psi json round trip", abs(rt.eval_log(3, x) - res.psi.eval_log(3, x)) < 1e-12)

    grid = iapf.default_grid_for(model)
    ok &= check("grid likelihood matches kalman",
                abs(iapf.grid_log_likelihood_1d(model, grid) - kalman.log_likelihood) < 1e-7)

    sv = iapf.build_univariate_sv(0.95, math.sqrt(0.02), 0.5,
                                  iapf.simulate_univariate_sv(0.95, math.sqrt(0.02), 0.5, 40,
                                                              seed=9))
    sv_res = iapf.run_iapf(sv, n0=100, seed=13)
    ok &= check("stochastic volatility pipeline runs", math.isfinite(sv_res.log_z))
    try:
        iapf.fully_adapted_psi(sv)
        ok &= check("fully adapted twist rejects sv models", False)
    except iapf.UnrepresentablePsiError:
        ok &= check("fully adapted twist rejects sv models", True)

    d = 3
    phi = np.full(d, 0.9)
    u = 0.2 * np.eye(d)
    msv_obs = iapf.simulate_multivariate_sv(np.zeros(d), phi, u, 25, seed=21)
    msv = iapf.build_multivariate_sv(np.zeros(d), phi, u, msv_obs)
    ok &= check("msv stationary covariance solves the fixed point",
                np.allclose(iapf.msv_stationary_covariance(phi, u),
                            np.diag(np.diag(u) / (1 - phi * phi))))
    ok &= check("msv filter runs", math.isfinite(iapf.run_bpf(msv, n=200, seed=2).log_z))

    rng = np.random.default_rng(0)
    ok &= check("iact of iid noise is near one",
                0.8 < iapf.iact(rng.standard_normal(20000)) < 1.2)

    ys = model  # keep the observation record alive through the closure

    def builder(theta):
        mm = np.zeros(1)
        eye = np.eye(1)
        return iapf.build_linear_gaussian(mm, eye, np.array([[float(theta[0])]]),
                                          np.array([[0.5]]), eye, eye,
                                          iapf.Observations(obs_matrix))

    obs_matrix = np.asarray(iapf.simulate_linear_gaussian(
        np.zeros(1), np.eye(1), np.array([[0.6]]), np.array([[0.5]]), np.eye(1), np.eye(1),
        20, seed=33).matrix())
    chain = iapf.run_pmmh(builder, [iapf.Prior.uniform(-0.99, 0.99)], np.array([0.5]),
                          chain_length=300, proposal_sd=np.array([0.2]), estimator="kalman",
                          seed=17)
    ok &= check("pmmh chain runs with a python model builder",
                chain.samples.shape == (300, 1) and 0.0 < chain.acceptance_rate(0) < 1.0)

    print("smoke: all passed" if ok else "smoke: FAILURES")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
