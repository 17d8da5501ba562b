"""Outer fitting loop: alternate correspondence estimation with GP regression.

Each iteration recomputes soft correspondences from the current deformed
reference, fuses them into labels, fits the posterior deformation, moves the
reference, and finally updates the per-point mixture variances from the new
residuals.  The loop stops when the mean displacement magnitude stabilizes.
"""
from __future__ import annotations

import logging
import time
from dataclasses import replace
from typing import Optional

import numpy as np

from .core import (
    AllMissingError,
    IterationRecord,
    NoMassError,
    NumericalError,
    PointSet,
    RegistrationConfig,
    RegistrationResult,
    default_sigma2_init,
    validate_config,
)
from .correspondence import (
    ResponsibilityInputs,
    closest_point_correspondence,
    get_correspondences,
)
from .gpr import gpr_posterior
from .kernels import KernelSpec, assemble_gram

logger = logging.getLogger(__name__)

SIGMA2_FLOOR = 1e-12

# named engine variants exposed on the command line
VARIANTS = {
    "SFGP_Full": dict(
        variance_mode="per_point", threshold_mode="on", correspondence_mode="multi_annotator"
    ),
    "SFGP_bcpdReg": dict(
        variance_mode="scalar", threshold_mode="on", correspondence_mode="multi_annotator"
    ),
    "GPReg_noTresh": dict(
        variance_mode="per_point", threshold_mode="off", correspondence_mode="multi_annotator"
    ),
    "GPClosestPnt": dict(
        variance_mode="per_point", threshold_mode="on", correspondence_mode="closest_point"
    ),
}


def variant_config(name: str, base: Optional[RegistrationConfig] = None) -> RegistrationConfig:
    if name not in VARIANTS:
        raise ValueError(
            f"unknown variant {name!r}; choose one of {', '.join(sorted(VARIANTS))}"
        )
    base = base if base is not None else RegistrationConfig()
    return replace(base, **VARIANTS[name])


def update_sigma2(
    p: np.ndarray,
    nu: np.ndarray,
    target: PointSet,
    deformed_ref: PointSet,
    post_var: np.ndarray,
    mode: str = "per_point",
    prev_sigma2: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Responsibility-weighted residual variance per reference point.

    per_point: sigma2_i = (sum_j p_ij ||s_j - rbar_i||^2 / nu_i) / d + post_var_i,
    with points of zero mass keeping their previous value.
    scalar: a single shared value from the total mass, every entry equal.
    Output is floored at SIGMA2_FLOOR.
    """
    s = target.points
    r_bar = deformed_ref.points
    d = s.shape[1]
    sq = (
        np.sum(r_bar**2, axis=1)[:, None]
        + np.sum(s**2, axis=1)[None, :]
        - 2.0 * r_bar @ s.T
    )
    np.maximum(sq, 0.0, out=sq)
    residual2 = np.sum(p * sq, axis=1)

    if mode == "scalar":
        total_nu = float(np.sum(nu))
        if total_nu <= 0.0:
            raise NoMassError("responsibility matrix carries no mass")
        value = (float(np.sum(residual2)) + d * float(np.sum(nu * post_var))) / (
            d * total_nu
        )
        return np.full(nu.shape[0], max(value, SIGMA2_FLOOR))

    if not np.any(nu > 0.0):
        raise NoMassError("responsibility matrix carries no mass")
    out = np.empty(nu.shape[0])
    live = nu > 0.0
    out[live] = residual2[live] / (d * nu[live]) + post_var[live]
    if prev_sigma2 is None:
        out[~live] = SIGMA2_FLOOR
    else:
        out[~live] = prev_sigma2[~live]
    return np.maximum(out, SIGMA2_FLOOR)


def register(
    reference: PointSet,
    target: PointSet,
    kernel: KernelSpec,
    cfg: RegistrationConfig,
) -> RegistrationResult:
    """Fit the reference to the target; see RegistrationConfig for knobs.

    The run is declared failed only when the very first iteration produces
    no deformation at all (empty inlier set or an exactly zero posterior
    mean).  A correspondence collapse in a later iteration also sets failed
    but is tagged failure_reason="mid_run_collapse".
    """
    validate_config(cfg)
    if reference.dim != target.dim:
        raise ValueError("reference and target dimensions differ")

    gram = assemble_gram(kernel, reference, cfg.jitter)
    jitter = gram.jitter
    sigma2_init = (
        cfg.sigma2_init if cfg.sigma2_init is not None else default_sigma2_init(reference)
    )

    ref_pts = reference.points
    n_r = reference.n
    r_bar = reference
    sigma2 = np.full(n_r, float(sigma2_init))
    post_var = np.zeros(n_r)

    state = None
    posterior = None
    trace: list = []
    prev_mean_disp: Optional[float] = None
    converged = False
    failed = False
    failure_reason = None
    iters = 0

    for it in range(1, cfg.max_iters + 1):
        iters = it
        t0 = time.perf_counter()
        try:
            if cfg.correspondence_mode == "closest_point":
                state, ann = closest_point_correspondence(
                    target, r_bar, float(np.mean(sigma2))
                )
            else:
                state, ann = get_correspondences(
                    ResponsibilityInputs(
                        target=target,
                        deformed_ref=r_bar,
                        sigma2=sigma2,
                        post_var=np.maximum(post_var, 0.0),
                        omega=cfg.omega,
                    ),
                    cfg.p_min,
                    cfg.threshold_mode,
                )
        except AllMissingError as exc:
            failed = True
            failure_reason = "first_iteration" if it == 1 else "mid_run_collapse"
            logger.warning("iter=%d correspondence collapse: %s", it, exc)
            break

        try:
            posterior = gpr_posterior(
                gram, state.inliers, ann.delta_hat, ann.sigma2_eff, jitter
            )
        except NumericalError as exc:
            raise NumericalError(f"iteration {it}: {exc}") from exc

        r_bar = reference.with_points(ref_pts + posterior.mu)
        post_var = posterior.var_diag
        sigma2 = update_sigma2(
            state.P,
            state.nu,
            target,
            r_bar,
            np.maximum(post_var, 0.0),
            cfg.variance_mode,
            prev_sigma2=sigma2,
        )

        mean_disp = float(np.mean(np.linalg.norm(posterior.mu, axis=1)))
        if it == 1 and mean_disp == 0.0:
            failed = True
            failure_reason = "first_iteration"
            break

        change = mean_disp if prev_mean_disp is None else abs(mean_disp - prev_mean_disp)
        trace.append(
            IterationRecord(
                iteration=it,
                mean_disp_change=change,
                n_inliers=int(state.inliers.size),
                n_missing=int(state.missing.size),
                mean_sigma2=float(np.mean(sigma2)),
                elapsed_s=time.perf_counter() - t0,
            )
        )
        logger.info(
            "iter=%d mean_disp_change=%.6e n_inliers=%d n_missing=%d "
            "mean_sigma2=%.6e elapsed_s=%.4f",
            it,
            change,
            int(state.inliers.size),
            int(state.missing.size),
            float(np.mean(sigma2)),
            trace[-1].elapsed_s,
        )

        if prev_mean_disp is not None:
            rel = abs(mean_disp - prev_mean_disp) / max(prev_mean_disp, 1e-30)
            if rel < cfg.rel_tol:
                converged = True
                break
        prev_mean_disp = mean_disp

    return RegistrationResult(
        deformed_reference=r_bar,
        state=state,
        posterior=posterior,
        sigma2=sigma2,
        iters=iters,
        converged=converged,
        failed=failed,
        failure_reason=failure_reason,
        trace=tuple(trace),
    )


__all__ = ["VARIANTS", "variant_config", "update_sigma2", "register", "SIGMA2_FLOOR"]
