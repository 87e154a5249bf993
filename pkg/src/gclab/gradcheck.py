"""Finite-difference verification suites for every analytic gradient in the
package.  Shared by the test suite and the `gclab gradcheck` subcommand."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoders import encode, encode_backward, init_encoder
from .npn import alpha_jacobians, init_npn, npn_forward, npn_grad
from .numerics import Rng, finite_diff_grad, grad_rel_error
from .objective import GclConfig, gcl_grad_exact, gcl_value, unified_grad, unified_value

TOL = 1e-6


@dataclass
class CheckResult:
    name: str
    rel_err: float

    @property
    def ok(self) -> bool:
        return self.rel_err <= TOL


def random_unit_rows(rng: Rng, n: int, d: int) -> np.ndarray:
    X = rng.normal(size=(n, d))
    return X / np.sqrt(np.sum(X * X, axis=1))[:, None]


def _random_cfg(rng: Rng) -> GclConfig:
    return GclConfig(tau=rng.uniform(0.2, 1.5), tau_min=0.01,
                     eps=rng.uniform(0.0, 0.2), rho=rng.uniform(0.0, 2.0))


def _pack(E1, E2, tau):
    return np.concatenate([E1.ravel(), E2.ravel(), [tau]])


def _unpack(theta, n, d):
    E1 = theta[:n * d].reshape(n, d)
    E2 = theta[n * d:2 * n * d].reshape(n, d)
    return E1, E2, float(theta[-1])


def check_objective(n_seeds: int = 20, n: int = 8, d: int = 4) -> list[CheckResult]:
    out = []
    worst_gcl = 0.0
    worst_uni = 0.0
    worst_flow = 0.0
    for seed in range(n_seeds):
        rng = Rng(1000 + seed)
        cfg = _random_cfg(rng)
        E1 = random_unit_rows(rng, n, d)
        E2 = random_unit_rows(rng, n, d)

        def f_gcl(theta):
            A, B, tau = _unpack(theta, n, d)
            c = GclConfig(tau=tau, tau_min=cfg.tau_min, eps=cfg.eps, rho=cfg.rho)
            return gcl_value(A, B, c).total

        dE1, dE2, dtau = gcl_grad_exact(E1, E2, cfg)
        num = finite_diff_grad(f_gcl, _pack(E1, E2, cfg.tau))
        worst_gcl = max(worst_gcl, grad_rel_error(_pack(dE1, dE2, dtau), num))

        alpha1 = rng.normal(size=n) * 0.7
        alpha2 = rng.normal(size=n) * 0.7

        def f_uni(theta):
            A, B, tau = _unpack(theta[:2 * n * d + 1], n, d)
            a1 = theta[2 * n * d + 1:2 * n * d + 1 + n]
            a2 = theta[2 * n * d + 1 + n:]
            c = GclConfig(tau=tau, tau_min=cfg.tau_min, eps=cfg.eps, rho=cfg.rho)
            return unified_value(A, B, a1, a2, c)

        dE1, dE2, dtau, da1, da2 = unified_grad(E1, E2, alpha1, alpha2, cfg)
        theta0 = np.concatenate([_pack(E1, E2, cfg.tau), alpha1, alpha2])
        num = finite_diff_grad(f_uni, theta0)
        ana = np.concatenate([_pack(dE1, dE2, dtau), da1, da2])
        worst_uni = max(worst_uni, grad_rel_error(ana, num))

        # flow-through mode: alphas are the prototype predictor's outputs
        npn = init_npn("prototype", rng, dim=d, m=5)

        def f_flow(theta):
            A, B, tau = _unpack(theta, n, d)
            c = GclConfig(tau=tau, tau_min=cfg.tau_min, eps=cfg.eps, rho=cfg.rho)
            a1, a2 = npn_forward(npn, A, B, c)
            return unified_value(A, B, a1, a2, c)

        a1, a2 = npn_forward(npn, E1, E2, cfg)
        jac = alpha_jacobians(npn, E1, E2, cfg)
        dE1, dE2, dtau, _, _ = unified_grad(E1, E2, a1, a2, cfg,
                                            flow_through_alpha=True,
                                            alpha_jacobians=jac)
        num = finite_diff_grad(f_flow, _pack(E1, E2, cfg.tau))
        worst_flow = max(worst_flow, grad_rel_error(_pack(dE1, dE2, dtau), num))
    out.append(CheckResult("objective/gcl_grad_exact", worst_gcl))
    out.append(CheckResult("objective/unified_grad[detached]", worst_uni))
    out.append(CheckResult("objective/unified_grad[flow-through]", worst_flow))
    return out


def check_npn(n_seeds: int = 20, n: int = 8, d: int = 4, m: int = 4) -> list[CheckResult]:
    out = []
    for arch in ("prototype", "mlp"):
        for objective in ("unified", "separate"):
            worst = 0.0
            for seed in range(n_seeds):
                rng = Rng(2000 + seed)
                cfg = _random_cfg(rng)
                E1 = random_unit_rows(rng, n, d)
                E2 = random_unit_rows(rng, n, d)
                params = init_npn(arch, rng, dim=d, m=m, hidden=6)
                if arch == "prototype":
                    # non-trivial column norms exercise the cosine Jacobian
                    params.blocks["W1"] *= rng.uniform(0.5, 2.0, size=(1, m))
                    params.blocks["W2"] *= rng.uniform(0.5, 2.0, size=(1, m))
                targets = (rng.normal(size=n), rng.normal(size=n))
                names = list(params.blocks)
                sizes = [params.blocks[k].size for k in names]
                shapes = [params.blocks[k].shape for k in names]

                def f(theta):
                    off = 0
                    for name, size, shape in zip(names, sizes, shapes):
                        params.blocks[name] = theta[off:off + size].reshape(shape)
                        off += size
                    a1, a2 = npn_forward(params, E1, E2, cfg)
                    if objective == "unified":
                        return unified_value(E1, E2, a1, a2, cfg)
                    t1, t2 = targets
                    return float(np.sum((a1 - t1) ** 2 + (a2 - t2) ** 2)) / (2 * n)

                theta0 = np.concatenate([params.blocks[k].ravel() for k in names])
                grads = npn_grad(params, E1, E2, cfg, objective=objective,
                                 targets=targets if objective == "separate" else None)
                ana = np.concatenate([grads[k].ravel() for k in names])
                num = finite_diff_grad(f, theta0.copy())
                worst = max(worst, grad_rel_error(ana, num))
            out.append(CheckResult(f"npn/{arch}[{objective}]", worst))
    return out


def check_encoders(n_seeds: int = 20, n: int = 6, d: int = 3) -> list[CheckResult]:
    out = []
    for kind in ("direct", "linear", "mlp1"):
        worst = 0.0
        for seed in range(n_seeds):
            rng = Rng(3000 + seed)
            cfg = _random_cfg(rng)
            params = init_encoder(kind, rng, dim=d, n=n, d_raw_image=5,
                                  d_raw_text=4, hidden=4)
            raw1 = rng.normal(size=(n, 5))
            raw2 = rng.normal(size=(n, 4))
            idx = np.arange(n)
            names = list(params.blocks)
            sizes = [params.blocks[k].size for k in names]
            shapes = [params.blocks[k].shape for k in names]

            def f(theta):
                off = 0
                for name, size, shape in zip(names, sizes, shapes):
                    params.blocks[name] = theta[off:off + size].reshape(shape)
                    off += size
                b = encode(params, raw1, raw2, idx)
                return gcl_value(b.E1, b.E2, cfg).total

            theta0 = np.concatenate([params.blocks[k].ravel() for k in names])
            batch = encode(params, raw1, raw2, idx)
            dE1, dE2, _ = gcl_grad_exact(batch.E1, batch.E2, cfg)
            grads = encode_backward(params, batch, dE1, dE2)
            ana = np.concatenate([grads[k].ravel() for k in names])
            num = finite_diff_grad(f, theta0.copy())
            worst = max(worst, grad_rel_error(ana, num))
        out.append(CheckResult(f"encoders/{kind}", worst))
    return out


def run_gradcheck(module: str = "all", n_seeds: int = 20) -> list[CheckResult]:
    suites = {
        "objective": check_objective,
        "npn": check_npn,
        "encoders": check_encoders,
    }
    if module == "all":
        picked = list(suites.values())
    elif module in suites:
        picked = [suites[module]]
    else:
        raise ValueError(f"unknown gradcheck module {module!r}")
    results = []
    for fn in picked:
        results.extend(fn(n_seeds=n_seeds))
    return results
