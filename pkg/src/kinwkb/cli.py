"""Command line front end.

Usage::

    kinwkb SUBCOMMAND [--config PATH] [--set key=value ...] [--out DIR]
                      [--seed N] [--threads N] [--assert]

Every subcommand writes its tables (CSV) and reports (JSON) to ``--out``
together with ``manifest-<subcommand>.json``.  The first line of each CSV is
``# config_hash=<sha256>``; numbers are written with 17 significant digits.

Exit codes: 0 ok, 2 configuration error, 3 numerical failure, 4 oracle
mismatch (``compare --assert``).
"""
from __future__ import annotations

import argparse
import datetime
import json
import logging
import os
import platform
import struct
import sys
from typing import List, Optional, Sequence

import numpy as np

from . import __version__, _backend
from .action import hj_residual, two_point_action
from .bvp import BvpOptions, solve_bvp
from .config import as_array, build_metric, config_hash, load_config
from .errors import ConfigError, KinwkbError, NumericalError, OracleMismatch, UnsupportedVariant
from .geometry import QuadraticNormalMetric
from .hamiltonian_flow import CotangentState, FlowOptions, hamiltonian, integrate_flow
from .kernel import WkbKernel, pde_residual
from .oracle import SdeConfig, exact_flat_kernel, mc_density, simulate_sde
from .trace import curvature_probe, fit_power, local_trace

log = logging.getLogger("kinwkb")

SUBCOMMANDS = ("flow", "bvp", "action", "expand", "kernel", "residual", "mc", "compare", "trace")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_MISMATCH = 0, 2, 3, 4

MC_MAGIC = b"KWMC"
MC_VERSION = 1
_MC_HEADER = struct.Struct("<4sIIQddQ")


# output helpers -------------------------------------------------------------
def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "%.17g" % float(v)


def write_csv(path, header: Sequence[str], rows, chash: str):
    with open(path, "w", newline="\n") as fh:
        fh.write(f"# config_hash={chash}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if np.isfinite(f) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path, payload: dict, chash: str):
    body = dict(config_hash=chash)
    body.update(payload)
    with open(path, "w") as fh:
        json.dump(_jsonable(body), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_samples_binary(path, samples, seed: int):
    """Columnar little-endian float64 dump of SDE endpoints.

    Header: magic ``KWMC``, version (u32), d (u32), n (u64), t, h (f64),
    seed (u64); then the columns x_1..x_d, y_1..y_d, each of n values.
    """
    d = samples.x.shape[1]
    with open(path, "wb") as fh:
        fh.write(_MC_HEADER.pack(MC_MAGIC, MC_VERSION, d, samples.n, samples.t, samples.h, seed))
        for col in np.hstack([samples.x, samples.y]).T:
            fh.write(np.ascontiguousarray(col, dtype="<f8").tobytes())


def read_samples_binary(path):
    """Inverse of :func:`write_samples_binary`; returns (header dict, (n, 2d) array)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, version, d, n, t, h, seed = _MC_HEADER.unpack_from(raw)
    if magic != MC_MAGIC or version != MC_VERSION:
        raise ConfigError(f"{path}: not a version-{MC_VERSION} sample file")
    data = np.frombuffer(raw, dtype="<f8", offset=_MC_HEADER.size)
    if data.size != 2 * d * n:
        raise ConfigError(f"{path}: truncated sample file")
    cols = data.reshape(2 * d, n).T.copy()
    return dict(d=d, n=n, t=t, h=h, seed=seed), cols


# run context ------------------------------------------------------------------
class Run:
    def __init__(self, sub: str, cfg: dict, out: str, threads: int, assert_mode: bool):
        self.sub = sub
        self.cfg = cfg
        self.out = out
        self.threads = threads
        self.assert_mode = assert_mode
        self.hash = config_hash(cfg)
        self.outputs: List[str] = []
        self.report: dict = {}
        self.m = build_metric(cfg)
        self.d = self.m.dim
        sc = cfg["scenario"]
        self.t = float(sc["t"])
        self.h = float(sc["h"])
        self.x0 = as_array(sc["x0"], self.d)
        self.y0 = as_array(sc["y0"], self.d)
        so = cfg["solver"]
        backend = None if so["backend"] == "auto" else so["backend"]
        self.flow_opts = FlowOptions(rtol=so["rtol"], atol=so["atol"], backend=backend)
        self.bvp_opts = BvpOptions(tol=so["tol"], max_iter=so["max_iter"], flow=self.flow_opts)

    def path(self, name: str) -> str:
        return os.path.join(self.out, f"{self.cfg['output']['prefix']}{name}")

    def csv(self, name, header, rows):
        p = self.path(name)
        write_csv(p, header, rows, self.hash)
        self.outputs.append(os.path.basename(p))

    def json(self, name, payload):
        p = self.path(name)
        write_json(p, payload, self.hash)
        self.outputs.append(os.path.basename(p))

    def targets(self) -> List[np.ndarray]:
        pts = self.cfg["scenario"].get("targets")
        if pts:
            return [as_array(p, 2 * self.d) for p in pts]
        xt, yt = WkbKernel(self.m, self.h, self.x0, self.y0).free(self.t)
        return [np.concatenate([xt, yt])]

    def manifest(self, status: str, error: Optional[str] = None):
        versions = {"kinwkb": __version__, "numpy": np.__version__,
                    "python": platform.python_version()}
        try:
            import scipy

            versions["scipy"] = scipy.__version__
        except ImportError:  # pragma: no cover
            pass
        payload = dict(
            subcommand=self.sub,
            status=status,
            error=error,
            seed=self.cfg["oracle"].get("seed"),
            backend=_backend.DEFAULT_BACKEND,
            versions=versions,
            config=self.cfg,
            outputs=self.outputs,
            report=self.report,
            created=datetime.datetime.now(datetime.timezone.utc).isoformat(),
        )
        write_json(self.path(f"manifest-{self.sub}.json"), payload, self.hash)


def _names(d, *prefixes):
    return [f"{p}{i + 1}" for p in prefixes for i in range(d)]


# subcommands ------------------------------------------------------------------
def cmd_flow(run: Run):
    sc = run.cfg["scenario"]
    d = run.d
    q0 = as_array(sc.get("flow_q0", [0.0] * d), d)
    p0 = as_array(sc.get("flow_p0", [0.0] * d), d)
    s0 = CotangentState(run.x0, run.y0, q0, p0)
    fr = integrate_flow(run.m, s0, run.t, run.flow_opts, n_samples=int(sc["n_samples"]))
    rows = []
    for tau, v in zip(fr.times, fr.trajectory):
        H = hamiltonian(run.m, CotangentState.from_vector(v, d))
        rows.append([tau, *v, H])
    run.csv("flow.csv", ["t", *_names(d, "x", "y", "q", "p"), "H"], rows)
    run.report = dict(energy_drift=fr.energy_drift, steps=fr.steps, backend=fr.backend)


def _solution_dict(sol):
    return dict(t=sol.t, x0=sol.x0, y0=sol.y0, x=sol.x, y=sol.y, q0=sol.q0, p0=sol.p0,
                residual=sol.residual, iterations=sol.iterations, J=sol.J, S=sol.S)


def cmd_bvp(run: Run):
    out = []
    for z in run.targets():
        sol = solve_bvp(run.m, run.t, run.x0, run.y0, z[: run.d], z[run.d :], run.bvp_opts)
        out.append(_solution_dict(sol))
    run.json("bvp.json", dict(solutions=out))
    run.report = dict(n=len(out), max_residual=max(s["residual"] for s in out))


def cmd_action(run: Run):
    out = []
    for z in run.targets():
        x, y = z[: run.d], z[run.d :]
        sol = solve_bvp(run.m, run.t, run.x0, run.y0, x, y, run.bvp_opts)
        act = two_point_action(run.m, sol)
        res = hj_residual(run.m, run.t, run.x0, run.y0, x, y, opts=run.bvp_opts, sol=sol)
        out.append(dict(x=x, y=y, S=act.S, grad_z=act.grad_z, grad_z0=act.grad_z0,
                        hess_z=act.hess_z, vanvleck=act.vanvleck, hj_residual=res))
    run.json("action.json", dict(actions=out))
    run.report = dict(n=len(out), max_hj_residual=max(a["hj_residual"] for a in out))


def cmd_expand(run: Run):
    from .wkb_series import compare_tabulated, psi_series, sigma_series

    d = run.d
    sig = sigma_series(d, max_order=1, symbolic=True)
    alpha, psi = psi_series(d, max_order=2, symbolic=True)
    payload = dict(dim=d, sigma=sig.to_json(), psi=psi.to_json(), alpha=str(alpha))
    if isinstance(run.m, QuadraticNormalMetric):
        nsig = sigma_series(run.m, run.y0, 1)
        _, npsi = psi_series(run.m, run.y0, 2)
        payload["model"] = dict(y0=run.y0, sigma=nsig.to_json(), psi=npsi.to_json())
    run.json("expand.json", payload)
    if d == 2:
        diff = compare_tabulated(2)
        run.json("expand-diff.json", diff)
        run.report = dict(fixture_equal={k: v["equal_symbolic"] for k, v in diff["items"].items()})
    run.report["residual_zero"] = bool(sig.residual_is_zero and psi.residual_is_zero)


def _kernels(run: Run):
    mode = run.cfg["kernel"]["mode"]
    order = run.cfg["kernel"]["series_order"]
    kb = ks = None
    if mode in ("bvp", "both"):
        kb = WkbKernel(run.m, run.h, run.x0, run.y0, "bvp", run.bvp_opts)
    if mode in ("series", "both"):
        ks = WkbKernel(run.m, run.h, run.x0, run.y0, "series", run.bvp_opts, series_order=order)
    return kb, ks


def cmd_kernel(run: Run):
    kb, ks = _kernels(run)
    d = run.d
    rows = []
    for z in run.targets():
        x, y = z[:d], z[d:]
        vb = kb.value(run.t, x, y) if kb else None
        vs = ks.value(run.t, x, y) if ks else None
        ref = vb or vs
        rows.append([run.t, *x, *y, vb.u if vb else np.nan, vs.u if vs else np.nan,
                     ref.S, ref.phi])
    run.csv("kernel.csv", ["t", *_names(d, "x", "y"), "u_bvp", "u_series", "S", "phi"], rows)
    run.report = dict(n=len(rows))


def cmd_residual(run: Run):
    mode = run.cfg["kernel"]["mode"]
    mode = "series" if mode == "both" else mode
    d = run.d
    z = run.targets()[0]
    steps = run.cfg["kernel"].get("fd_steps")
    hs = [float(h) for h in run.cfg["scenario"]["h_grid"]]
    rows = []
    for h in hs:
        k = WkbKernel(run.m, h, run.x0, run.y0, mode, run.bvp_opts,
                      series_order=run.cfg["kernel"]["series_order"])
        r = pde_residual(k, run.t, z[:d], z[d:], steps)
        rows.append([h, r.value, r.hj, r.transport, r.diffusion])
    vals = np.array([abs(r[1]) for r in rows])
    slope = float(np.polyfit(np.log(hs), np.log(vals), 1)[0]) if len(hs) > 1 and np.all(vals > 0) \
        else float("nan")
    run.csv("residual.csv", ["h", "residual", "hj", "transport", "diffusion"], rows)
    run.json("residual.json", dict(t=run.t, mode=mode, point=z, slope=slope))
    run.report = dict(slope=slope)


def _sde(run: Run):
    oc = run.cfg["oracle"]
    if oc.get("seed") is None:
        raise ConfigError("oracle.seed (or --seed) is required for stochastic runs")
    so = run.cfg["solver"]["backend"]
    cfg = SdeConfig(n_paths=oc["n_paths"], seed=oc["seed"], n_steps=oc["n_steps"],
                    threads=run.threads, block_size=oc["block_size"],
                    backend=None if so == "auto" else so)
    z0 = np.concatenate([run.x0, run.y0])
    return simulate_sde(run.m, z0, run.t, run.h, cfg)


def _density(run: Run, samples, z):
    oc = run.cfg["oracle"]
    return mc_density(samples, z, oc["bandwidth"], scale=oc["bandwidth_scale"])


def cmd_mc(run: Run):
    samples = _sde(run)
    oc = run.cfg["oracle"]
    d = run.d
    if oc["binary"]:
        p = run.path("mc-samples.bin")
        write_samples_binary(p, samples, oc["seed"])
        run.outputs.append(os.path.basename(p))
    else:
        run.csv("mc-samples.csv", _names(d, "x", "y"), samples.z)
    dens = []
    for z in run.targets():
        est = _density(run, samples, z)
        dens.append(dict(z=z, value=est.value, stderr=est.stderr, method=est.method,
                         bandwidth=est.bandwidth))
    run.json("mc-density.json", dict(t=run.t, h=run.h, n=samples.n, lost=samples.lost,
                                     seed=samples.seed, dt=samples.dt, densities=dens))
    run.report = dict(n=samples.n, lost=samples.lost)


def cmd_compare(run: Run):
    d = run.d
    oc = run.cfg["oracle"]
    kb = WkbKernel(run.m, run.h, run.x0, run.y0, "bvp", run.bvp_opts)
    flat = isinstance(run.m, QuadraticNormalMetric) and not np.any(run.m.tensor)
    use_mc = oc.get("seed") is not None or not flat
    samples = _sde(run) if use_mc else None
    z0 = np.concatenate([run.x0, run.y0])
    rows = []
    failed = 0
    for z in run.targets():
        u = kb.value(run.t, z[:d], z[d:]).u
        if samples is not None:
            est = _density(run, samples, z)
            ref, err, src = est.value, est.stderr, "mc"
            tol = max(oc["n_sigma"] * err, oc["rel_tol"] * abs(ref))
        else:
            ref, err, src = exact_flat_kernel(run.t, run.h, z, z0, d), 0.0, "exact"
            tol = 1e-6 * abs(ref)
        ok = abs(u - ref) <= tol
        failed += not ok
        rows.append([*z, u, ref, err, (u - ref) / ref if ref else np.nan,
                     abs(u - ref) / err if err else np.nan, ok])
    run.csv("compare.csv", [*_names(d, "x", "y"), "u_kernel", "u_oracle", "stderr", "rel_err",
                            "n_sigma", "pass"], rows)
    run.report = dict(oracle=src, failed=failed, n=len(rows))
    if failed and run.assert_mode:
        raise OracleMismatch(f"{failed} of {len(rows)} probes outside tolerance")


def cmd_trace(run: Run):
    kc = run.cfg["kernel"]
    sc = run.cfg["scenario"]
    tg = [float(t) for t in sc["t_grid"]]
    flat = not np.any(run.m.tensor) if isinstance(run.m, QuadraticNormalMetric) else False
    payload = dict(h=run.h, t_grid=tg)
    if flat:
        vol = float(sc.get("vol", sc.get("ell", 2 * np.pi) ** run.d))
        ests = [local_trace(run.m, vol, t, run.h, n_y=kc["n_y"], opts=run.bvp_opts) for t in tg]
        rows = [[e.t, e.value, e.leading, e.value / e.leading, e.quad_error] for e in ests]
        run.csv("trace.csv", ["t", "value", "leading", "ratio", "quad_error"], rows)
        payload["vol"] = vol
    else:
        rep = curvature_probe(run.m, tg, run.h, x_box=kc["x_box"], n_x=kc["n_x"],
                              n_y=min(kc["n_y"], 8), opts=run.bvp_opts)
        ests = rep.estimates
        rows = [[e.t, e.value, e.leading, r, o, ev]
                for e, r, o, ev in zip(ests, rep.ratios, rep.odd, rep.even)]
        run.csv("trace.csv", ["t", "value", "leading", "ratio", "odd", "even"], rows)
        payload.update(curvature_c=rep.c, curvature_beta=rep.beta, R=rep.R,
                       x_box=kc["x_box"])
    if len(tg) > 1:
        _, beta = fit_power(tg, [e.value for e in ests])
        payload["t_exponent"] = beta
    payload["estimates"] = [dict(t=e.t, value=e.value, leading=e.leading,
                                 breakdown=e.breakdown, quad_error=e.quad_error) for e in ests]
    run.json("trace.json", payload)
    run.report = {k: payload[k] for k in payload if k != "estimates"}


COMMANDS = {
    "flow": cmd_flow,
    "bvp": cmd_bvp,
    "action": cmd_action,
    "expand": cmd_expand,
    "kernel": cmd_kernel,
    "residual": cmd_residual,
    "mc": cmd_mc,
    "compare": cmd_compare,
    "trace": cmd_trace,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="kinwkb", description=__doc__.splitlines()[0])
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--config", metavar="PATH", help="TOML run configuration")
    ap.add_argument("--set", dest="overrides", action="append", default=[],
                    metavar="KEY=VALUE", help="override a config entry (repeatable)")
    ap.add_argument("--out", metavar="DIR", help="output directory")
    ap.add_argument("--seed", type=int, help="seed for stochastic runs")
    ap.add_argument("--threads", type=int, default=1, help="worker threads")
    ap.add_argument("--assert", dest="assert_mode", action="store_true",
                    help="compare: exit with status 4 on any probe mismatch")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def run(subcommand: str, config_path: Optional[str] = None, overrides: Sequence[str] = (),
        out: Optional[str] = None, seed: Optional[int] = None, threads: int = 1,
        assert_mode: bool = False) -> int:
    """Execute one subcommand; returns the process exit status."""
    ctx = None
    try:
        overrides = list(overrides)
        if seed is not None:
            overrides.append(f"oracle.seed={int(seed)}")
        if out is not None:
            overrides.append(f"output.dir={json.dumps(out)}")
        if threads < 1:
            raise ConfigError("--threads must be positive")
        cfg = load_config(config_path, overrides)
        out_dir = cfg["output"]["dir"]
        os.makedirs(out_dir, exist_ok=True)
        ctx = Run(subcommand, cfg, out_dir, threads, assert_mode)
        COMMANDS[subcommand](ctx)
        ctx.manifest("ok")
        return EXIT_OK
    except (ConfigError, UnsupportedVariant, ValueError) as exc:
        code, status, err = EXIT_CONFIG, "config-error", exc
    except NumericalError as exc:
        code, status, err = EXIT_NUMERICAL, "numerical-failure", exc
    except OracleMismatch as exc:
        code, status, err = EXIT_MISMATCH, "oracle-mismatch", exc
    except KinwkbError as exc:
        code, status, err = EXIT_NUMERICAL, "error", exc
    msg = f"{type(err).__name__}: {err}"
    print(f"kinwkb {subcommand}: {msg}", file=sys.stderr)
    if ctx is not None:
        ctx.manifest(status, msg)
    return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return run(args.subcommand, args.config, args.overrides, args.out, args.seed, args.threads,
               args.assert_mode)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
