"""Command-line harness: configuration, orchestration and CSV/manifest output.

Every subcommand reads an optional ``key = value`` config file, applies
command-line overrides, runs, and writes its CSV files plus a
``manifest.json`` into the output directory. A manifest can be passed back
as ``--config`` to replay the run exactly.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import os
import sys
import tempfile
import time
from dataclasses import dataclass, fields

import numpy as np

from . import __version__
from ._accel import backend_name

EXIT_CONFIG = 2

COMMANDS = ("constants", "determinant", "sample", "coeffs", "verify-expansion", "verify-lln-clt")


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


@dataclass
class ExperimentConfig:
    command: str = "constants"
    N: int = 8
    M: int = 0  # 0 picks the alias-free default 4N+4
    nmax: int = 8
    eps: float = 0.05
    eps_grid: str = "0.4,0.2,0.1,0.05"
    k: int = 1
    n_mc: int = 20000
    n_is: int = 500
    proposal: str = "ais"
    observable: str = "one"
    dt: float = 0.01
    steps: int = 20000
    burnin: int = 2000
    thin: int = 10
    chains: int = 20
    seed: int = 0
    delta: float = 0.3
    eta: float = 0.5
    out: str = "runs"

    @property
    def grid(self):
        return None if self.M == 0 else self.M

    def eps_values(self):
        try:
            vals = [float(x) for x in self.eps_grid.split(",") if x.strip()]
        except ValueError:
            raise ConfigError(f"eps_grid: cannot parse {self.eps_grid!r}") from None
        if not vals or any(not v > 0 for v in vals):
            raise ConfigError("eps_grid: needs positive values")
        return vals

    def validate(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"command: unknown command {self.command!r}")
        checks = [
            ("N", 0 <= self.N <= 4096), ("nmax", 0 <= self.nmax <= 1 << 14),
            ("M", self.M == 0 or self.M >= 4 * self.N + 1), ("eps", self.eps >= 0),
            ("k", 0 <= self.k <= 8), ("n_mc", self.n_mc >= 2), ("n_is", self.n_is >= 2),
            ("dt", self.dt > 0), ("steps", self.steps >= 1), ("burnin", self.burnin >= 0),
            ("thin", self.thin >= 1), ("chains", self.chains >= 1), ("seed", self.seed >= 0),
            ("delta", self.delta > 0), ("eta", self.eta > 0),
            ("proposal", self.proposal in ("free", "wells", "ais")),
            ("observable", self.observable in OBSERVABLES),
        ]
        for name, ok in checks:
            if not ok:
                raise ConfigError(f"{name}: value {getattr(self, name)!r} out of range")
        if self.command in ("sample", "verify-lln-clt") and self.dt * (1 + self.N ** 2) > 2:
            raise ConfigError(f"dt: step {self.dt} unstable at N={self.N}")
        if self.command in ("verify-expansion", "verify-lln-clt"):
            self.eps_values()
        return self


def _observable(name, N):
    from .observable import const, mean_pairing, wickint

    return {
        "one": lambda: const(1.0),
        "mean": lambda: mean_pairing(N),
        "mean2": lambda: mean_pairing(N) ** 2,
        "wick2": lambda: wickint(2),
    }[name]()


OBSERVABLES = ("one", "mean", "mean2", "wick2")


# ---------------------------------------------------------------------------
# config parsing


def _coerce(name, raw):
    kinds = {f.name: f.type for f in fields(ExperimentConfig)}
    kind = kinds[name]
    try:
        if kind in ("int", int):
            return int(raw)
        if kind in ("float", float):
            return float(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"{name}: cannot parse {raw!r}") from None
    return str(raw)


def _known(key):
    key = key.strip().replace("-", "_")
    names = {f.name for f in fields(ExperimentConfig)}
    if key not in names:
        raise ConfigError(f"unknown config key {key!r}")
    return key


def read_config(path):
    """Parse a ``key = value`` file (``#`` comments) or a run manifest."""
    with open(path) as fh:
        text = fh.read()
    if path.endswith(".json"):
        data = json.loads(text)
        items = data.get("config", data).items()
    else:
        items = []
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key = value")
            key, value = line.split("=", 1)
            items.append((key, value.strip()))
    return {(k := _known(key)): _coerce(k, value) for key, value in items}


def build_parser():
    p = argparse.ArgumentParser(prog="phi4expand", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for cmd in COMMANDS:
        sp = sub.add_parser(cmd)
        sp.add_argument("--config", help="key = value file or manifest.json")
        for f in fields(ExperimentConfig):
            if f.name == "command":
                continue
            sp.add_argument("--" + f.name.replace("_", "-"), dest=f.name, default=None)
    return p


def resolve_config(args) -> ExperimentConfig:
    values = read_config(args.config) if args.config else {}
    values.pop("command", None)
    for f in fields(ExperimentConfig):
        raw = getattr(args, f.name, None)
        if f.name != "command" and raw is not None:
            values[f.name] = _coerce(f.name, raw)
    return ExperimentConfig(command=args.command, **values).validate()


# ---------------------------------------------------------------------------
# output


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.17g}"
    return str(x)


def atomic_write(path, data: bytes):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class Run:
    """Collects outputs, seeds and timings for one invocation."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.outputs = {}
        self.seeds = {}
        self.times = {}

    def seed(self, label):
        from .field import derive_seed

        s = derive_seed(self.cfg.seed, label)
        self.seeds[label] = s
        return s

    def write_csv(self, name, header, rows):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(x) for x in r])
        self.write_bytes(name, buf.getvalue().encode())

    def write_bytes(self, name, data):
        atomic_write(os.path.join(self.cfg.out, name), data)
        self.outputs[name] = hashlib.sha256(data).hexdigest()

    def timed(self, label, fn, *a, **kw):
        t0 = time.perf_counter()
        out = fn(*a, **kw)
        self.times[label] = time.perf_counter() - t0
        return out

    def manifest(self):
        return {
            "config": dataclasses.asdict(self.cfg),
            "version": __version__,
            "backend": backend_name(),
            "threads": thread_cap(),
            "seeds": self.seeds,
            "wall_time_s": self.times,
            "outputs": self.outputs,
        }

    def finish(self):
        data = json.dumps(self.manifest(), indent=2, sort_keys=True).encode()
        atomic_write(os.path.join(self.cfg.out, "manifest.json"), data)


def thread_cap():
    raw = os.environ.get("PHI4_THREADS", "")
    try:
        n = int(raw)
    except ValueError:
        return os.cpu_count() or 1
    return max(1, n)


def _apply_thread_cap():
    if "PHI4_THREADS" not in os.environ:
        return
    n = thread_cap()
    try:
        import numba

        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
    except ImportError:
        pass


# ---------------------------------------------------------------------------
# subcommands


def cmd_constants(run: Run):
    from .renorm import wick_constants

    rows = [wick_constants(n) for n in range(run.cfg.nmax + 1)]
    run.write_csv("constants.csv", ["N", "c_N", "c_wN", "d_N"], [(r.N, r.c_N, r.c_wN, r.d_N) for r in rows])


def cmd_determinant(run: Run):
    from .determinant import convergence_table

    rows = convergence_table(range(run.cfg.nmax + 1), run.cfg.eps)
    run.write_csv("determinant.csv", ["N", "log_fredholm", "log_theta", "tail_bound"],
                  [(r.N, r.log_fredholm, r.log_theta, r.tail_bound) for r in rows])


def cmd_sample(run: Run):
    from .field import to_grid, write_snapshot
    from .renorm import wick_constants, wick_means
    from .sampler import ChainConfig, langevin_chain

    c = run.cfg
    if not c.eps > 0:
        raise ConfigError("eps: sampling needs eps > 0")
    cfg = ChainConfig(N=c.N, eps=c.eps, dt=c.dt, n_steps=c.steps, n_burnin=c.burnin, thin=c.thin,
                      seed=run.seed("sample"), M=c.grid, n_chains=c.chains)
    batch = run.timed("sample", langevin_chain, cfg)
    phi = batch.phi()
    grid = to_grid(phi, cfg.grid).values  # (chains, kept, M, M)
    means = wick_means(grid, c.eps * wick_constants(c.N).c_N)
    rows = []
    for ch in range(means.shape[0]):
        for j in range(means.shape[1]):
            rows.append((ch, (j + 1) * c.thin, means[ch, j, 0], means[ch, j, 1]))
    run.write_csv("samples.csv", ["chain", "step", "mean", "wick2"], rows)
    for ch in range(grid.shape[0]):
        path = os.path.join(c.out, f"chain{ch:03d}.phi4")
        write_snapshot(path, grid[ch, -1], c.N)
        with open(path, "rb") as fh:
            run.outputs[os.path.basename(path)] = hashlib.sha256(fh.read()).hexdigest()


def cmd_coeffs(run: Run):
    from .expansion import coefficients_a
    from .field import RngStream

    c = run.cfg
    F = _observable(c.observable, c.N)
    tab = run.timed("coeffs", coefficients_a, F, c.k, c.N, c.n_mc, RngStream(run.seed("coeffs")))
    run.write_csv("coeffs.csv", ["j", "a_j", "stderr", "well_plus", "well_minus"],
                  [(j, tab.a[j], tab.stderr[j], tab.per_well[1][j], tab.per_well[-1][j]) for j in range(c.k + 1)])


def cmd_verify_expansion(run: Run):
    from .expansion import coefficients_a, estimate_integrals, verify_expansion
    from .field import RngStream

    c = run.cfg
    F = _observable(c.observable, c.N)
    grid = sorted(c.eps_values(), reverse=True)
    tab = run.timed("coeffs", coefficients_a, F, c.k, c.N, c.n_mc, RngStream(run.seed("coeffs")))
    est = run.timed("integrals", estimate_integrals, [F], grid, c.N, c.n_is, RngStream(run.seed("integrals")),
                    c.proposal)
    rep = verify_expansion(F, c.k, grid, c.N, c.n_mc, None, coefficients=tab,
                           integrals=(est.values[0], est.stderr[0]))
    run.write_csv("verify_expansion.csv", ["eps", "I", "expansion", "remainder", "I_stderr"],
                  zip(rep.eps, rep.I, rep.expansion, rep.remainder, rep.I_se))
    run.write_csv("verify_expansion_summary.csv", ["k", "slope", "inconclusive", "min_ess"],
                  [(c.k, rep.slope, int(rep.inconclusive), float(est.ess.min()))])


def cmd_verify_lln_clt(run: Run):
    from .expansion import lln_clt_experiment
    from .field import RngStream

    c = run.cfg
    F = _observable(c.observable, c.N)
    chain = dict(dt=c.dt, n_steps=c.steps, n_burnin=c.burnin, thin=c.thin, n_chains=c.chains, M=c.grid)
    rep = run.timed("chains", lln_clt_experiment, F, c.eps_values(), c.N, chain, RngStream(run.seed("lln-clt")),
                    c.delta, c.eta)
    rows = []
    for s in rep.stats:
        rows.append((s.eps, s.occupancy_plus.value, s.occupancy_plus.std_error, s.gibbs_mean.value,
                     s.gibbs_mean.std_error, rep.target, s.far_fraction.value, s.mode_variance[(0, 0)],
                     s.mode_variance[(1, 0)], s.mode_variance[(1, 1)], int(s.flagged)))
    run.write_csv("lln_clt.csv", ["eps", "occupancy_plus", "occupancy_se", "mean_F", "mean_F_se", "target",
                                  "far_mass", "var_00", "var_10", "var_11", "flagged"], rows)


HANDLERS = {
    "constants": cmd_constants,
    "determinant": cmd_determinant,
    "sample": cmd_sample,
    "coeffs": cmd_coeffs,
    "verify-expansion": cmd_verify_expansion,
    "verify-lln-clt": cmd_verify_lln_clt,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        print(f"phi4expand: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    _apply_thread_cap()
    run = Run(cfg)
    try:
        run.timed("total", HANDLERS[cfg.command], run)
    except ConfigError as exc:
        print(f"phi4expand: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    run.finish()
    return 0


if __name__ == "__main__":
    sys.exit(main())
