"""Command-line front end.

Exit codes: 0 pass, 1 assertion failure, 2 input error, 3 numerical
non-convergence. Outputs are written atomically (temporary file + rename)
and are byte-identical for identical inputs and seeds.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field as dc_field
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_FAIL, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3

CSV_DOCS = {
    "flow": "step, t, cs, rate (2 int |P(F^H)|^2), rate_full (2 int |F^H|^2), curvature_sup, discard, defect",
    "reduce": "seed, kind, full_sup, reduced_sup, ratio_min, ratio_max, expected_ratio, orphan, full_zero, reduced_zero",
    "moduli": "beta, distance (conjugacy distance of tau_B to beta = 0), expected (|exp(i beta) - 1|), error",
}

DEFAULT_TOLERANCES = {
    "identity": 1e-12,
    "residual": 1e-8,
    "admissibility": 1e-9,
    "roundtrip": 1e-8,
    "moduli": 1e-6,
    "flow_defect": 1e-6,
}


class InputError(Exception):
    pass


class NumericalError(Exception):
    pass


@dataclass
class RunConfig:
    seed: int | None = None
    grid: list = dc_field(default_factory=lambda: [6] * 6)
    time_grid: int = 8
    bandwidth: int = 1
    rank: int = 2
    samples: int = 200
    steps: int = 200
    count: int = 20
    betas: int = 12
    amplitude: float = 0.1
    jobs: int = 1
    suite: str = "all"
    out: str = "g2lab-out"
    tolerances: dict = dc_field(default_factory=lambda: dict(DEFAULT_TOLERANCES))

    def validate(self):
        if any(int(N) < 2 * self.bandwidth + 1 for N in self.grid) or self.time_grid < 1:
            raise InputError(f"grid {self.grid} cannot resolve bandwidth {self.bandwidth}")
        if self.rank < 1:
            raise InputError("rank must be positive")
        return self


def load_config(args) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(data, dict):
            raise InputError("config must be a JSON object")
        for k, v in data.items():
            if not hasattr(cfg, k):
                raise InputError(f"unknown config key {k!r}")
            if k == "tolerances":
                cfg.tolerances.update(v)
            else:
                setattr(cfg, k, v)
    for k in ("seed", "grid", "bandwidth", "rank", "samples", "steps", "count", "betas", "amplitude", "jobs", "out"):
        v = getattr(args, k, None)
        if v is not None:
            setattr(cfg, k, v)
    return cfg.validate()


def require_seed(cfg: RunConfig):
    if cfg.seed is None:
        raise InputError("--seed is required for randomized suites")
    return np.random.default_rng(cfg.seed)


def atomic_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path: Path, obj):
    from .lattice import dumps_json

    atomic_write(path, dumps_json(_plain(obj)) + "\n")


def write_csv(path: Path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([f"{x:.12e}" if isinstance(x, float) else x for x in r])
    atomic_write(path, buf.getvalue())


def _plain(o):
    if isinstance(o, dict):
        return {str(k): _plain(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_plain(v) for v in o]
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, complex):
        return {"re": o.real, "im": o.imag}
    if isinstance(o, np.ndarray):
        return _plain(o.tolist())
    return o


def _read_json(path: str, what: str):
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot parse {what} {path}: {exc}") from exc


# --------------------------------------------------------------------------
# identities
# --------------------------------------------------------------------------

# 0-based form axes of the product structures (1-based labels on the left)
INDEX_MAP = {
    "R^7 = R^6 x R": {**{f"e{i + 1}": i for i in range(6)}, "e7 = dt": 6},
    "R^8 = R x R^7": {"e0 = dt": 0, **{f"e{i + 1}": i + 1 for i in range(7)}},
}

IDENTITY_NAMES = (
    "star_star",
    "phi_contraction",
    "cayley_self_dual",
    "J_ReOmega",
    "star_ReOmega",
    "cayley_redundancy",
    "phi_norm",
    "cayley_norm",
    "g2_reduction_map",
    "spin7_reduction_map",
)


def identity_suite(rng, samples: int, fault: str | None = None) -> dict:
    """Maximum residual of each fiber identity over ``samples`` random inputs."""
    from .exterior import AlgebraicForm, FiberMetric, hodge_star, inner_norm, wedge, basis
    from .structures import (
        check_cayley_redundancy,
        check_g2_identities,
        cayley_euclidean,
        g2_reduction_map,
        phi_euclidean,
        spin7_reduction_map,
    )

    flip = lambda name: -1.0 if fault == name else 1.0
    res = {k: 0.0 for k in IDENTITY_NAMES}
    phi, Psi = phi_euclidean(), cayley_euclidean()
    g7, g8 = FiberMetric.euclidean(7), FiberMetric.euclidean(8)
    for _ in range(samples):
        n = int(rng.choice([6, 7, 8]))
        k = int(rng.integers(0, n + 1))
        a = AlgebraicForm.from_array(n, k, rng.normal(size=len(basis(n, k))))
        g = FiberMetric.euclidean(n)
        ss = hodge_star(hodge_star(a, g), g) * flip("star_star")
        res["star_star"] = max(res["star_star"], (ss - (-1) ** (k * (n - k)) * a).max_abs())
        th = AlgebraicForm.from_array(7, 2, rng.normal(size=21))
        ci = check_cayley_redundancy(th)
        res["phi_contraction"] = max(res["phi_contraction"], ci["identity"] if fault != "phi_contraction" else 2.0 * th.max_abs())
        res["cayley_redundancy"] = max(res["cayley_redundancy"], ci["redundancy"] if fault != "cayley_redundancy" else 1.0)
        F = AlgebraicForm.from_array(6, 2, rng.normal(size=15))
        gi = check_g2_identities(F)
        jr = gi["J(F-|ReOmega) - F-|ImOmega"]
        res["J_ReOmega"] = max(res["J_ReOmega"], jr if fault != "J_ReOmega" else 2.0 * F.max_abs())
        res["star_ReOmega"] = max(res["star_ReOmega"], gi["*ReOmega - ImOmega"] if fault != "star_ReOmega" else 2.0)
    res["cayley_self_dual"] = (hodge_star(Psi, g8) - flip("cayley_self_dual") * Psi).max_abs()
    res["phi_norm"] = abs(inner_norm(phi, g7) * flip("phi_norm") - 7.0)
    res["cayley_norm"] = abs(inner_norm(Psi, g8) * flip("cayley_norm") - 14.0)
    M, r1 = g2_reduction_map()
    L, r2 = spin7_reduction_map()
    res["g2_reduction_map"] = max(r1, float(np.abs(np.linalg.svd(M, compute_uv=False) - flip("g2_reduction_map")).max()))
    res["spin7_reduction_map"] = max(r2, float(np.abs(np.linalg.svd(L, compute_uv=False) - 2.0 * flip("spin7_reduction_map")).max()))
    return res


def cmd_identities(cfg: RunConfig, args) -> int:
    rng = np.random.default_rng(0 if cfg.seed is None else cfg.seed)
    fault = getattr(args, "inject_fault", None)
    if fault is not None and fault not in IDENTITY_NAMES:
        raise InputError(f"unknown identity {fault!r}; choose from {', '.join(IDENTITY_NAMES)}")
    res = identity_suite(rng, cfg.samples, fault)
    tol = cfg.tolerances["identity"]
    failures = [k for k, v in res.items() if not v < tol]
    from .exterior import inner_norm, FiberMetric
    from .structures import phi_euclidean

    report = {
        "samples": cfg.samples,
        "seed": cfg.seed,
        "tolerance": tol,
        "residuals": res,
        "phi_norm_squared": inner_norm(phi_euclidean(), FiberMetric.euclidean(7)),
        "failures": failures,
        "index_map": INDEX_MAP,
    }
    write_json(Path(cfg.out) / "identities.json", report)
    for k in IDENTITY_NAMES:
        print(f"{'PASS' if k not in failures else 'FAIL'} {k} {res[k]:.3e}")
    if failures:
        print("failing identities: " + ", ".join(failures), file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


# --------------------------------------------------------------------------
# build / decompose
# --------------------------------------------------------------------------

def parse_endpoint(spec: str, m: int) -> np.ndarray:
    """``central:BETA``, ``diag:B1,B2,...`` (angles), ``identity`` or a JSON ``{"re": .., "im": ..}`` matrix."""
    spec = spec.strip()
    try:
        if spec == "identity":
            return np.eye(m, dtype=complex)
        if spec.startswith("central:"):
            return np.exp(1j * _angle(spec[8:])) * np.eye(m)
        if spec.startswith("diag:"):
            ang = [_angle(x) for x in spec[5:].split(",")]
            if len(ang) != m:
                raise InputError(f"endpoint needs {m} angles")
            return np.diag(np.exp(1j * np.array(ang)))
        d = json.loads(Path(spec).read_text()) if os.path.exists(spec) else json.loads(spec)
        M = np.array(d["re"], float) + 1j * np.array(d["im"], float)
    except InputError:
        raise
    except (ValueError, KeyError, TypeError, OSError) as exc:
        raise InputError(f"cannot parse endpoint {spec!r}: {exc}") from exc
    if M.shape != (m, m):
        raise InputError(f"endpoint must be {m} x {m}")
    return M


def _angle(s: str) -> float:
    s = s.strip().replace("pi", str(np.pi))
    allowed = set("0123456789.+-*/e ()")
    if not s or set(s) - allowed:
        raise InputError(f"bad angle {s!r}")
    return float(eval(s, {"__builtins__": {}}, {}))  # arithmetic only


def load_connection(path: str):
    from .lattice import Connection, LatticeError

    d = _read_json(path, "connection file")
    try:
        return Connection.from_json(d)
    except (LatticeError, KeyError, TypeError, ValueError) as exc:
        raise InputError(f"malformed connection file {path}: {exc}") from exc


def cmd_build(cfg: RunConfig, args) -> int:
    from .chernsimons import theorem_I_roundtrip
    from .isotrivial import IsotrivialError, admissible_gauge, assemble_isotrivial
    from ._linalg import MatrixError

    B = load_connection(args.B)
    a = parse_endpoint(args.endpoint, B.rank)
    rep = theorem_I_roundtrip(B, a, tol=cfg.tolerances["roundtrip"])
    out = Path(cfg.out)
    write_json(out / "build_report.json", rep.to_json())
    if rep.stage not in ("precondition", "admissible_gauge"):
        try:
            path = admissible_gauge(B, a)
            ic = assemble_isotrivial(path, B, check=False)
        except (IsotrivialError, MatrixError) as exc:
            print(f"numerical failure: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
        write_json(out / "instanton.json", ic.to_json())
        write_json(out / "admissibility.json", path.record.to_json())
    print(f"{'PASS' if rep.passed else 'FAIL'} stage={rep.stage}")
    if rep.passed:
        return EXIT_OK
    if rep.stage == "admissible_gauge" and "error" in rep.details:
        return EXIT_NUMERIC
    return EXIT_FAIL


def cmd_decompose(cfg: RunConfig, args) -> int:
    from .isotrivial import IsotrivialConnection, IsotrivialError, decompose_instanton
    from .lattice import Connection, LatticeError

    d = _read_json(args.input, "instanton file")
    try:
        if d.get("kind") == "isotrivial":
            fam = IsotrivialConnection.from_json(d)
        else:
            fam = Connection.from_json(d)
            if fam.lattice.time_axis is None:
                raise InputError("connection has no time axis")
    except (IsotrivialError, LatticeError, KeyError, TypeError, ValueError) as exc:
        raise InputError(f"malformed instanton file {args.input}: {exc}") from exc
    res = decompose_instanton(fam, tol=cfg.tolerances.get("decompose", 1e-6))
    out = Path(cfg.out)
    doc = {"success": res.success, "message": res.message, "residuals": res.residuals}
    if res.success:
        doc["B"] = res.B.to_json()
        doc["path"] = res.path.to_json()
    write_json(out / "decomposition.json", doc)
    worst = max(res.residuals.values(), default=0.0)
    print(f"{'PASS' if res.success else 'FAIL'} max residual {worst:.3e} {res.message}".rstrip())
    if res.success:
        return EXIT_OK
    if "precondition" in res.message:
        return EXIT_FAIL
    return EXIT_NUMERIC


# --------------------------------------------------------------------------
# flow
# --------------------------------------------------------------------------

def cmd_flow(cfg: RunConfig, args) -> int:
    from .chernsimons import CSContext, flow
    from .lattice import Connection, TorusLattice, random_field
    from .structures import standard_su3, G2Structure

    if args.start:
        start = load_connection(args.start)
    else:
        rng = require_seed(cfg)
        lat = TorusLattice(tuple(cfg.grid))
        a = random_field(rng, lat, 1, cfg.rank, cfg.bandwidth, 4, None, cfg.amplitude, "antihermitian")
        start = Connection(a, check=False)
    n = start.lattice.n
    if n == 6:
        H = standard_su3().re_Omega
    elif n == 7:
        H = G2Structure.euclidean().psi
    else:
        raise InputError("flow needs a 6- or 7-dimensional torus")
    ctx = CSContext(Connection.trivial(start.lattice, start.rank), H)
    from .lattice import curvature

    flat = curvature(start, check_grid=False).sup_norm() < 1e-12
    steps = 0 if flat else cfg.steps
    res = flow(start, ctx, steps=steps, bandwidth=cfg.bandwidth if not args.start else None)
    out = Path(cfg.out)
    atomic_write(out / "flow.csv", res.to_csv())
    summary = {
        "steps": steps,
        "monotone": res.monotone,
        "stable": res.stable,
        "max_defect": res.max_defect,
        "cs_first": float(res.cs[0]),
        "cs_last": float(res.cs[-1]),
        "max_discard": float(res.discard.max()),
    }
    write_json(out / "flow_summary.json", summary)
    print(f"steps={steps} monotone={res.monotone} max_defect={res.max_defect:.3e}")
    if not res.stable:
        return EXIT_NUMERIC
    if not res.monotone or res.max_defect > cfg.tolerances["flow_defect"]:
        return EXIT_FAIL
    return EXIT_OK


# --------------------------------------------------------------------------
# reduce
# --------------------------------------------------------------------------

def _reduce_case(args):
    seed, grid, time_grid, rank, bandwidth, amplitude, spin7 = args
    from .chernsimons import reduction_ratio
    from .lattice import TorusLattice, random_connection

    rng = np.random.default_rng(seed)
    if spin7:
        lat = TorusLattice((time_grid,) + tuple(grid), 0)
    else:
        lat = TorusLattice(tuple(grid) + (time_grid,), len(grid))
    active = sorted(rng.choice(lat.n, size=min(3, lat.n), replace=False).tolist())
    if lat.time_axis not in active:
        active[0] = lat.time_axis
    A = random_connection(rng, lat, rank, bandwidth, 3, None, amplitude, sorted(set(active)))
    r = reduction_ratio(A)
    return seed, r


def cmd_reduce(cfg: RunConfig, args) -> int:
    require_seed(cfg)
    spin7 = bool(args.spin7)
    grid = [4] * 7 if spin7 and args.grid is None else cfg.grid
    if spin7 and len(grid) != 7 or not spin7 and len(grid) != 6:
        raise InputError("reduce needs a 6-torus (G2) or a 7-torus (--spin7)")
    jobs = [(cfg.seed + i, tuple(grid), cfg.time_grid, cfg.rank, cfg.bandwidth, cfg.amplitude, spin7) for i in range(cfg.count)]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(cfg.jobs) as ex:
            results = list(ex.map(_reduce_case, jobs))
    else:
        results = [_reduce_case(j) for j in jobs]
    expected = 2.0 if spin7 else 1.0
    rows, bad = [], 0
    for seed, r in results:
        ok = (np.isnan(r["ratio_min"]) or abs(r["ratio_min"] - expected) < 1e-8 and abs(r["ratio_max"] - expected) < 1e-8) and r["orphan"] < 1e-8
        bad += not ok
        rows.append([seed, "spin7" if spin7 else "g2", r["full_sup"], r["reduced_sup"], r["ratio_min"], r["ratio_max"], expected,
                     r["orphan"], int(r["full_sup"] < 1e-12), int(r["reduced_sup"] < 1e-12)])
    write_csv(Path(cfg.out) / "reduce.csv", [c.strip() for c in CSV_DOCS["reduce"].split(",")], rows)
    print(f"{len(rows) - bad}/{len(rows)} cases agree")
    return EXIT_OK if bad == 0 else EXIT_FAIL


# --------------------------------------------------------------------------
# moduli
# --------------------------------------------------------------------------

def cmd_moduli(cfg: RunConfig, args) -> int:
    from .gauge import conjugacy_distance, stabilizer
    from .isotrivial import admissible_gauge, IsotrivialError
    from .lattice import TorusLattice, random_connection

    rng = require_seed(cfg)
    if args.B:
        B = load_connection(args.B)
    else:
        lat = TorusLattice(tuple(cfg.grid))
        B = random_connection(rng, lat, cfg.rank, cfg.bandwidth, 3, None, 0.5, active_axes=(0, 1))
    G = stabilizer(B)
    if not G.irreducible():
        print(f"B is reducible (stabilizer dimension {G.complex_dim})", file=sys.stderr)
        return EXIT_FAIL
    betas = np.linspace(0.0, 2 * np.pi, cfg.betas, endpoint=False)
    taus = []
    try:
        for b in betas:
            p = admissible_gauge(B, np.exp(1j * b) * np.eye(B.rank))
            taus.append(p.endpoint())
    except IsotrivialError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    rows, worst = [], 0.0
    for b, t in zip(betas, taus):
        d = conjugacy_distance(taus[0], t, G).value
        e = abs(np.exp(1j * b) - 1.0)
        worst = max(worst, abs(d - e))
        rows.append([float(b), float(d), float(e), float(abs(d - e))])
    write_csv(Path(cfg.out) / "moduli.csv", ["beta", "distance", "expected", "error"], rows)
    print(f"max |distance - expected| = {worst:.3e}")
    return EXIT_OK if worst < cfg.tolerances["moduli"] else EXIT_FAIL


# --------------------------------------------------------------------------
# report
# --------------------------------------------------------------------------

def cmd_report(cfg: RunConfig, args) -> int:
    root = Path(args.dir or cfg.out)
    if not root.is_dir():
        raise InputError(f"no output directory {root}")
    summary = {}
    for p in sorted(root.glob("*.json")):
        if p.name == "summary.json":
            continue
        summary[p.name] = _read_json(str(p), "report")
    for p in sorted(root.glob("*.csv")):
        with open(p, newline="") as fh:
            summary[p.name] = {"rows": max(sum(1 for _ in fh) - 1, 0)}
    write_json(root / "summary.json", summary)
    for k in summary:
        print(k)
    return EXIT_OK


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="g2lab",
        description="Gauge fields on flat tori: identities, iso-trivial instantons, reductions and flows.",
        epilog="Exit codes: 0 pass, 1 assertion failure, 2 input error, 3 numerical non-convergence.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON run configuration (flags override it)")
        sp.add_argument("--seed", type=int, help="random seed (required for randomized suites)")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--grid", type=int, nargs="+", help="spatial grid sizes")
        sp.add_argument("--bandwidth", type=int)
        sp.add_argument("--rank", type=int)
        sp.add_argument("--jobs", type=int, help="worker processes for independent cases")
        return sp

    s = common(sub.add_parser("identities", help="fiber identity suite"))
    s.add_argument("--samples", type=int)
    s.add_argument("--inject-fault", "--debug", dest="inject_fault", metavar="IDENTITY",
                   help="flip a sign inside the named identity (self-test of the failure path)")

    s = common(sub.add_parser("build", help="admissible gauge, iso-trivial instanton and round trip"))
    s.add_argument("--B", required=True, help="connection file (JSON)")
    s.add_argument("--endpoint", default="identity", help="identity | central:BETA | diag:B1,B2,... | JSON matrix")

    s = common(sub.add_parser("decompose", help="recover (B, u) from an instanton file"))
    s.add_argument("--input", required=True)

    s = common(sub.add_parser("flow", help="Chern-Simons gradient flow", epilog="flow.csv columns: " + CSV_DOCS["flow"]))
    s.add_argument("--start", help="starting connection file; random when omitted")
    s.add_argument("--steps", type=int)
    s.add_argument("--amplitude", type=float)

    s = common(sub.add_parser("reduce", help="full versus reduced instanton residuals",
                              epilog="reduce.csv columns: " + CSV_DOCS["reduce"]))
    s.add_argument("--count", type=int)
    s.add_argument("--amplitude", type=float)
    s.add_argument("--spin7", action="store_true", help="Spin(7) on T^7 x S^1 instead of G2 on T^6 x S^1")

    s = common(sub.add_parser("moduli", help="beta sweep of central endpoints", epilog="moduli.csv columns: " + CSV_DOCS["moduli"]))
    s.add_argument("--B", help="connection file; random irreducible when omitted")
    s.add_argument("--betas", type=int)

    s = common(sub.add_parser("report", help="collect JSON/CSV outputs into summary.json"))
    s.add_argument("--dir", help="directory to summarize (defaults to --out)")
    return p


COMMANDS = {
    "identities": cmd_identities,
    "build": cmd_build,
    "decompose": cmd_decompose,
    "flow": cmd_flow,
    "reduce": cmd_reduce,
    "moduli": cmd_moduli,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        cfg = load_config(args)
        return COMMANDS[args.command](cfg, args)
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
