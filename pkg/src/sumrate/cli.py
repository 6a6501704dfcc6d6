"""Command-line front end.

    sumrate solve INSTANCE [--json] [--csv DIR] [--strategy equal|mincount] [--trace] [--complex]
    sumrate sequences INSTANCE [--seed S] [--strategy ...] --out FILE
    sumrate curves {loading,ebn0,fading} [options] --out FILE

Exit codes: 0 ok, 2 unreadable or malformed input, 3 invalid instance,
4 sequence Gram check failed.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import analysis, cdma, fdma, sequences
from .model import InvalidInstanceError, SystemConstants, UserProfile

EXIT_OK, EXIT_PARSE, EXIT_INVALID, EXIT_GRAM = 0, 2, 3, 4
SEED_ENV = "SUMRATE_SEED"
MODES = {"fdma": "bandwidth", "tdma": "duty", "cdma": "codes", "cdma-async": "codes"}


class InstanceParseError(ValueError):
    pass


def fmt(x) -> str:
    """17 significant digits: round-trips any double."""
    return format(float(x), ".17g")


@dataclass
class InstanceFile:
    mode: str
    powers: list
    limits: list
    constants: dict
    delays: Optional[list] = None
    strategy: str = cdma.EQUAL_POWER
    seed: Optional[int] = None

    def fdma_inputs(self):
        kind = MODES[self.mode]
        c = self.constants
        consts = SystemConstants(total_bandwidth=float(c.get("total_bandwidth", 1.0)),
                                 noise_psd=float(c.get("noise_psd", 1.0)))
        return UserProfile(self.powers, self.limits, kind), consts

    def cdma_instance(self) -> cdma.CdmaInstance:
        c = self.constants
        if "N" not in c:
            raise InstanceParseError("cdma constants need N")
        delays = self.delays if self.mode == "cdma-async" else None
        if self.mode == "cdma-async" and delays is None:
            raise InstanceParseError("cdma-async instances need delays")
        return cdma.CdmaInstance(self.powers, self.limits, int(c["N"]),
                                 float(c.get("noise_variance", 1.0)), delays)


def _numbers(value, name, integer=False):
    if not isinstance(value, list) or not value:
        raise InstanceParseError(f"{name} must be a non-empty list")
    for v in value:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise InstanceParseError(f"{name} must hold numbers")
        if integer and not float(v).is_integer():
            raise InstanceParseError(f"{name} must hold integers")
        if not np.isfinite(v):
            raise InstanceParseError(f"{name} must be finite")
    return value


def parse_instance(text: str) -> InstanceFile:
    """Parse and shape-check an instance document (JSON)."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InstanceParseError(f"not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise InstanceParseError("instance must be a JSON object")
    mode = doc.get("mode")
    if mode not in MODES:
        raise InstanceParseError(f"mode must be one of {sorted(MODES)}")
    powers = _numbers(doc.get("powers"), "powers")
    limits_doc = doc.get("limits")
    if not isinstance(limits_doc, dict) or len(limits_doc) != 1:
        raise InstanceParseError("limits must be an object with exactly one kind")
    (kind, limits), = limits_doc.items()
    if kind != MODES[mode]:
        raise InstanceParseError(f"mode {mode} expects {MODES[mode]} limits, got {kind}")
    limits = _numbers(limits, "limits", integer=(kind == "codes"))
    constants = doc.get("constants", {})
    if not isinstance(constants, dict):
        raise InstanceParseError("constants must be an object")
    for key, val in constants.items():
        if isinstance(val, bool) or not isinstance(val, (int, float)) or not np.isfinite(val):
            raise InstanceParseError(f"constant {key} must be a finite number")
    delays = doc.get("delays")
    if delays is not None:
        delays = _numbers(delays, "delays", integer=True)
    strategy = doc.get("strategy", cdma.EQUAL_POWER)
    if strategy not in cdma.STRATEGIES:
        raise InstanceParseError(f"strategy must be one of {cdma.STRATEGIES}")
    seed = doc.get("seed")
    if seed is not None and (isinstance(seed, bool) or not isinstance(seed, int)):
        raise InstanceParseError("seed must be an integer")
    return InstanceFile(mode, powers, limits, constants, delays, strategy, seed)


def load_instance(path) -> InstanceFile:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InstanceParseError(f"cannot read {path}: {exc}") from exc
    return parse_instance(text)


def _write_csv(path: Path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


# ---------- solve ----------

def solve_document(inst: InstanceFile, strategy=None, complex_valued=False, trace=False) -> dict:
    """Run the solver for an instance and return the JSON-ready result."""
    if inst.mode in ("fdma", "tdma"):
        profile, consts = inst.fdma_inputs()
        if inst.mode == "tdma":
            res = fdma.solve_tdma(profile, consts)
            fprofile = UserProfile(profile.powers, profile.limits * consts.total_bandwidth)
            w_eq = res.w_star * consts.total_bandwidth
        elif np.any(profile.powers == 0):
            res = fdma.extend_zero_power(profile, consts)
            fprofile, w_eq = profile, res.w_star
        else:
            res = fdma.allocate_closed_form(profile, consts)
            fprofile, w_eq = profile, res.w_star
        doc = {"mode": inst.mode, **res.to_dict()}
        if inst.mode == "tdma":
            doc["t_star"] = doc.pop("w_star")
        mac = fdma.mac_sum_capacity(profile.powers, consts)
        doc["mac_capacity"] = mac
        doc["capacity_gap"] = mac - res.sum_rate
        active = profile.powers > 0
        sub = UserProfile(fprofile.powers[active], fprofile.limits[active])
        cert = fdma.verify_kkt(sub, consts, w_eq[active])
        doc["kkt_valid"] = cert.valid
        doc["kkt_residuals"] = cert.residuals
        if trace:
            if np.any(~active):
                raise InvalidInstanceError("--trace needs all users active")
            it = fdma.allocate_iterative(fprofile, consts, record=True)
            doc["iterations"] = it.iterations
            doc["trace"] = [[None if np.isnan(v) else v for v in snap.tolist()]
                            for snap in it.trace]
        return doc

    instance = inst.cdma_instance()
    sol = cdma.solve_cdma(instance, strategy or inst.strategy)
    doc = {"mode": inst.mode, **sol.to_dict()}
    counts = cdma.stream_count_extremes(instance)
    doc["max_orthogonal"] = counts.max_orthogonal.tolist()
    doc["min_active"] = counts.min_active.tolist()
    mac = cdma.mac_capacity(instance)
    doc["mac_capacity"] = mac
    doc["capacity_gap"] = mac - sol.sum_rate
    cert = fdma.verify_kkt(instance.fdma_profile(), instance.fdma_constants(), sol.w_k_star)
    doc["kkt_valid"] = cert.valid
    doc["kkt_residuals"] = cert.residuals
    if inst.mode == "cdma-async":
        doc["delays"] = instance.delays.tolist()
        doc["async_sum_rate"] = cdma.async_sum_rate(instance)
    if complex_valued:
        doc["complex_sum_rate"] = cdma.complex_sum_rate(instance)
    if trace:
        it = fdma.allocate_iterative(instance.fdma_profile(), instance.fdma_constants(), record=True)
        doc["iterations"] = it.iterations
        doc["trace"] = [[None if np.isnan(v) else v for v in snap.tolist()] for snap in it.trace]
    return doc


def _row(cells, widths):
    return "  ".join(str(c).rjust(w) for c, w in zip(cells, widths))


def render_report(doc: dict, inst: InstanceFile) -> str:
    lines = [f"mode: {doc['mode']}    users: {len(inst.powers)}"]
    perm = doc["permutation"]
    sorted_pos = {orig: pos for pos, orig in enumerate(perm)}
    cdma_mode = doc["mode"].startswith("cdma")
    alloc_key = "w_k_star" if cdma_mode else ("t_star" if doc["mode"] == "tdma" else "w_star")
    header = ["user", "sorted", "power", "limit", "label", alloc_key]
    if cdma_mode:
        header += ["n*", "n_orth", "min n*", "max n_orth"]
    widths = [4, 6, 12, 12, 5, 22] + ([6, 6, 6, 10] if cdma_mode else [])
    lines.append(_row(header, widths))
    for k in range(len(inst.powers)):
        pos = sorted_pos[k]
        cells = [k + 1, pos + 1, f"{inst.powers[k]:.6g}", f"{inst.limits[k]:.6g}",
                 doc["labels"][pos], fmt(doc[alloc_key][k])]
        if cdma_mode:
            cells += [doc["n_k_star"][k], doc["n_orthogonal"][k],
                      doc["min_active"][k], doc["max_orthogonal"][k]]
        lines.append(_row(cells, widths))
    unit = "bits/chip" if cdma_mode else "bits/s"
    lines.append(f"K1={doc['k1']}  K2={doc['k2']}")
    lines.append(f"sum rate: {fmt(doc['sum_rate'])} {unit}")
    lines.append(f"MAC capacity: {fmt(doc['mac_capacity'])} {unit}  gap: {doc['capacity_gap']:.6g}")
    if cdma_mode:
        lines.append(f"achieves MAC capacity: {'yes' if doc['achieves_mac'] else 'no'}")
        lines.append(f"stream split: {doc['strategy']}")
    if "async_sum_rate" in doc:
        lines.append(f"asynchronous sum rate: {fmt(doc['async_sum_rate'])} {unit}")
    if "complex_sum_rate" in doc:
        lines.append(f"complex-baseband sum rate: {fmt(doc['complex_sum_rate'])} bps/Hz")
    worst = max(doc["kkt_residuals"].values())
    lines.append(f"KKT certificate: {'valid' if doc['kkt_valid'] else 'INVALID'} "
                 f"(max residual {worst:.3g})")
    if "trace" in doc:
        lines.append(f"iterations: {doc['iterations']}")
        for i, snap in enumerate(doc["trace"], 1):
            shares = " ".join("-" if v is None else f"{v:.4f}" for v in snap)
            lines.append(f"  due shares {i}: {shares}")
    return "\n".join(lines)


def write_solve_csv(doc: dict, inst: InstanceFile, out_dir: Path):
    cdma_mode = doc["mode"].startswith("cdma")
    perm = doc["permutation"]
    sorted_pos = {orig: pos for pos, orig in enumerate(perm)}
    alloc_key = "w_k_star" if cdma_mode else ("t_star" if doc["mode"] == "tdma" else "w_star")
    header = ["user", "sorted_position", "power", "limit", "label", alloc_key]
    if cdma_mode:
        header += ["n_star", "n_orthogonal", "min_active", "max_orthogonal"]
    rows = []
    for k in range(len(inst.powers)):
        pos = sorted_pos[k]
        row = [k + 1, pos + 1, float(inst.powers[k]), float(inst.limits[k]),
               doc["labels"][pos], float(doc[alloc_key][k])]
        if cdma_mode:
            row += [doc["n_k_star"][k], doc["n_orthogonal"][k],
                    doc["min_active"][k], doc["max_orthogonal"][k]]
        rows.append(row)
    _write_csv(out_dir / "allocation.csv", header, rows)
    _write_csv(out_dir / "summary.csv", ["quantity", "value"],
               [["sum_rate", float(doc["sum_rate"])],
                ["mac_capacity", float(doc["mac_capacity"])],
                ["k1", doc["k1"]], ["k2", doc["k2"]],
                ["kkt_valid", int(doc["kkt_valid"])]])
    if "trace" in doc:
        rows = [[i, k + 1, float(v)] for i, snap in enumerate(doc["trace"], 1)
                for k, v in enumerate(snap) if v is not None]
        _write_csv(out_dir / "trace.csv", ["iteration", "user", "due_share"], rows)
    if cdma_mode:
        rows = [[k + 1, l + 1, float(w), float(p)]
                for k, (ws, ps) in enumerate(zip(doc["w_kl_star"], doc["p_kl_star"]))
                for l, (w, p) in enumerate(zip(ws, ps))]
        _write_csv(out_dir / "streams.csv", ["user", "stream", "w_kl", "p_kl"], rows)


def cmd_solve(args) -> int:
    inst = load_instance(args.instance)
    doc = solve_document(inst, args.strategy, args.complex, args.trace)
    if args.csv:
        write_solve_csv(doc, inst, Path(args.csv))
    if args.json:
        print(json.dumps(doc))
    else:
        print(render_report(doc, inst))
    return EXIT_OK


# ---------- sequences ----------

def default_seed(inst_seed=None) -> int:
    if inst_seed is not None:
        return inst_seed
    env = os.environ.get(SEED_ENV)
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError as exc:
        raise InstanceParseError(f"{SEED_ENV} must be an integer") from exc


def cmd_sequences(args) -> int:
    inst = load_instance(args.instance)
    if not inst.mode.startswith("cdma"):
        raise InvalidInstanceError("sequences need a cdma or cdma-async instance")
    seed = args.seed if args.seed is not None else default_seed(inst.seed)
    instance = inst.cdma_instance()
    sol, vset, seq = sequences.optimal_system(instance, args.strategy or inst.strategy, seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        writer = csv.writer(fh)
        for row in seq.S:
            writer.writerow([fmt(v) for v in row])
    report = sequences.verify_gram(seq, vset)
    rate = sequences.logdet_sum_rate(seq.S, seq.powers, instance.noise_variance)
    print(f"wrote {seq.S.shape[0]}x{seq.S.shape[1]} sequence matrix to {out} (seed {seed})")
    print(f"orthogonal streams: {len(seq.orthogonal_columns)}  "
          f"GWBE streams: {len(seq.complement_columns)}  "
          f"complement dimension: {vset.complement_dim}")
    for key in ("orthogonality", "gram", "norms"):
        print(f"{key} residual: {report[key]:.3g}")
    print(f"log-det sum rate: {fmt(rate)} bits/chip (optimum {fmt(sol.sum_rate)})")
    print("gram check: " + ("pass" if report["passed"] else "FAIL"))
    return EXIT_OK if report["passed"] else EXIT_GRAM


# ---------- curves ----------

def loading_curve(Ks, N, snr_db, nbar_max):
    """Sum rate (bits/chip) against nbar, one column per K, each user at ``snr_db``."""
    snr = float(analysis.db_to_linear(snr_db))
    header = ["nbar"] + [f"K={K}" for K in Ks]
    rows = []
    for nbar in range(1, nbar_max + 1):
        row = [nbar]
        for K in Ks:
            inst = cdma.CdmaInstance(np.full(K, snr), np.full(K, nbar), N)
            row.append(cdma.solve_cdma(inst).sum_rate)
        rows.append(row)
    return header, rows


def ebn0_curve(nbars, load, db_grid):
    """Efficiency (bits/chip) against Eb/N0 in dB, one column per nbar at ``K/N = load``."""
    header = ["ebn0_db"] + [f"nbar={n}" for n in nbars]
    rows = []
    for db in db_grid:
        e = float(analysis.db_to_linear(db))
        rows.append([float(db)] + [analysis.symmetric_efficiency(n * load, e) for n in nbars])
    return header, rows


def fading_curve(K, Ns, nbars, ebn0_db, trials, seed, per_trial: Optional[Path] = None):
    """Mean efficiencies (bps/Hz) against K/N; one restricted column per nbar."""
    header = ["load"] + [f"nbar={n}" for n in nbars] + ["unrestricted"]
    rows = []
    trial_rows = []
    gains = analysis.fading_gains(K, trials, seed)
    for N in Ns:
        row = [K / N]
        unrestricted = None
        for n in nbars:
            cfg = analysis.FadingStudyConfig(K=K, N=N, nbar=n, mean_ebn0_db=ebn0_db,
                                             trials=trials, seed=seed)
            summary = analysis.rayleigh_fading_study(cfg, gains)
            row.append(summary.mean_restricted)
            unrestricted = summary.mean_unrestricted
            trial_rows += [[N, n, t, r, u] for t, r, u in summary.rows()]
        rows.append(row + [unrestricted])
    if per_trial is not None:
        _write_csv(per_trial, ["N", "nbar", "trial", "restricted", "unrestricted"],
                   [[N, n, t, float(r), float(u)] for N, n, t, r, u in trial_rows])
    return header, rows


def cmd_curves(args) -> int:
    if args.kind == "loading":
        header, rows = loading_curve(args.K or [40, 80, 160], args.N or 128,
                                     args.snr_db, args.nbar_max)
    elif args.kind == "ebn0":
        grid = np.arange(args.ebn0_min, args.ebn0_max + 0.5 * args.ebn0_step, args.ebn0_step)
        header, rows = ebn0_curve(args.nbar or [1, 2, 4], args.load, grid)
    else:
        seed = args.seed if args.seed is not None else default_seed()
        Ks = args.K or [100]
        if len(Ks) != 1:
            raise InstanceParseError("fading curves take a single K")
        Ns = args.Ns or [400, 200, 100, 50]
        per_trial = Path(args.per_trial) if args.per_trial else None
        header, rows = fading_curve(Ks[0], Ns, args.nbar or [1, 2, 4], args.ebn0_db,
                                    args.trials, seed, per_trial)
    _write_csv(Path(args.out), header, rows)
    print(f"wrote {len(rows)} rows to {args.out}")
    return EXIT_OK


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sumrate", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    solve = sub.add_parser("solve", help="solve one instance file")
    solve.add_argument("instance")
    solve.add_argument("--json", action="store_true", help="print the result as JSON")
    solve.add_argument("--csv", metavar="DIR", help="also write CSV tables to DIR")
    solve.add_argument("--strategy", choices=cdma.STRATEGIES)
    solve.add_argument("--trace", action="store_true", help="record per-iteration due shares")
    solve.add_argument("--complex", action="store_true", help="report the complex-baseband rate")
    solve.set_defaults(func=cmd_solve)

    seq = sub.add_parser("sequences", help="build optimal signature sequences")
    seq.add_argument("instance")
    seq.add_argument("--seed", type=int)
    seq.add_argument("--strategy", choices=cdma.STRATEGIES)
    seq.add_argument("--out", required=True)
    seq.set_defaults(func=cmd_sequences)

    curves = sub.add_parser("curves", help="emit curve data as CSV")
    curves.add_argument("kind", choices=("loading", "ebn0", "fading"))
    curves.add_argument("--out", required=True)
    curves.add_argument("--K", type=_positive_int, nargs="+")
    curves.add_argument("--N", type=_positive_int)
    curves.add_argument("--Ns", type=_positive_int, nargs="+")
    curves.add_argument("--nbar", type=_positive_int, nargs="+")
    curves.add_argument("--nbar-max", type=_positive_int, default=8)
    curves.add_argument("--snr-db", type=float, default=10.0)
    curves.add_argument("--load", type=float, default=0.625)
    curves.add_argument("--ebn0-min", type=float, default=-1.0)
    curves.add_argument("--ebn0-max", type=float, default=20.0)
    curves.add_argument("--ebn0-step", type=float, default=1.0)
    curves.add_argument("--ebn0-db", type=float, default=10.0)
    curves.add_argument("--trials", type=_positive_int, default=1000)
    curves.add_argument("--seed", type=int)
    curves.add_argument("--per-trial", metavar="FILE")
    curves.set_defaults(func=cmd_curves)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InstanceParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except InvalidInstanceError as exc:
        print(f"invalid instance: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())
