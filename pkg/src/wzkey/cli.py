"""Command-line interface: ``wzkey <command> [options]``.

Every artifact written by a command carries the tool version, the effective
configuration and the master seed. Runs with the same inputs produce
byte-identical output. Bit files are an 8-byte little-endian bit count
followed by the bits packed most significant bit first.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__
from .bounds import (
    NoSolution,
    cs_bin_boundary,
    figure5_table,
    gs_bin_boundary,
    hidden_bin_boundary,
    rates_csv,
    rcu_bound_bsc,
    sphere_packing_ratio,
)
from .gf2core import DomainError, LengthMismatch, SeedSpec, bernoulli, to_hex
from .keyagree import (
    BundleFormatError,
    DigestMismatch,
    HelperBundle,
    linear_enroll,
    linear_reconstruct,
    polar_enroll,
    polar_reconstruct,
)
from .nested_design import (
    Budget,
    DEFAULT_DESIGN_GRID,
    DesignResult,
    DesignSpec,
    Infeasible,
    _inputs,
    block_errors,
    design_nested,
    f1_order,
)
from .polar import PolarCodePair, quantize
from .wz_linear import NestedLinearCode, audit_leakage, build_nested

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INFEASIBLE = 3
EXIT_DIGEST = 4
EXIT_DOMAIN = 5

HAMMING74_H1 = np.array([[1, 0, 1, 0, 1, 0, 1], [0, 1, 1, 0, 0, 1, 1], [0, 0, 0, 1, 1, 1, 1]], dtype=np.uint8)
HAMMING74_H2 = np.array([[1, 1, 0, 0, 0, 0, 0], [0, 0, 1, 1, 0, 0, 0], [0, 0, 0, 0, 0, 1, 1]], dtype=np.uint8)

# stream tags of the simulation campaigns
TAG_SIM_FIG3 = 21
TAG_SIM_FIG4 = 22


# ---------------------------------------------------------------------------
# bit files


def write_bits(path: str, bits: np.ndarray) -> None:
    bits = np.asarray(bits, dtype=np.uint8).ravel()
    with open(path, "wb") as f:
        f.write(int(bits.size).to_bytes(8, "little"))
        f.write(np.packbits(bits).tobytes())


def read_bits(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 8:
        raise LengthMismatch(f"{path}: missing the 8-byte length header")
    n = int.from_bytes(raw[:8], "little")
    body = np.frombuffer(raw[8:], dtype=np.uint8)
    if body.size != (n + 7) // 8:
        raise LengthMismatch(f"{path}: header says {n} bits but the file holds {8 * body.size}")
    return np.unpackbits(body)[:n].copy()


# ---------------------------------------------------------------------------
# config plumbing


def _seed(args) -> tuple[int, str]:
    env = os.environ.get("WZKEY_SEED")
    if env is not None and env.strip() != "":
        return int(env), "env"
    return int(args.seed), "flag"


def _config(args, exclude=("func", "workers", "out", "code_out", "records", "key_out")) -> dict:
    # output locations and the worker count never change results, so they stay out of the echo
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in exclude}
    seed, src = _seed(args)
    cfg["seed"] = seed
    cfg["seed_source"] = src
    return cfg


def _header(cfg: dict) -> str:
    return f"# wzkey {__version__}\n# config {json.dumps(cfg, sort_keys=True)}\n"


def _emit(text: str, out: str | None) -> None:
    if out:
        with open(out, "w", newline="") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


def _json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


def _load_code(path: str):
    """A design result, a polar code pair or a nested linear code, by its format tag."""
    with open(path) as f:
        d = json.load(f)
    fmt = d.get("format", "")
    if fmt == "wzkey.design-result":
        return DesignResult.from_dict(d)
    if fmt == "wzkey.nested-linear-code":
        return NestedLinearCode.from_dict(d)
    if fmt.startswith("wzkey.polar"):
        return PolarCodePair.from_dict(d)
    raise ValueError(f"{path}: unrecognised code file format {fmt!r}")


def _grid(text: str) -> list[float]:
    """``a:b:step`` (inclusive) or a comma-separated list."""
    if ":" in text:
        a, b, s = (float(t) for t in text.split(":"))
        k = int(round((b - a) / s))
        return [round(a + i * s, 10) for i in range(k + 1)]
    return [float(t) for t in text.split(",") if t.strip()]


# ---------------------------------------------------------------------------
# commands


def cmd_design(args) -> int:
    seed, _ = _seed(args)
    budget = Budget(args.pb_trials, args.weight_trials, args.distortion_trials, args.construction_trials,
                    args.probe_trials)
    grid = tuple(_grid(args.design_grid)) if args.design_grid else DEFAULT_DESIGN_GRID
    spec = DesignSpec(args.n, args.key_bits, args.pa, args.pb, args.list_size, args.quantile, budget, seed,
                      args.c_design_p, args.pc_method, grid)
    log = (lambda m: print(m, file=sys.stderr)) if args.verbose else None
    res = design_nested(spec, log)
    d = res.to_dict()
    d["config"] = _config(args)
    _emit(_json(d), args.out)
    if args.code_out:
        with open(args.code_out, "w") as f:
            f.write(res.code.to_json() + "\n")
    print(f"p_c={res.p_c:.4f} Eq={res.Eq:.4f} m2={res.m2} m2_aug={res.m2_aug} "
          f"rates=({res.rate_tuple.R_s:.3f}, {res.rate_tuple.R_l:.3f}, {res.rate_tuple.R_w:.3f})", file=sys.stderr)
    return EXIT_OK


def _fig3_point(code_json: str, p: float, trials: int, seed: tuple, list_size: int, chunk: int):
    code = PolarCodePair.from_json(code_json)
    flags = []
    s = SeedSpec(*seed)
    for k, a in enumerate(range(0, trials, chunk)):
        z = bernoulli(code.n, p, s.child(k), size=min(chunk, trials - a))
        flags.append(block_errors(code, z, list_size))
    return np.concatenate(flags) if flags else np.zeros(0, dtype=bool)


def cmd_simulate(args) -> int:
    seed, _ = _seed(args)
    cfg = _config(args)
    obj = _load_code(args.code)
    design = obj if isinstance(obj, DesignResult) else None
    code = obj.code if design else obj
    if not isinstance(code, PolarCodePair):
        raise ValueError("simulate needs a polar code or a design result")
    grid = _grid(args.grid) if args.grid else []
    buf = io.StringIO()
    buf.write(_header(cfg))
    w = csv.writer(buf, lineterminator="\n")
    rec = None
    if args.records:
        rec_buf = io.StringIO()
        rec_buf.write(_header(cfg))
        rec = csv.writer(rec_buf, lineterminator="\n")
    if args.mode == "fig3":
        w.writerow(["p", "trials", "errors", "rate", "ci95_low", "ci95_high"])
        if rec:
            rec.writerow(["p", "trial", "error"])
        jobs = [(code.to_json(), p, args.trials, (seed, (TAG_SIM_FIG3, i)), args.list_size, args.chunk)
                for i, p in enumerate(grid)]
        if args.workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(args.workers) as ex:
                results = list(ex.map(_fig3_point, *zip(*jobs)))
        else:
            results = [_fig3_point(*j) for j in jobs]
        for p, flags in zip(grid, results):
            t, e = int(flags.size), int(flags.sum())
            lo, hi = _ci(e, t)
            w.writerow([f"{p:g}", t, e, _fmt(e / t if t else float("nan")), _fmt(lo), _fmt(hi)])
            if rec:
                for i, f in enumerate(flags):
                    rec.writerow([f"{p:g}", i, int(f)])
    else:
        q = args.q if args.q is not None else (design.Eq if design else None)
        if q is None:
            raise ValueError("fig4 mode needs --q or a design result")
        w.writerow(["n_minus_m1", "m1", "trials", "mean_distortion", "ci95_low", "ci95_high"])
        if rec:
            rec.writerow(["n_minus_m1", "trial", "distortion"])
        order = f1_order(code, q, args.construction_trials, seed)
        X = _inputs(code.n, args.trials, SeedSpec(seed, TAG_SIM_FIG4)) if args.trials else None
        for g in grid:
            m1 = code.n - int(g)
            if not (0 <= m1 <= code.F.size):
                raise DomainError(f"n - m1 = {int(g)} outside [{code.n - code.F.size}, {code.n}]")
            if X is None:
                w.writerow([int(g), m1, 0, "nan", "nan", "nan"])
                continue
            d = quantize(X, code.with_f1(order[:m1]), q_design=q, list_size=args.list_size)[2]
            mean = float(d.mean())
            half = 1.96 * float(d.std(ddof=1)) / np.sqrt(d.size) if d.size > 1 else float("nan")
            w.writerow([int(g), m1, d.size, _fmt(mean), _fmt(mean - half), _fmt(mean + half)])
            if rec:
                for i, v in enumerate(d):
                    rec.writerow([int(g), i, _fmt(float(v))])
    _emit(buf.getvalue(), args.out)
    if rec:
        with open(args.records, "w", newline="") as f:
            f.write(rec_buf.getvalue())
    return EXIT_OK


def _ci(e: int, t: int) -> tuple[float, float]:
    from scipy.stats import beta
    if t == 0:
        return float("nan"), float("nan")
    lo = 0.0 if e == 0 else float(beta.ppf(0.025, e, t - e + 1))
    hi = 1.0 if e == t else float(beta.ppf(0.975, e + 1, t - e))
    return lo, hi


def _fmt(v: float) -> str:
    return f"{v:.6g}"


def cmd_enroll(args) -> int:
    obj = _load_code(args.code)
    x = read_bits(args.x)
    S_prime = read_bits(args.chosen_key) if args.chosen_key else None
    if isinstance(obj, DesignResult):
        bundle, key = polar_enroll(x, obj, S_prime, args.list_size)
    elif isinstance(obj, NestedLinearCode):
        bundle, key = linear_enroll(x, obj, S_prime)
    else:
        raise ValueError("enroll needs a design result or a nested linear code")
    with open(args.out, "wb") as f:
        f.write(bundle.to_bytes())
    if args.key_out:
        write_bits(args.key_out, key)
    print(to_hex(key))
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    obj = _load_code(args.code)
    y = read_bits(args.y)
    with open(args.bundle, "rb") as f:
        bundle = HelperBundle.from_bytes(f.read())
    if isinstance(obj, DesignResult):
        key = polar_reconstruct(y, bundle, obj, args.list_size)
    elif isinstance(obj, NestedLinearCode):
        key = linear_reconstruct(y, bundle, obj)
    else:
        raise ValueError("reconstruct needs a design result or a nested linear code")
    if args.key_out:
        write_bits(args.key_out, key)
    print(to_hex(key))
    return EXIT_OK


def cmd_bounds(args) -> int:
    cfg = _config(args)
    buf = io.StringIO()
    buf.write(_header(cfg))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["n", "target_PB", "p", "sp_method", "R_C_max", "ratio", "rcu_key_bits", "rcu_PB"])
    for n in (int(v) for v in args.n.split(",")):
        try:
            R, ratio = sphere_packing_ratio(n, args.pb, args.pa, args.sp_method)
            Rs, rs = _fmt(R), _fmt(ratio)
        except NoSolution:
            Rs = rs = "none"
        rcu = rcu_bound_bsc(n, args.key_bits, args.pa)
        w.writerow([n, _fmt(args.pb), _fmt(args.pa), args.sp_method, Rs, rs, args.key_bits, _fmt(rcu)])
    _emit(buf.getvalue(), args.out)
    return EXIT_OK


def cmd_region(args) -> int:
    cfg = _config(args)
    buf = io.StringIO()
    buf.write(_header(cfg))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["q", "R_s", "R_l", "R_w"])
    k = args.points - 1
    for i in range(k + 1):
        q = 0.5 * i / k if k else 0.0
        if args.model == "hidden":
            rt = hidden_bin_boundary(q, args.pe, args.pa, args.hidden_model)
        elif args.model == "CS":
            rt = cs_bin_boundary(q, args.pa)
        else:
            rt = gs_bin_boundary(q, args.pa)
        w.writerow([f"{q:.6f}", f"{rt.R_s:.6f}", f"{rt.R_l:.6f}", f"{rt.R_w:.6f}"])
    _emit(buf.getvalue(), args.out)
    return EXIT_OK


def cmd_fig5(args) -> int:
    cfg = _config(args)
    comment = f"wzkey {__version__}\nconfig {json.dumps(cfg, sort_keys=True)}"
    _emit(rates_csv(figure5_table(args.pa, args.key_bits, args.step), comment), args.out)
    return EXIT_OK


def cmd_audit(args) -> int:
    seed, _ = _seed(args)
    if args.code:
        code = _load_code(args.code)
        if not isinstance(code, NestedLinearCode):
            raise ValueError("audit needs a nested linear code file")
    elif args.preset == "hamming74":
        code = build_nested(7, 3, 3, H1=HAMMING74_H1, H2=HAMMING74_H2)
    else:
        if args.n is None or args.m1 is None or args.m2 is None:
            raise ValueError("give --code, --preset or all of --n, --m1, --m2")
        code = build_nested(args.n, args.m1, args.m2, seed)
    rep = audit_leakage(code, args.channel, args.mode)
    rep = {"tool_version": __version__, "config": _config(args), "code": code.to_dict(), "report": rep}
    _emit(_json(rep), args.out)
    if args.code_out:
        with open(args.code_out, "w") as f:
            f.write(code.to_json() + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="wzkey", description="Nested-code key agreement toolkit.")
    ap.add_argument("--version", action="version", version=f"wzkey {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, out_help="output file (default: stdout)"):
        p.add_argument("--seed", type=int, default=0, help="master seed (WZKEY_SEED overrides it)")
        p.add_argument("--out", default=None, help=out_help)

    p = sub.add_parser("design", help="design a nested polar code pair")
    common(p, "design result JSON (default: stdout)")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--key-bits", type=int, default=128)
    p.add_argument("--pa", type=float, required=True, help="enrollment-to-reconstruction crossover p_A")
    p.add_argument("--pb", type=float, default=1e-6, help="target block-error probability")
    p.add_argument("--list-size", type=int, default=8)
    p.add_argument("--quantile", type=float, default=0.9999)
    p.add_argument("--pb-trials", type=int, default=100_000)
    p.add_argument("--weight-trials", type=int, default=2_000)
    p.add_argument("--distortion-trials", type=int, default=10_000)
    p.add_argument("--construction-trials", type=int, default=2_000)
    p.add_argument("--probe-trials", type=int, default=4_000)
    p.add_argument("--c-design-p", type=float, default=None, help="fix the design crossover of C")
    p.add_argument("--design-grid", default=None, help="candidate design crossovers, a:b:step or a list")
    p.add_argument("--pc-method", choices=("loglinear", "weight"), default="loglinear")
    p.add_argument("--code-out", default=None, help="also write the code pair JSON here")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_design)

    p = sub.add_parser("simulate", help="block-error (fig3) or distortion (fig4) campaigns")
    common(p, "summary CSV (default: stdout)")
    p.add_argument("--code", required=True, help="design result or polar code JSON")
    p.add_argument("--mode", choices=("fig3", "fig4"), default="fig3")
    p.add_argument("--grid", default="", help="crossovers (fig3) or n - m1 values (fig4): a:b:step or a list")
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--chunk", type=int, default=5_000)
    p.add_argument("--list-size", type=int, default=8)
    p.add_argument("--q", type=float, default=None, help="quantizer test-channel crossover (fig4)")
    p.add_argument("--construction-trials", type=int, default=2_000)
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    p.add_argument("--records", default=None, help="per-trial CSV")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("enroll", help="enroll a source word; prints the key in hex")
    p.add_argument("--code", required=True, help="design result or nested linear code JSON")
    p.add_argument("--x", required=True, help="source bit file")
    p.add_argument("--chosen-key", default=None, help="bit file with a chosen key S' (CS model)")
    p.add_argument("--out", required=True, help="helper bundle output")
    p.add_argument("--key-out", default=None)
    p.add_argument("--list-size", type=int, default=8)
    p.set_defaults(func=cmd_enroll)

    p = sub.add_parser("reconstruct", help="reconstruct the key from a measurement and a bundle")
    p.add_argument("--code", required=True)
    p.add_argument("--y", required=True, help="measurement bit file")
    p.add_argument("--bundle", required=True)
    p.add_argument("--key-out", default=None)
    p.add_argument("--list-size", type=int, default=8)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("bounds", help="sphere-packing and RCU table")
    common(p)
    p.add_argument("--n", default="1024,2048", help="comma-separated block lengths")
    p.add_argument("--pa", type=float, default=0.15)
    p.add_argument("--pb", type=float, default=1e-6)
    p.add_argument("--key-bits", type=int, default=128)
    p.add_argument("--sp-method", choices=("exact", "exponent"), default="exact")
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("region", help="boundary of the key-leakage-storage region")
    common(p)
    p.add_argument("--pa", type=float, default=0.15)
    p.add_argument("--model", choices=("GS", "CS", "hidden"), default="GS")
    p.add_argument("--pe", type=float, default=0.0, help="encoder measurement crossover (hidden model)")
    p.add_argument("--hidden-model", choices=("GS", "CS"), default="GS")
    p.add_argument("--points", type=int, default=501)
    p.set_defaults(func=cmd_region)

    p = sub.add_parser("fig5", help="storage-key comparison table")
    common(p)
    p.add_argument("--pa", type=float, default=0.15)
    p.add_argument("--key-bits", type=int, default=128)
    p.add_argument("--step", type=float, default=1e-3)
    p.set_defaults(func=cmd_fig5)

    p = sub.add_parser("audit", help="exact leakage audit of a small nested linear code")
    common(p, "report JSON (default: stdout)")
    p.add_argument("--code", default=None, help="nested linear code JSON")
    p.add_argument("--preset", choices=("hamming74",), default=None)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--m1", type=int, default=None)
    p.add_argument("--m2", type=int, default=None)
    p.add_argument("--mode", choices=("GS", "CS", "hidden"), default="GS")
    p.add_argument("--channel", type=float, default=0.0, help="encoder noise for the hidden mode")
    p.add_argument("--code-out", default=None)
    p.set_defaults(func=cmd_audit)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Infeasible as exc:
        print(f"wzkey: infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except DigestMismatch as exc:
        print(f"wzkey: digest mismatch: {exc}", file=sys.stderr)
        return EXIT_DIGEST
    except DomainError as exc:
        print(f"wzkey: domain error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except (BundleFormatError, LengthMismatch, ValueError, OSError) as exc:
        print(f"wzkey: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
