"""Command line front end: construct, verify, certify, bench, demo-gibbs, verify-cert.

Exit codes: 0 pass, 1 property failure, 2 input error, 3 numeric failure.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import sys
import tempfile
import traceback
import warnings
from dataclasses import asdict, dataclass
from fractions import Fraction
from pathlib import Path

import click
import mpmath

from . import flat_approx as fa
from . import gibbs_demo as gd
from . import sos_certificates as sc
from .poly_core import BigPoly, PrecisionError, RationalPoly

EXIT_PASS, EXIT_FAIL, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3
DEFAULT_PRECISION = 512
CERT_MAX_DEGREE = 64


class InputError(Exception):
    pass


def default_precision() -> int:
    raw = os.environ.get("FLATEXP_PRECISION")
    if not raw:
        return DEFAULT_PRECISION
    try:
        v = int(raw)
    except ValueError:
        raise InputError(f"FLATEXP_PRECISION={raw!r} is not an integer") from None
    if v < 64:
        raise InputError("FLATEXP_PRECISION must be at least 64")
    return v


@dataclass
class RunConfig:
    command: str
    beta: str | None = None
    eps: str | None = None
    delta: str | None = None
    overrides: list | None = None
    paper_constants: bool = False
    desk: bool = False
    ints: dict | None = None
    precision_bits: int = DEFAULT_PRECISION
    grid: str | None = None
    seed: int = 0
    input: str | None = None
    output: str | None = None
    cap: int = fa.DEFAULT_DEGREE_CAP

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "RunConfig":
        return cls(**obj)


# ---------------------------------------------------------------------------
# output helpers


def _dumps(obj) -> str:
    return json.dumps(fa._jsonable(obj), indent=1, sort_keys=True) + "\n"


def write_atomic(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        mask = os.umask(0)
        os.umask(mask)
        os.chmod(tmp, 0o666 & ~mask)
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _read_json(path: str | None) -> dict:
    if not path:
        raise InputError("--in is required")
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise InputError(f"cannot read {path}") from None
    except json.JSONDecodeError as e:
        raise InputError(f"{path} is not valid JSON: {e}") from None


def _fraction(text: str | None, name: str) -> Fraction | None:
    if text is None:
        return None
    try:
        return Fraction(text)
    except (ValueError, ZeroDivisionError):
        raise InputError(f"--{name} {text!r} is not a number") from None


# ---------------------------------------------------------------------------
# parameter resolution


def resolve_params(cfg: RunConfig) -> fa.FlatParams:
    if cfg.paper_constants and cfg.overrides:
        raise InputError("--paper-constants and --c-* overrides are mutually exclusive")
    eps = _fraction(cfg.eps, "eps")
    if cfg.desk:
        p = fa.desk_params()
        return p if eps is None else fa.FlatParams(**{**_param_fields(p), "eps": eps})
    if cfg.beta is None:
        raise InputError("--beta is required")
    beta = _fraction(cfg.beta, "beta")
    if cfg.ints:
        if cfg.delta is None:
            raise InputError("explicit parameters need --delta")
        delta, log_inv = fa.parse_delta(cfg.delta)
        return fa.FlatParams(beta=beta, delta=delta, eps=eps, log_inv_delta=log_inv, **cfg.ints)
    if cfg.delta is None and eps is None:
        raise InputError("give --delta, --eps, or both")
    delta = cfg.delta if cfg.delta is not None else str(eps)
    overrides = None if cfg.paper_constants or not cfg.overrides else tuple(Fraction(c) for c in cfg.overrides)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return fa.select_params(beta, delta, overrides, eps)


def _param_fields(p: fa.FlatParams) -> dict:
    return {k: getattr(p, k) for k in ("beta", "delta", "ell", "s", "r", "k", "eps", "const_overrides",
                                       "paper_constants", "log_inv_delta")}


def _construction_payload(cfg: RunConfig, params: fa.FlatParams) -> tuple[dict, fa.FlatApproxResult | None]:
    degree = max(params.k + 2, params.r * params.ell)
    meta = {"params": params.to_json(), "regime": params.regime(), "degree_estimate": degree,
            "degree_cap": cfg.cap}
    if degree > cfg.cap:
        meta["refused"] = f"degree {degree} exceeds the cap {cfg.cap}; raise --cap to build anyway"
        return {"config": cfg.to_json(), "meta": meta}, None
    res = fa.build_Phat(params, cfg.cap)
    coeffs = res.p_hat.coeffs
    meta.update({
        "degree_p_hat": res.p_hat.degree, "degree_q": res.q_full.degree,
        "max_coeff_bits": res.max_coeff_bits,
        "nonzero_coeffs": sum(1 for c in coeffs if c),
        "truncation_is_identity": res.err.is_zero(),
    })
    out = {"config": cfg.to_json(), "meta": meta, "p_hat": res.p_hat.to_json(), "p_realized": None}
    if params.eps is not None:
        kappa, scale = fa.realization_constants(params, cfg.precision_bits)
        P = fa.realize_P(res, cfg.precision_bits)
        res = fa.FlatApproxResult(res.p_hat, res.q_full, params, P, res.max_coeff_bits)
        out["p_realized"] = P.to_json()
        meta["kappa"] = mpmath.nstr(kappa, 40)
        with mpmath.workprec(cfg.precision_bits):
            meta["exp_kappa"] = mpmath.nstr(mpmath.exp(kappa), 40)
        meta["scale"] = scale.mid().str(40, radius=False)
    return out, res


def load_result(obj: dict) -> fa.FlatApproxResult:
    try:
        params = fa.FlatParams.from_json(obj["meta"]["params"])
        p_hat = RationalPoly.from_json(obj["p_hat"])
    except KeyError as e:
        raise InputError(f"construction file is missing {e}") from None
    P = BigPoly.from_json(obj["p_realized"]) if obj.get("p_realized") else None
    q = fa.build_Q(params)
    if fa.assemble_Phat(q, params) != p_hat:
        raise InputError("stored Phat does not match its parameters")
    return fa.FlatApproxResult(p_hat, q, params, P, p_hat.max_coeff_bits())


# ---------------------------------------------------------------------------
# commands


def cmd_construct(cfg: RunConfig) -> int:
    params = resolve_params(cfg)
    payload, res = _construction_payload(cfg, params)
    out = Path(cfg.output or "construct.json")
    write_atomic(out, _dumps(payload))
    if res is None:
        click.echo(payload["meta"]["refused"], err=True)
        return EXIT_INPUT
    click.echo(f"wrote {out}: degree {res.p_hat.degree}")
    return EXIT_PASS


def _strip_timing(report: dict) -> dict:
    for rec in report.get("records", []):
        for v in rec.get("detail", {}).values():
            if isinstance(v, dict):
                v.pop("seconds", None)
    return report


def cmd_verify(cfg: RunConfig, certify_roots: bool = True) -> int:
    res = load_result(_read_json(cfg.input))
    grid = fa.GridSpec.parse(cfg.grid) if cfg.grid is not None else fa.GridSpec()
    report = fa.verify_thm_approx(res, grid, certify_roots)
    trunc = fa.check_truncation_error(res, grid)
    out = {"p_hat": _strip_timing(report.to_json()), "truncation": trunc.to_json()}
    passed = report.passed and trunc.passed
    rows = report.csv_rows()
    if res.p_realized is not None:
        params = res.params
        flat = fa.verify_flat(res.p_realized, params.kappa_at(res.p_realized.precision_bits),
                              1 / params.beta, params.eps, grid, reach=grid.reach * params.s, beta=params.beta)
        out["realized"] = flat.to_json()
        rows += flat.csv_rows()
        passed = passed and flat.passed
    out["passed"] = passed
    path = Path(cfg.output or "report.json")
    write_atomic(path, _dumps(out))
    write_atomic(path.with_suffix(".csv"), _csv(("property", "x", "value", "reference", "margin"), rows))
    for name, rep in (("p_hat", report), ("truncation", trunc)):
        for r in rep.records:
            click.echo(f"{name}.{r.name}: {'pass' if r.passed else 'FAIL'} worst margin "
                       f"{mpmath.nstr(r.worst_margin, 6)} at x={r.worst_x:g}")
    if "realized" in out:
        for r in out["realized"]["records"]:
            click.echo(f"realized.{r['name']}: {'pass' if r['passed'] else 'FAIL'} "
                       f"worst margin {r['worst_margin']} at x={r['worst_x']:g}")
    return EXIT_PASS if passed else EXIT_FAIL


TOYS = {
    "exp28": lambda: fa.build_E(28),
    "quadratic": lambda: RationalPoly([1, 0, Fraction(1, 100)]),
}


def cmd_certify(cfg: RunConfig, toy: str | None, variant: str) -> int:
    if toy:
        P = TOYS[toy]()
        provenance = {"toy": toy}
    else:
        res = load_result(_read_json(cfg.input))
        P = res.p_realized if res.p_realized is not None else res.p_hat
        provenance = res.params.to_json()
    if P.degree > CERT_MAX_DEGREE:
        raise InputError(f"degree {P.degree} exceeds the certificate limit {CERT_MAX_DEGREE}; "
                         "use --toy or a smaller construction")
    R, cert = sc.build_R_certificate(P, variant, cfg.precision_bits, CERT_MAX_DEGREE)
    path = Path(cfg.output or "certificate.json")
    write_atomic(path, _dumps(sc.certificate_to_json(R, cert, provenance)))
    rr = cert.residual_report
    click.echo(f"wrote {path}: {cert.k_count} squares of degree <= {cert.d_bound}, "
               f"C = {mpmath.nstr(cert.C_bound, 6)}, coefficient residual "
               f"{mpmath.nstr(rr['max_coeff_residual'], 4)}, point residual {mpmath.nstr(rr['max_point_residual'], 4)}")
    return EXIT_PASS if rr["passed"] else EXIT_FAIL


def cmd_verify_cert(cfg: RunConfig) -> int:
    obj = _read_json(cfg.input)
    try:
        R, cert = sc.certificate_from_json(obj)
    except (KeyError, ValueError, TypeError) as e:
        raise InputError(f"malformed certificate: {e}") from None
    rep = sc.verify_certificate(R, cert, 100, cfg.precision_bits, seed=cfg.seed)
    click.echo(f"coefficient residual {mpmath.nstr(rep['max_coeff_residual'], 4)}, point residual "
               f"{mpmath.nstr(rep['max_point_residual'], 4)}, bounded {rep['all_squares_bounded']}: "
               f"{'pass' if rep['passed'] else 'FAIL'}")
    return EXIT_PASS if rep["passed"] else EXIT_FAIL


def parse_betas(text: str) -> list[int]:
    text = text.strip()
    if not text:
        return []
    out = []
    for part in text.split(","):
        if "-" in part or ".." in part:
            a, b = part.replace("..", "-").split("-")
            out.extend(range(int(a), int(b) + 1))
        else:
            out.append(int(part))
    return out


def cmd_bench(cfg: RunConfig, betas: list[int], eps_values: list[str]) -> int:
    overrides = tuple(Fraction(c) for c in cfg.overrides) if cfg.overrides else fa.BENCH_OVERRIDES
    eps = [Fraction(e) for e in eps_values] or [Fraction(1, 1000)]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rows = fa.degree_benchmark(betas, eps, overrides=overrides, cap=cfg.cap)
    path = Path(cfg.output or "bench.csv")
    write_atomic(path, _csv(fa.BENCH_HEADER, [r.as_tuple() for r in rows]))
    for r in rows:
        click.echo(",".join(str(v) for v in r.as_tuple()))
    ok = all(r.passed_ours and r.passed_baseline for r in rows)
    return EXIT_PASS if ok else EXIT_FAIL


def gibbs_params(beta: Fraction, eps: Fraction) -> fa.FlatParams:
    desk = fa.desk_params()
    if beta == desk.beta and eps == desk.eps:
        return desk
    # choose delta so that 3 delta e^(2 kappa) <= eps keeps the window error within eps
    kappa = float(beta) * math.log(eps.denominator / eps.numerator)
    bits = math.ceil((math.log(3 / float(eps)) + 2 * kappa) / math.log(2))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return fa.select_params(beta, Fraction(1, 2 ** bits), fa.BENCH_OVERRIDES, eps)


def cmd_demo_gibbs(cfg: RunConfig, n: int) -> int:
    beta = _fraction(cfg.beta or "2", "beta")
    eps = _fraction(cfg.eps or "1/10", "eps")
    if beta != int(beta):
        raise InputError("the Gibbs demo needs an integer beta")
    params = gibbs_params(beta, eps)
    res = fa.build_Phat(params, cfg.cap)
    P = fa.realize_P(res, cfg.precision_bits)
    kappa = params.kappa_at(cfg.precision_bits)
    report = gd.run_demo(P, kappa, eps, n, cfg.seed, beta)
    report["params"] = params.to_json()
    path = Path(cfg.output or "gibbs.json")
    write_atomic(path, _dumps(report))
    click.echo(f"n={n} seed={cfg.seed}: max spectral error {report['max_error']:.3e} "
               f"(eps {float(eps):g}), trace error {report['trace_error']:.1e}: "
               f"{'pass' if report['passed'] else 'FAIL'}")
    return EXIT_PASS if report["passed"] else EXIT_FAIL


# ---------------------------------------------------------------------------
# click wiring


def _run(fn, *args) -> None:
    try:
        code = fn(*args)
    except (InputError, fa.ParameterError, ValueError, KeyError) as e:
        click.echo(f"input error: {e}", err=True)
        code = EXIT_INPUT
    except (PrecisionError, sc.RootFindingError, sc.SosError, ArithmeticError) as e:
        click.echo(f"numeric failure: {e}", err=True)
        code = EXIT_NUMERIC
    except Exception:
        traceback.print_exc()
        code = EXIT_NUMERIC
    sys.exit(code)


def param_options(f):
    opts = [
        click.option("--beta", type=str, help="inverse temperature (>= 1)"),
        click.option("--eps", type=str, help="window accuracy of the realized polynomial"),
        click.option("--delta", type=str, help="accuracy of Phat, e.g. 1e-3, 2^-20 or e^-5"),
        click.option("--c-ell", type=str), click.option("--c-s", type=str),
        click.option("--c-r", type=str), click.option("--c-k", type=str),
        click.option("--paper-constants", is_flag=True, help="use the constants 1, 1e7, 1e4, 1e6"),
        click.option("--desk", is_flag=True, help="tuned desk-scale parameter set"),
        click.option("--ell", type=int), click.option("--s", "s_", type=int),
        click.option("--r", type=int), click.option("--k", type=int),
    ]
    for o in reversed(opts):
        f = o(f)
    return f


def common_options(f):
    opts = [
        click.option("--precision-bits", type=int, default=None, help="working precision (default 512)"),
        click.option("--grid", type=str, default=None, help="window=N,decade=N,start=X,reach=X"),
        click.option("--seed", type=int, default=0),
        click.option("--out", "out", type=str, default=None),
        click.option("--in", "inp", type=str, default=None),
        click.option("--cap", type=int, default=fa.DEFAULT_DEGREE_CAP, help="degree safety cap"),
    ]
    for o in reversed(opts):
        f = o(f)
    return f


def make_config(command: str, kw: dict) -> RunConfig:
    overrides = [kw.get(k) for k in ("c_ell", "c_s", "c_r", "c_k")]
    if any(o is not None for o in overrides):
        if any(o is None for o in overrides):
            raise InputError("give all four of --c-ell, --c-s, --c-r, --c-k")
    else:
        overrides = None
    ints = {"ell": kw.get("ell"), "s": kw.get("s_"), "r": kw.get("r"), "k": kw.get("k")}
    if any(v is not None for v in ints.values()):
        if any(v is None for v in ints.values()):
            raise InputError("give all four of --ell, --s, --r, --k")
    else:
        ints = None
    prec = kw.get("precision_bits") or default_precision()
    return RunConfig(command, kw.get("beta"), kw.get("eps"), kw.get("delta"), overrides,
                     bool(kw.get("paper_constants")), bool(kw.get("desk")), ints, prec, kw.get("grid"),
                     kw.get("seed") or 0, kw.get("inp"), kw.get("out"), kw.get("cap") or fa.DEFAULT_DEGREE_CAP)


def _config_or_exit(command: str, kw: dict) -> RunConfig:
    try:
        return make_config(command, kw)
    except InputError as e:
        click.echo(f"input error: {e}", err=True)
        sys.exit(EXIT_INPUT)


@click.group()
def main():
    """Flat exponential approximation: construction, verification and certificates."""


@main.command()
@param_options
@common_options
def construct(**kw):
    """Build Phat (and the realized P when --eps is given)."""
    _run(cmd_construct, _config_or_exit("construct", kw))


@main.command()
@common_options
@click.option("--skip-roots", is_flag=True, help="skip the global real-root certification")
def verify(skip_roots, **kw):
    """Check every property of a constructed polynomial."""
    _run(cmd_verify, _config_or_exit("verify", kw), not skip_roots)


@main.command()
@common_options
@click.option("--toy", type=click.Choice(sorted(TOYS)), default=None, help="certify a built-in small instance")
@click.option("--variant", type=click.Choice(["theorem", "symmetric"]), default="theorem")
def certify(toy, variant, **kw):
    """Build and check the SoS certificate for R(x, y)."""
    _run(cmd_certify, _config_or_exit("certify", kw), toy, variant)


@main.command("verify-cert")
@common_options
def verify_cert(**kw):
    """Re-check a certificate file on its own."""
    _run(cmd_verify_cert, _config_or_exit("verify-cert", kw))


@main.command()
@click.option("--betas", type=str, default="1-5", help="e.g. 1-5 or 1,2,4; empty for no rows")
@click.option("--eps", "eps_values", multiple=True, help="accuracy targets (repeatable)")
@click.option("--c-ell", type=str)
@click.option("--c-s", type=str)
@click.option("--c-r", type=str)
@click.option("--c-k", type=str)
@common_options
def bench(betas, eps_values, **kw):
    """Degree table: flat construction against the product of truncated exponentials."""
    cfg = _config_or_exit("bench", kw)
    try:
        beta_list = parse_betas(betas)
    except ValueError:
        click.echo(f"input error: bad --betas {betas!r}", err=True)
        sys.exit(EXIT_INPUT)
    _run(cmd_bench, cfg, beta_list, list(eps_values))


@main.command("demo-gibbs")
@click.option("--n", "n", type=int, default=3)
@click.option("--beta", type=str, default="2")
@click.option("--eps", type=str, default="1/10")
@common_options
def demo_gibbs(n, **kw):
    """Spectral error of the realized P on a random ring Hamiltonian."""
    _run(cmd_demo_gibbs, _config_or_exit("demo-gibbs", kw), n)


if __name__ == "__main__":
    main()
