import argparse
import csv
import io
import json
import logging
import os
import sys
import time
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, FiniteFloat, PositiveInt, ValidationError

from oqw.qcore.main import (
    DEFAULT_POLICY,
    Coin1D,
    Coin2D,
    CoinCT,
    DensityOperator,
    NumericPolicy,
    OQWError,
    PreconditionError,
    StructuralError,
    ValidationReport,
    range_basis,
    validate_coin,
)
from oqw.classify1d.main import Verdict, classify_1d
from oqw.classify2d.main import classify_2d_ct, classify_2d_discrete
from oqw.simulate.main import (
    empirical_stats,
    return_mass_partial_sum,
    simulate_ensemble,
)
from oqw.cli.registry import REGISTRY, AnyCoin, build_fixture, fixture_names


logger = logging.getLogger("oqw.cli")

LOG_LEVEL = os.getenv("OQW_LOG_LEVEL", "INFO")

# значащие цифры в отчётах
DIGITS = 12


# ---------- Формат файла монеты ----------

Entry = Tuple[FiniteFloat, FiniteFloat]
Matrix = List[List[Entry]]

REQUIRED = {
    "oqw1d": ("L", "R"),
    "oqw2d": ("D1", "D2", "D3", "D4"),
    "ctoqw2d": ("A1", "A2", "A3", "A4", "H"),
}
OPTIONAL = {"oqw1d": ("B",), "oqw2d": (), "ctoqw2d": ()}


class CoinSpecFile(BaseModel):
    kind: Literal["oqw1d", "oqw2d", "ctoqw2d"]
    dimension: PositiveInt
    matrices: Dict[str, Matrix]
    metadata: Dict[str, Any] = {}

    def to_coin(self) -> AnyCoin:
        names = set(self.matrices)
        missing = [n for n in REQUIRED[self.kind] if n not in names]
        unknown = sorted(names - set(REQUIRED[self.kind]) - set(OPTIONAL[self.kind]))
        if missing:
            raise StructuralError(f"matrices: missing {missing} for kind {self.kind}")
        if unknown:
            raise StructuralError(f"matrices: unexpected {unknown} for kind {self.kind}")
        mats = {name: self._matrix(name) for name in names}
        if self.kind == "oqw1d":
            return Coin1D(L=mats["L"], R=mats["R"], B=mats.get("B"))
        if self.kind == "oqw2d":
            return Coin2D(**mats)
        return CoinCT(**mats)

    def _matrix(self, name: str) -> np.ndarray:
        rows = self.matrices[name]
        d = self.dimension
        if len(rows) != d or any(len(r) != d for r in rows):
            raise StructuralError(f"matrices.{name}: expected {d}x{d} entries")
        return np.array([[complex(re, im) for re, im in row] for row in rows])

    @classmethod
    def from_coin(cls, coin: AnyCoin, metadata: Optional[Dict[str, Any]] = None) -> "CoinSpecFile":
        if isinstance(coin, Coin1D):
            kind, names = "oqw1d", (("L", "B", "R") if coin.lazy else ("L", "R"))
        elif isinstance(coin, Coin2D):
            kind, names = "oqw2d", REQUIRED["oqw2d"]
        else:
            kind, names = "ctoqw2d", REQUIRED["ctoqw2d"]
        matrices = {
            n: [[(float(z.real), float(z.imag)) for z in row] for row in getattr(coin, n)]
            for n in names
        }
        return cls(kind=kind, dimension=coin.dim, matrices=matrices, metadata=metadata or {})


def load_coin_file(path: str) -> CoinSpecFile:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise StructuralError(f"{path}: cannot read file ({e.strerror})")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise StructuralError(f"{path}: line {e.lineno}, column {e.colno}: {e.msg}")
    try:
        return CoinSpecFile.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        field = ".".join(str(x) for x in first["loc"])
        raise StructuralError(f"{path}: field '{field}': {first['msg']} ({e.error_count()} error(s))")


# ---------- Отчёты ----------


def sig(x: float) -> float:
    v = float(f"{x:.{DIGITS}g}")
    return 0.0 if v == 0 else v


def classify_coin(coin: AnyCoin, policy: NumericPolicy = DEFAULT_POLICY) -> Verdict:
    if isinstance(coin, Coin1D):
        return classify_1d(coin, policy)
    if isinstance(coin, Coin2D):
        return classify_2d_discrete(coin, policy)
    return classify_2d_ct(coin, policy)


def _snap(x: np.ndarray, tol: float) -> np.ndarray:
    return np.where(np.abs(x) <= tol, 0.0, x)


def verdict_document(verdict: Verdict, policy: NumericPolicy = DEFAULT_POLICY) -> Dict[str, Any]:
    """
    Поля JSON: kind, criterion, enclosures, transient_rank, transient_basis.
    Компоненты базиса ниже rank_tol обнуляются (шум собственного решателя).
    """
    enclosures = []
    for record in verdict.enclosures:
        m = [sig(x) for x in record.m] if isinstance(record.m, tuple) else sig(record.m)
        enclosures.append({"rank": record.rank, "m": m, "recurrent": record.recurrent})
    basis = range_basis(verdict.transient_projector)
    basis = _snap(basis.real, policy.rank_tol) + 1j * _snap(basis.imag, policy.rank_tol)
    return {
        "kind": verdict.kind.value,
        "criterion": verdict.criterion.value,
        "enclosures": enclosures,
        "transient_rank": verdict.transient_rank,
        "transient_basis": [
            [[sig(z.real), sig(z.imag)] for z in basis[:, j]] for j in range(basis.shape[1])
        ],
    }


def dump_json(doc) -> str:
    return json.dumps(doc, indent=2)


def _format_m(m) -> str:
    if isinstance(m, list):
        return "(" + ", ".join(f"{x:.{DIGITS}g}" for x in m) + ")"
    return f"{m:.{DIGITS}g}"


def render_verdict(doc: Dict[str, Any]) -> str:
    lines = [f"kind: {doc['kind']}", f"criterion: {doc['criterion']}", "enclosures:"]
    lines.append(f"  {'#':>3}  {'rank':>4}  {'recurrent':>9}  m")
    for i, e in enumerate(doc["enclosures"], start=1):
        lines.append(f"  {i:>3}  {e['rank']:>4}  {str(e['recurrent']):>9}  {_format_m(e['m'])}")
    lines.append(f"transient rank: {doc['transient_rank']}")
    for v in doc["transient_basis"]:
        lines.append("  " + " ".join(f"{re:+.{DIGITS}g}{im:+.{DIGITS}g}j" for re, im in v))
    return "\n".join(lines)


def render_validation(report: ValidationReport) -> str:
    lines = [f"valid: {report.ok}", f"deficiency: {report.deficiency:.{DIGITS}g}"]
    lines.extend(f"  {m}" for m in report.messages)
    return "\n".join(lines)


# ---------- Воспроизведение примеров ----------


class ReproduceRow(BaseModel):
    example: str
    case: str
    expected: str
    got: str
    passed: bool
    seconds: float
    detail: str = ""


def reproduce(example_id: str, policy: NumericPolicy = DEFAULT_POLICY) -> List[ReproduceRow]:
    if example_id == "all":
        examples = list(REGISTRY.values())
    elif example_id in REGISTRY:
        examples = [REGISTRY[example_id]]
    else:
        raise StructuralError(f"unknown example id '{example_id}' (known: {', '.join(REGISTRY)})")

    rows = []
    for example in examples:
        for case in example.cases:
            start = time.perf_counter()
            try:
                verdict = classify_coin(case.build(), policy)
            except OQWError as e:
                rows.append(ReproduceRow(
                    example=example.id, case=case.name, expected=case.expected.value, got="error",
                    passed=False, seconds=time.perf_counter() - start, detail=e.detail,
                ))
                logger.warning("case %s failed: %s", case.name, e.detail)
                continue
            passed = verdict.kind == case.expected
            detail = ""
            if passed and case.transient_coordinates is not None:
                d = verdict.dim
                want = np.zeros((d, d))
                for k in case.transient_coordinates:
                    want[k, k] = 1.0
                gap = float(np.linalg.norm(verdict.transient_projector - want))
                passed = gap <= 1e-8
                detail = f"P_T gap {gap:.2e}"
            rows.append(ReproduceRow(
                example=example.id, case=case.name, expected=case.expected.value, got=verdict.kind.value,
                passed=passed, seconds=time.perf_counter() - start, detail=detail,
            ))
    return rows


def render_reproduce(rows: List[ReproduceRow]) -> str:
    lines = [f"{'example':<8} {'case':<18} {'expected':<10} {'got':<10} result"]
    for r in rows:
        lines.append(f"{r.example:<8} {r.case:<18} {r.expected:<10} {r.got:<10} {'PASS' if r.passed else 'FAIL'}")
    examples = sorted({r.example for r in rows})
    ok = sum(all(r.passed for r in rows if r.example == e) for e in examples)
    lines.append(f"{ok}/{len(examples)} PASS")
    return "\n".join(lines)


# ---------- Команды ----------


def _policy(args) -> NumericPolicy:
    tol = getattr(args, "tolerance", None)
    return DEFAULT_POLICY if tol is None else DEFAULT_POLICY.with_zero_threshold(tol)


def _write(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_validate(args) -> int:
    coin = load_coin_file(args.path).to_coin()
    report = validate_coin(coin, DEFAULT_POLICY)
    print(render_validation(report))
    return 0 if report.ok else 1


def cmd_classify(args) -> int:
    coin = load_coin_file(args.path).to_coin()
    policy = _policy(args)
    doc = verdict_document(classify_coin(coin, policy), policy)
    print(dump_json(doc) if args.json else render_verdict(doc))
    return 0


def _initial_density(spec: str, d: int) -> Optional[DensityOperator]:
    if spec in ("", "mixed"):
        return None
    if spec.startswith("e") and spec[1:].isdigit() and 1 <= int(spec[1:]) <= d:
        return DensityOperator.basis(d, int(spec[1:]) - 1)
    raise StructuralError(f"--initial: expected 'mixed' or e1..e{d}, got '{spec}'")


def cmd_simulate(args) -> int:
    coin = load_coin_file(args.path).to_coin()
    rho0 = _initial_density(args.initial, coin.dim)
    continuous = isinstance(coin, CoinCT)
    horizon = args.tmax if continuous else args.steps
    if horizon is None or horizon <= 0:
        raise PreconditionError("a positive --steps (discrete) or --tmax (continuous time) is required")

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if args.exact:
        if continuous:
            raise PreconditionError("--exact needs a discrete-time coin")
        sums = return_mass_partial_sum(coin, rho0, int(horizon))
        writer.writerow(["k", "p00", "S"])
        prev = 0.0
        for k, s in enumerate(sums):
            writer.writerow([k, f"{s - prev:.{DIGITS}g}", f"{s:.{DIGITS}g}"])
            prev = s
        _write(buf.getvalue(), args.csv)
        return 0

    trajectories = simulate_ensemble(coin, rho0, horizon, args.trajectories, args.seed)
    stats = empirical_stats(trajectories)
    if args.csv:
        dims = trajectories[0].ndim
        writer.writerow(["traj", "t"] + [f"x{a + 1}" for a in range(dims)])
        for tr in trajectories:
            for t, p in zip(tr.times, tr.positions):
                writer.writerow([tr.index, f"{t:.{DIGITS}g}"] + [int(x) for x in p])
        Path(args.csv).write_text(buf.getvalue())
    report = stats.model_dump(exclude={"occupation"})
    report["drift"] = [sig(x) for x in report["drift"]]
    report["compensated_drift"] = [sig(x) for x in report["compensated_drift"]]
    print(dump_json(report))
    return 0


def cmd_reproduce(args) -> int:
    rows = reproduce(args.example)
    print(render_reproduce(rows))
    return 0 if all(r.passed for r in rows) else 1


def cmd_export(args) -> int:
    try:
        coin = build_fixture(args.fixture)
    except KeyError:
        raise StructuralError(f"unknown fixture '{args.fixture}' (known: {', '.join(fixture_names())})")
    spec = CoinSpecFile.from_coin(coin, metadata={"fixture": args.fixture})
    _write(dump_json(spec.model_dump(mode="json")) + "\n", args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="oqw", description="Recurrence toolkit for homogeneous open quantum walks")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check coin normalization")
    p.add_argument("path")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("classify", help="recurrence verdict of a coin")
    p.add_argument("path")
    p.add_argument("--tolerance", type=float, default=None, help="drift zero-threshold")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("simulate", help="Monte Carlo trajectories or exact partial sums")
    p.add_argument("path")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--tmax", type=float, default=None)
    p.add_argument("--trajectories", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--exact", action="store_true", help="exact evolution, CSV k,p00,S")
    p.add_argument("--initial", default="mixed", help="mixed (I/d) or e<k>")
    p.add_argument("--csv", default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("reproduce", help="check the built-in examples")
    p.add_argument("example", help="example id or 'all'")
    p.set_defaults(func=cmd_reproduce)

    p = sub.add_parser("export", help="write a built-in fixture as a coin file")
    p.add_argument("fixture")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_export)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(
        level=LOG_LEVEL,
        format="%(asctime)s [%(levelname)s] [cli] %(message)s",
        stream=sys.stderr,
    )
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except OQWError as e:
        logger.error("%s failed: %s", args.command, e.detail)
        print(f"error: {e.detail}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
