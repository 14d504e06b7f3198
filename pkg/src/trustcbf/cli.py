"""Command line front end: run scenarios, validate them, and self-test the solvers.

Subcommands
    run        simulate a scenario file and write trace.csv, pairs.csv,
               summary.json, and four SVG charts into --out
    validate   parse and check a scenario file, writing nothing
    oracle     run the QP and LP solvers against their independent oracles

Exit codes: 0 success, 2 usage error, 3 scenario validation error, 4 I/O
error, 5 when --strict is set and the run hit any infeasibility fallback.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .dynamics import Box
from .sim import (AgentSpec, Scenario, Trace, ValidationError, metrics, run)
from .solvers import (QPProblem, lp_vertex_oracle, qp_oracle,
                      random_lp_instance, random_qp_instance, solve_lp,
                      solve_qp)
from .trust import TrustParams
from .world import AgentKind, Model

FLOAT_FMT = "{:.17g}"

TRACE_HEADER = "t,agent_id,px,py,psi,u1_ref,u2_ref,u1,u2,fallback"
PAIRS_HEADER = "t,i,j,h,alpha,rho,rho_d,rho_theta,margin"

_PALETTE = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
            "#8c564b", "#e377c2", "#7f7f7f", "#17becf", "#bcbd22"]


@dataclass
class RunConfig:
    command: str
    scenario: Optional[Path] = None
    out: Optional[Path] = None
    dt: Optional[float] = None
    duration: Optional[float] = None
    seed: Optional[int] = None
    rho_bar_d: Optional[float] = None
    fixed_alpha: bool = False
    strict: bool = False
    emit_svg: bool = True
    oracle_qp: int = 100
    oracle_lp: int = 100
    oracle_seed: int = 0


def _positive_float(text: str) -> float:
    v = float(text)
    if v <= 0.0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return v


def parse_args(argv: Sequence[str]) -> RunConfig:
    parser = argparse.ArgumentParser(prog="trustcbf",
                                     description="Trust-adaptive safety-filter simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="simulate a scenario and write outputs")
    p_run.add_argument("--scenario", required=True, type=Path)
    p_run.add_argument("--out", required=True, type=Path)
    p_run.add_argument("--dt", type=_positive_float, default=None)
    p_run.add_argument("--duration", type=_positive_float, default=None)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--rho-bar-d", dest="rho_bar_d", type=float, default=None)
    p_run.add_argument("--fixed-alpha", action="store_true",
                       help="freeze every pair rate at alpha0 (baseline mode)")
    p_run.add_argument("--no-svg", action="store_true", help="skip chart generation")
    p_run.add_argument("--strict", action="store_true",
                       help="exit 5 if any step needed an emergency fallback")

    p_val = sub.add_parser("validate", help="check a scenario file without running it")
    p_val.add_argument("--scenario", required=True, type=Path)

    p_or = sub.add_parser("oracle", help="self-test the solvers against their oracles")
    p_or.add_argument("--qp", type=int, default=100, help="number of random QP instances")
    p_or.add_argument("--lp", type=int, default=100, help="number of random LP instances")
    p_or.add_argument("--seed", type=int, default=0)

    ns = parser.parse_args(argv)
    if ns.command == "run":
        return RunConfig(command="run", scenario=ns.scenario, out=ns.out, dt=ns.dt,
                         duration=ns.duration, seed=ns.seed, rho_bar_d=ns.rho_bar_d,
                         fixed_alpha=ns.fixed_alpha, strict=ns.strict,
                         emit_svg=not ns.no_svg)
    if ns.command == "validate":
        return RunConfig(command="validate", scenario=ns.scenario)
    return RunConfig(command="oracle", oracle_qp=ns.qp, oracle_lp=ns.lp,
                     oracle_seed=ns.seed)


# --- scenario JSON ---------------------------------------------------------

_TOP_KEYS = {"agents", "duration", "dt", "trust", "flags", "seed",
             "gamma_nominal", "lookahead"}
_AGENT_KEYS = {"kind", "model", "start", "target", "d_min", "box", "prey", "speed",
               "gain"}
_TRUST_KEYS = {"rho_bar_d", "beta", "k_blend", "gamma_alpha", "alpha0",
               "alpha_min", "alpha_max", "L_F", "L_hdot", "v_max"}
_FLAG_KEYS = {"fixed_alpha", "alpha_update_order", "rate_floor"}


def _reject_unknown(obj: dict, allowed: set, where: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise ValidationError(f"{where}: unknown keys {sorted(unknown)}")


def _number(obj: dict, key: str, where: str, default=None):
    if key not in obj:
        if default is None:
            raise ValidationError(f"{where}.{key}: required")
        return default
    v = obj[key]
    if not isinstance(v, (int, float)) or isinstance(v, bool):
        raise ValidationError(f"{where}.{key}: expected a number, got {v!r}")
    return float(v)


def _parse_agent(obj: dict, idx: int) -> AgentSpec:
    where = f"agents[{idx}]"
    if not isinstance(obj, dict):
        raise ValidationError(f"{where}: expected an object")
    _reject_unknown(obj, _AGENT_KEYS, where)
    try:
        kind = AgentKind(obj.get("kind"))
    except ValueError:
        raise ValidationError(f"{where}.kind: expected one of "
                              f"{[k.value for k in AgentKind]}, got {obj.get('kind')!r}")
    try:
        model = Model(obj.get("model"))
    except ValueError:
        raise ValidationError(f"{where}.model: expected one of "
                              f"{[m.value for m in Model]}, got {obj.get('model')!r}")
    start = obj.get("start")
    if (not isinstance(start, list) or len(start) not in (2, 3)
            or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in start)):
        raise ValidationError(f"{where}.start: expected [x, y] or [x, y, psi]")
    target = obj.get("target")
    if target in (None, "unknown"):
        target_t = None
    elif (isinstance(target, list) and len(target) == 2
          and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in target)):
        target_t = (float(target[0]), float(target[1]))
    else:
        raise ValidationError(f"{where}.target: expected [x, y] or \"unknown\"")
    box = obj.get("box", [[-3.0, -3.0], [3.0, 3.0]])
    try:
        lo, hi = box
        box_t = Box(tuple(float(v) for v in lo), tuple(float(v) for v in hi))
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{where}.box: expected [[lo...], [hi...]] containing 0 ({exc})")
    prey = obj.get("prey")
    if prey is not None and (not isinstance(prey, int) or isinstance(prey, bool)):
        raise ValidationError(f"{where}.prey: expected an agent id")
    return AgentSpec(kind=kind, model=model,
                     start=tuple(float(v) for v in start), target=target_t,
                     d_min=_number(obj, "d_min", where, 0.5),
                     box=box_t, prey=prey,
                     speed=_number(obj, "speed", where, 1.0),
                     gain=_number(obj, "gain", where, 2.0))


def load_scenario(path: Path) -> Scenario:
    """Parse and validate a scenario file; raises ValidationError on any defect."""
    try:
        raw = Path(path).read_text()
    except OSError as exc:
        raise ValidationError(f"cannot read scenario file: {exc}")
    try:
        obj = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not valid JSON ({exc})")
    if not isinstance(obj, dict):
        raise ValidationError(f"{path}: top level must be an object")
    _reject_unknown(obj, _TOP_KEYS, str(path))
    agents_raw = obj.get("agents")
    if not isinstance(agents_raw, list) or not agents_raw:
        raise ValidationError("agents: expected a nonempty array")
    agents = [_parse_agent(a, idx) for idx, a in enumerate(agents_raw)]

    trust_obj = obj.get("trust", {})
    if not isinstance(trust_obj, dict):
        raise ValidationError("trust: expected an object")
    _reject_unknown(trust_obj, _TRUST_KEYS, "trust")
    trust = TrustParams()
    for key in _TRUST_KEYS:
        if key in trust_obj:
            setattr(trust, key, _number(trust_obj, key, "trust"))

    flags = obj.get("flags", {})
    if not isinstance(flags, dict):
        raise ValidationError("flags: expected an object")
    _reject_unknown(flags, _FLAG_KEYS, "flags")
    fixed_alpha = flags.get("fixed_alpha", False)
    if not isinstance(fixed_alpha, bool):
        raise ValidationError("flags.fixed_alpha: expected true or false")
    rate_floor = flags.get("rate_floor", True)
    if not isinstance(rate_floor, bool):
        raise ValidationError("flags.rate_floor: expected true or false")
    order = flags.get("alpha_update_order", "before")

    seed = obj.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ValidationError("seed: expected an integer")

    s = Scenario(agents=agents,
                 duration=_number(obj, "duration", str(path)),
                 dt=_number(obj, "dt", str(path), 0.05),
                 trust=trust, fixed_alpha=fixed_alpha,
                 alpha_update_order=order, rate_floor=rate_floor, seed=seed,
                 gamma_nominal=_number(obj, "gamma_nominal", str(path), 1.0),
                 lookahead=_number(obj, "lookahead", str(path), 0.1))
    s.validate()
    return s


def scenario_to_dict(s: Scenario) -> dict:
    """Inverse of load_scenario, used to generate the shipped scenario files."""
    agents = []
    for a in s.agents:
        d = {"kind": a.kind.value, "model": a.model.value, "start": list(a.start),
             "target": list(a.target) if a.target is not None else "unknown",
             "d_min": a.d_min, "box": [list(a.box.lo), list(a.box.hi)]}
        if a.prey is not None:
            d["prey"] = a.prey
        if a.kind is AgentKind.UNCOOPERATIVE:
            d["speed"] = a.speed
        if a.kind is AgentKind.ADVERSARIAL:
            d["gain"] = a.gain
        agents.append(d)
    t = s.trust
    return {
        "agents": agents,
        "duration": s.duration,
        "dt": s.dt,
        "trust": {"rho_bar_d": t.rho_bar_d, "beta": t.beta, "k_blend": t.k_blend,
                  "gamma_alpha": t.gamma_alpha, "alpha0": t.alpha0,
                  "alpha_min": t.alpha_min, "alpha_max": t.alpha_max,
                  "L_F": t.L_F, "L_hdot": t.L_hdot, "v_max": t.v_max},
        "flags": {"fixed_alpha": s.fixed_alpha,
                  "alpha_update_order": s.alpha_update_order,
                  "rate_floor": s.rate_floor},
        "seed": s.seed,
        "gamma_nominal": s.gamma_nominal,
        "lookahead": s.lookahead,
    }


# --- outputs ---------------------------------------------------------------

def _f(x: float) -> str:
    return FLOAT_FMT.format(float(x))


def write_trace_csv(trace: Trace, path: Path) -> None:
    lines = [TRACE_HEADER]
    for k, t in enumerate(trace.times):
        for i, rec in enumerate(trace.agents[k]):
            lines.append(",".join([
                _f(t), str(i), _f(rec.px), _f(rec.py), _f(rec.psi),
                _f(rec.u_ref[0]), _f(rec.u_ref[1]), _f(rec.u[0]), _f(rec.u[1]),
                str(rec.fallback),
            ]))
    path.write_text("\n".join(lines) + "\n")


def write_pairs_csv(trace: Trace, path: Path) -> None:
    lines = [PAIRS_HEADER]
    for k, t in enumerate(trace.times):
        for (i, j), rec in trace.pairs[k].items():
            lines.append(",".join([
                _f(t), str(i), str(j), _f(rec.h), _f(rec.alpha), _f(rec.rho),
                _f(rec.rho_d), _f(rec.rho_theta), _f(rec.margin),
            ]))
    path.write_text("\n".join(lines) + "\n")


def read_trace_csv(path: Path) -> dict[str, np.ndarray]:
    """Load a trace.csv back into column arrays (exact round trip of %.17g floats)."""
    lines = Path(path).read_text().strip().split("\n")
    header = lines[0].split(",")
    cols = {name: [] for name in header}
    for line in lines[1:]:
        for name, cell in zip(header, line.split(",")):
            cols[name].append(float(cell))
    return {name: np.array(vals) for name, vals in cols.items()}


def read_pairs_csv(path: Path) -> dict[str, np.ndarray]:
    return read_trace_csv(path)


def _svg_line_chart(path: Path, title: str, series: list, xlabel: str, ylabel: str,
                    width: int = 800, height: int = 600) -> None:
    """Hand-emitted SVG polyline chart.

    ``series`` is a list of (label, xs, ys).  The axis range is exactly the
    data range (no padding), recorded on the root element as data-x-min/max
    and data-y-min/max so downstream checks can read the plotted extents.
    """
    xs_all = np.concatenate([np.asarray(xs, dtype=float) for _, xs, _ in series])
    ys_all = np.concatenate([np.asarray(ys, dtype=float) for _, _, ys in series])
    x_min, x_max = float(np.min(xs_all)), float(np.max(xs_all))
    y_min, y_max = float(np.min(ys_all)), float(np.max(ys_all))
    x_span = x_max - x_min or 1.0
    y_span = y_max - y_min or 1.0
    ml, mr, mt, mb = 70, 150, 40, 50
    pw, ph = width - ml - mr, height - mt - mb

    def sx(x):
        return ml + (x - x_min) / x_span * pw

    def sy(y):
        return mt + ph - (y - y_min) / y_span * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {width} {height}" '
        f'data-x-min="{_f(x_min)}" data-x-max="{_f(x_max)}" '
        f'data-y-min="{_f(y_min)}" data-y-max="{_f(y_max)}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="24" text-anchor="middle" font-size="16">{title}</text>',
        f'<line x1="{ml}" y1="{mt + ph}" x2="{ml + pw}" y2="{mt + ph}" stroke="black"/>',
        f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{mt + ph}" stroke="black"/>',
        f'<text x="{ml + pw / 2:.1f}" y="{height - 12}" text-anchor="middle" font-size="12">{xlabel}</text>',
        f'<text x="18" y="{mt + ph / 2:.1f}" font-size="12" '
        f'transform="rotate(-90 18 {mt + ph / 2:.1f})" text-anchor="middle">{ylabel}</text>',
        f'<text x="{ml - 6}" y="{mt + ph + 4}" text-anchor="end" font-size="10">{y_min:.4g}</text>',
        f'<text x="{ml - 6}" y="{mt + 4}" text-anchor="end" font-size="10">{y_max:.4g}</text>',
        f'<text x="{ml}" y="{mt + ph + 16}" text-anchor="middle" font-size="10">{x_min:.4g}</text>',
        f'<text x="{ml + pw}" y="{mt + ph + 16}" text-anchor="middle" font-size="10">{x_max:.4g}</text>',
    ]
    for idx, (label, xs, ys) in enumerate(series):
        color = _PALETTE[idx % len(_PALETTE)]
        pts = " ".join(f"{sx(float(x)):.2f},{sy(float(y)):.2f}" for x, y in zip(xs, ys))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = mt + 14 + 16 * idx
        parts.append(f'<line x1="{ml + pw + 8}" y1="{ly - 4}" x2="{ml + pw + 28}" y2="{ly - 4}" '
                     f'stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{ml + pw + 32}" y="{ly}" font-size="11">{label}</text>')
    parts.append("</svg>")
    path.write_text("\n".join(parts) + "\n")


def write_charts(trace: Trace, s: Scenario, out: Path) -> list[Path]:
    intact = [i for i, spec in enumerate(s.agents) if spec.kind is AgentKind.INTACT]
    n = len(s.agents)
    times = np.array(trace.times)
    written = []

    traj = [(f"agent {i} ({s.agents[i].kind.value})",
             trace.positions(i)[:, 0], trace.positions(i)[:, 1]) for i in range(n)]
    p = out / "trajectories.svg"
    _svg_line_chart(p, "Agent trajectories", traj, "x [m]", "y [m]")
    written.append(p)

    pair_series = []
    for i in intact:
        for j in range(n):
            if j != i:
                pair_series.append((i, j))
    for name, fname, title in (("alpha", "alphas.svg", "Pair rate parameters"),
                               ("rho", "trust.svg", "Pair trust scores"),
                               ("h", "barriers.svg", "Pair barrier values")):
        series = [(f"({i},{j})", times, trace.pair_series(i, j, name))
                  for i, j in pair_series]
        p = out / fname
        _svg_line_chart(p, title, series, "t [s]", name)
        written.append(p)
    return written


def write_outputs(trace: Trace, summary: dict, s: Scenario, out: Path,
                  emit_svg: bool = True) -> list[Path]:
    out.mkdir(parents=True, exist_ok=True)
    written = []
    p = out / "trace.csv"
    write_trace_csv(trace, p)
    written.append(p)
    p = out / "pairs.csv"
    write_pairs_csv(trace, p)
    written.append(p)
    p = out / "summary.json"
    p.write_text(json.dumps(summary, indent=2) + "\n")
    written.append(p)
    if emit_svg:
        written.extend(write_charts(trace, s, out))
    return written


# --- subcommands -----------------------------------------------------------

def _apply_overrides(s: Scenario, cfg: RunConfig) -> Scenario:
    if cfg.dt is not None:
        s.dt = cfg.dt
    if cfg.duration is not None:
        s.duration = cfg.duration
    if cfg.seed is not None:
        s.seed = cfg.seed
    if cfg.rho_bar_d is not None:
        s.trust.rho_bar_d = cfg.rho_bar_d
    if cfg.fixed_alpha:
        s.fixed_alpha = True
    return s


def _cmd_run(cfg: RunConfig) -> int:
    s = _apply_overrides(load_scenario(cfg.scenario), cfg)
    trace = run(s)
    summary = {
        "config": {
            "scenario": str(cfg.scenario),
            "dt": s.dt, "duration": s.duration, "seed": s.seed,
            "fixed_alpha": s.fixed_alpha, "rho_bar_d": s.trust.rho_bar_d,
            "alpha0": s.trust.alpha0,
        },
        "metrics": metrics(trace, s),
    }
    written = write_outputs(trace, summary, s, cfg.out, emit_svg=cfg.emit_svg)
    m = summary["metrics"]
    print(f"run complete: {len(trace.times)} records, min_h={m['min_h']:.6g}, "
          f"emergency_events={m['emergency_events']}")
    for p in written:
        print(f"  wrote {p}")
    if cfg.strict and m["emergency_events"] > 0:
        print(f"strict mode: {m['emergency_events']} emergency fallback(s)", file=sys.stderr)
        return 5
    return 0


def _cmd_validate(cfg: RunConfig) -> int:
    s = load_scenario(cfg.scenario)
    kinds = ", ".join(f"{i}:{a.kind.value}" for i, a in enumerate(s.agents))
    print(f"OK: {len(s.agents)} agents ({kinds}), duration={s.duration}s, dt={s.dt}s")
    return 0


def _cmd_oracle(cfg: RunConfig) -> int:
    rng = np.random.default_rng(cfg.oracle_seed)
    failures = 0
    worst_gap = 0.0
    infeasible = 0
    for _ in range(cfg.oracle_qp):
        p = random_qp_instance(rng)
        oracle = qp_oracle(p, resolution=1e-3)
        try:
            u, _ = solve_qp(p)
        except Exception:
            failures += 1
            continue
        if oracle is None:
            infeasible += 1
            continue
        val = float(np.sum((u - np.asarray(p.u_ref)) ** 2))
        gap = abs(val - oracle[0])
        worst_gap = max(worst_gap, gap)
        if gap > 1e-3:
            failures += 1
    print(f"qp: {cfg.oracle_qp} instances, worst objective gap {worst_gap:.3e}, "
          f"{failures} failures")
    lp_fail = 0
    lp_worst = 0.0
    for _ in range(cfg.oracle_lp):
        c, rows, box = random_lp_instance(rng)
        v_solver, _ = solve_lp(c, rows, box)
        v_oracle, _ = lp_vertex_oracle(c, rows, box)
        gap = abs(v_solver - v_oracle)
        lp_worst = max(lp_worst, gap)
        if gap > 1e-9:
            lp_fail += 1
    print(f"lp: {cfg.oracle_lp} instances, worst value gap {lp_worst:.3e}, {lp_fail} failures")
    return 0 if failures == 0 and lp_fail == 0 else 1


def main(argv: Optional[Sequence[str]] = None) -> int:
    cfg = parse_args(sys.argv[1:] if argv is None else list(argv))
    try:
        if cfg.command == "run":
            return _cmd_run(cfg)
        if cfg.command == "validate":
            return _cmd_validate(cfg)
        return _cmd_oracle(cfg)
    except ValidationError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 4


def console_main() -> None:
    sys.exit(main())


if __name__ == "__main__":
    console_main()
