"""
Uniformization engine for semi-Markov multi-state models: transition
measures, cashflows, reserves and convergence diagnostics.

    smj validate    --config run.yaml
    smj transition  --config run.yaml [--s 1.0] [--dump-pi]
    smj cashflow    --config run.yaml [--with-mc]
    smj reserve     --config run.yaml [--with-mc]
    smj convergence --config run.yaml

Every command writes CSV files plus ``manifest.json`` into the output
directory.  Exit status is 0 when all hard invariants pass, 1 when one fails
and 2 on configuration errors.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
from pathlib import Path

import numpy as np
from scipy.integrate import trapezoid
from scipy.linalg import expm

from . import __version__
from ._backend import DEFAULT as BACKEND
from ._parallel import pmap
from .config import ConfigError, RunConfig, load_config
from .grid import grid_deviation, grid_deviation_bound, make_rng, poisson_tail_index, sample_grid
from .intensity import augment, lipschitz_audit, validate
from .kernel import UniformizationKernel, normalization_report
from .monte_carlo import mc_cashflow, mc_reserve
from .pi_engine import c_sequence, dump_pi_csv, tv_distance
from .valuation import augment_payments, cashflow, reserve

DEFECT_SLACK = 1e-8
ACCUM_SLACK = 1e-12
Z_LIMIT = 3.0


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


class _Out:
    """Output directory that remembers what it wrote."""

    def __init__(self, directory, cfg: RunConfig, command: str):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.cfg = cfg
        self.command = command
        self.files = []

    def csv(self, name, header, rows):
        path = self.dir / name
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([_fmt(x) for x in r])
        self.files.append(name)
        return path

    def manifest(self, extra=None):
        files = {}
        for name in sorted(set(self.files)):
            files[name] = hashlib.sha256((self.dir / name).read_bytes()).hexdigest()
        doc = {
            "command": self.command,
            "version": __version__,
            "kernel_backend": BACKEND,
            "config": self.cfg.model_dump(mode="json"),
            "files": files,
        }
        if extra:
            doc.update(extra)
        (self.dir / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _cells(cfg: RunConfig):
    """``(gamma, mode, seed)`` triples in a fixed order; unconditional cells carry no seed."""
    out = []
    for g in cfg.engine.gammas:
        for mode in cfg.engine.modes:
            if mode == "conditional":
                out.extend((float(g), mode, int(s)) for s in cfg.engine.seeds)
            else:
                out.append((float(g), mode, None))
    return out


def _kernel(fam, cfg, gamma, mode, seed, horizon=None):
    return UniformizationKernel(fam, gamma, horizon or cfg.engine.horizon, mode, seed, tail_prob=cfg.engine.tail_prob)


def _start_problem(cfg: RunConfig):
    """Family, payments and horizon seen from the configured start ``(t, u)``."""
    fam = cfg.family()
    pay = cfg.payment_spec(fam.states)
    t, u = cfg.start.time, cfg.start.duration
    if t == 0 and u == 0:
        return fam, pay, cfg.engine.horizon, [s - 1 for s in cfg.start.states]
    return augment(fam, t, u), augment_payments(pay, t, u), cfg.engine.horizon - t, [s - 1 for s in cfg.start.states]


# commands -------------------------------------------------------------------

def cmd_validate(cfg: RunConfig, args) -> int:
    print(cfg.echo(), end="")
    fam = cfg.family()
    T = cfg.engine.horizon
    pts = [(s, v) for s in np.linspace(0, T, 41) for v in np.linspace(0, T, 41)]
    rep = validate(fam, pts)
    print(f"# family: {rep}")
    ok = rep.valid
    if fam.lipschitz_K is not None:
        ratio, K = lipschitz_audit(fam, ((0, T), (0, T)))
        print(f"# Lipschitz audit: observed {ratio:.6g} <= K = {K:.6g}: {'pass' if ratio <= K else 'FAIL'}")
        ok &= ratio <= K
    for g in cfg.engine.gammas:
        if g < fam.gamma0:
            print(f"# gamma {g:g} below gamma0 = {fam.gamma0:.6g}: uniformization rate too small")
            ok = False
    return 0 if ok else 1


def cmd_transition(cfg: RunConfig, args) -> int:
    out = _Out(args.out, cfg, "transition")
    fam = cfg.family()
    J = fam.states
    s_list = args.s if args.s else cfg.engine.transition_s
    limit = cfg.engine.tail_prob + DEFECT_SLACK
    defects = []
    bad = 0
    for gamma, mode, seed in _cells(cfg):
        k = _kernel(fam, cfg, gamma, mode, seed, max(max(s_list), 1e-12))
        tag = f"g{gamma:g}_{mode}_seed{'none' if seed is None else seed}"
        rows = []
        for s in s_list:
            m = k.transition(s, density=s > 0, v_grid=None)
            for i in range(J):
                for j in range(J):
                    rows.append((s, s, i + 1, j + 1, "atom", m.atom[i, j], mode, gamma, seed))
            if m.density is not None:
                for a, v in enumerate(m.v_grid):
                    for i in range(J):
                        for j in range(J):
                            rows.append((s, v, i + 1, j + 1, "density", m.density[a, i, j], mode, gamma, seed))
            d = normalization_report(m)
            for i in range(J):
                ok = d[i] <= limit
                bad += not ok
                defects.append((gamma, mode, seed, s, i + 1, d[i], m.truncation_mass, ok))
        out.csv(f"transition_{tag}.csv", ["s", "v", "i", "j", "p_type", "value", "mode", "gamma", "seed"], rows)
        if args.dump_pi:
            dump_pi_csv(k.table, out.dir / f"pi_{tag}.csv", seed)
            out.files.append(f"pi_{tag}.csv")
    out.csv("transition_defects.csv", ["gamma", "mode", "seed", "s", "i", "defect", "truncation_mass", "ok"], defects)
    out.manifest()
    worst = max(d[5] for d in defects)
    print(f"transition: {len(defects)} defects checked, max {worst:.3g} (limit {limit:.3g}), {bad} violations")
    return 1 if bad else 0


def _z(c, mean, se):
    if se > 0:
        return (c - mean) / se
    return 0.0 if abs(c - mean) <= 1e-12 * max(1.0, abs(mean)) else math.copysign(math.inf, c - mean)


def cmd_cashflow(cfg: RunConfig, args) -> int:
    out = _Out(args.out, cfg, "cashflow")
    fam, pay, T, states = _start_problem(cfg)
    s_grid = cfg.cashflow_grid() * (T / cfg.engine.horizon)
    rows, curves = [], {}
    for gamma, mode, seed in _cells(cfg):
        k = _kernel(fam, cfg, gamma, mode, seed, T)
        c = cashflow(k, pay, s_grid, cfg.engine.N_v)
        for i in states:
            curves[gamma, mode, seed, i] = (c.values[:, i], c.point_mass[:, i])
            for n, s in enumerate(s_grid):
                rows.append((s, i + 1, c.values[n, i], c.point_mass[n, i], gamma, mode, seed))
    out.csv("cashflow.csv", ["s", "i", "c_value", "point_mass", "gamma", "mode", "seed"], rows)
    if args.with_mc:
        base = cfg.family()
        base_pay = cfg.payment_spec(base.states)
        t0, u0 = cfg.start.time, cfg.start.duration
        mc_rows, cmp_rows, summary = [], [], []
        for i in states:
            for ms in cfg.mc.seeds:
                mc = mc_cashflow(base, base_pay, i, u0, args.n_paths or cfg.mc.n_paths, s_grid, ms,
                                 cfg.mc.gamma0_rate, t0)
                for n, s in enumerate(s_grid):
                    mc_rows.append((s, i + 1, mc.mean[n], mc.se[n], mc.n_paths, ms))
                for (gamma, mode, seed, ii), (vals, pm) in curves.items():
                    if ii != i:
                        continue
                    zs = []
                    for n, s in enumerate(s_grid):
                        z = _z(vals[n] + pm[n], mc.mean[n], mc.se[n])
                        zs.append(abs(z) <= Z_LIMIT)
                        cmp_rows.append((s, i + 1, gamma, mode, seed, ms, vals[n] + pm[n], mc.mean[n], mc.se[n], z))
                    frac = float(np.mean(zs))
                    summary.append((i + 1, gamma, mode, seed, ms, frac))
        out.csv("cashflow_mc.csv", ["s", "i0", "mc_mean", "mc_se", "n_paths", "seed"], mc_rows)
        out.csv("cashflow_compare.csv", ["s", "i", "gamma", "mode", "seed", "mc_seed", "c_value", "mc_mean", "mc_se",
                                         "z"], cmp_rows)
        out.csv("cashflow_compare_summary.csv", ["i", "gamma", "mode", "seed", "mc_seed", "frac_abs_z_le_3"], summary)
        for r in summary:
            print(f"cashflow vs MC: i={r[0]} gamma={r[1]:g} {r[2]} seed={_fmt(r[3]) or '-'}: "
                  f"{100 * r[5]:.1f}% of points with |z| <= 3")
    out.manifest()
    print(f"cashflow: {len(rows)} rows written to {out.dir}")
    return 0


def cmd_reserve(cfg: RunConfig, args) -> int:
    out = _Out(args.out, cfg, "reserve")
    fam, pay, T, states = _start_problem(cfg)
    disc = cfg.discount_curve().shifted(cfg.start.time)
    t, u = cfg.start.time, cfg.start.duration
    rows = []
    for gamma, mode, seed in _cells(cfg):
        k = _kernel(fam, cfg, gamma, mode, seed, T)
        V = reserve(k, pay, disc, None, cfg.engine.N_s, cfg.engine.N_v)
        for i in states:
            rows.append((i + 1, u, t, V[i], gamma, mode, seed))
    out.csv("reserve.csv", ["i", "u", "t", "V", "gamma", "mode", "seed"], rows)
    if args.with_mc:
        base = cfg.family()
        base_pay = cfg.payment_spec(base.states)
        mrows = []
        for i in states:
            for ms in cfg.mc.seeds:
                r = mc_reserve(base, base_pay, cfg.discount_curve(), i, u, args.n_paths or cfg.mc.n_paths, ms, t,
                               cfg.mc.gamma0_rate)
                mrows.append((i + 1, u, t, r.mean, r.se, r.n_paths, ms))
        out.csv("reserve_mc.csv", ["i", "u", "t", "mc_mean", "mc_se", "n_paths", "seed"], mrows)
    out.manifest()
    for r in rows:
        print(f"reserve: i={r[0]} gamma={r[4]:g} {r[5]} seed={_fmt(r[6]) or '-'}: V = {r[3]:.10g}")
    return 0


def tv_envelope(s, gamma, epsilon):
    alpha = 2.0 * math.exp(0.5 + epsilon / 2.0 + 4.0)
    return (s + 1.0) * alpha * math.log(gamma) * gamma ** (-0.5 + epsilon / 2.0)


def measure_tv(a, b):
    """Atom TV and integrated density TV (max over rows) between two transition measures on one v-grid."""
    atom = float(np.abs(a.atom - b.atom).sum(axis=1).max())
    dens = float(trapezoid(np.abs(a.density - b.density).sum(axis=2), a.v_grid, axis=0).max())
    return atom, dens


def convergence_cell(fam, cfg: RunConfig, gamma, seed, uncond=None):
    """One (gamma, seed) row of the convergence study."""
    e = cfg.engine
    s = e.convergence_s
    eps = e.epsilon
    L_max = poisson_tail_index(gamma * s, e.tail_prob)
    k_eps = int(math.floor(gamma ** (1.0 + eps)))
    n_lev = max(L_max, k_eps) + 1
    grid = sample_grid(gamma, max(s, n_lev / gamma), e.tail_prob, seed)
    cond = UniformizationKernel(fam, gamma, s, "conditional", seed, grid=grid, tail_prob=e.tail_prob)
    if uncond is None:
        uncond = UniformizationKernel(fam, gamma, s, "unconditional", tail_prob=e.tail_prob)
    C = c_sequence(cond.steps.table(n_lev), uncond.steps.table(n_lev))
    # TV <= k C_k on every level, full range plus random duration subsets
    rng = make_rng(np.random.SeedSequence([int(seed), int(round(gamma * 1000)), 0xB1]))
    accum_max, margin, zero_ok = 0.0, math.inf, True
    for k in range(L_max + 1):
        subsets = [None] + [np.nonzero(rng.random(k + 1) < 0.5)[0] for _ in range(e.accum_subsets)]
        for S in subsets:
            lhs = tv_distance(cond.table, uncond.table, k, S).max()
            accum_max = max(accum_max, lhs)
            if k == 0:
                zero_ok = lhs == 0.0
            else:
                margin = min(margin, k * C[k] - lhs)
    accum_ok = zero_ok and margin >= -ACCUM_SLACK
    dev = grid_deviation(grid, eps)
    K = fam.lipschitz_K
    q_rhs = 3.0 * K * dev / gamma if K is not None else None
    q_ok = True if q_rhs is None else bool(C[k_eps] <= q_rhs + ACCUM_SLACK)
    v = np.linspace(0.0, s, e.N_v + 1)
    mc_ = cond.transition(s, v)
    mu_ = uncond.transition(s, v)
    atom_tv, dens_tv = measure_tv(mc_, mu_)
    bound = tv_envelope(s, gamma, eps)
    d_c = float(normalization_report(mc_).max())
    d_u = float(normalization_report(mu_).max())
    o_c = o_u = None
    if fam.duration_independent and fam.lipschitz_K == 0:
        exact = expm(np.asarray(fam(0.0, 0.0)) * s)
        o_c = float(np.abs(mc_.marginal - exact).max())
        o_u = float(np.abs(mu_.marginal - exact).max())
    return dict(
        gamma=gamma, seed=seed, L_max=L_max, k_eps=k_eps, grid_deviation=dev,
        grid_deviation_bound=grid_deviation_bound(gamma, eps), C_k_eps=C[k_eps], qtilde_bound=q_rhs,
        qtilde_ok=q_ok, accum_max_lhs=accum_max, accum_min_margin=margin, accum_ok=accum_ok, atom_tv=atom_tv,
        density_tv=dens_tv, tv_envelope=bound, envelope_ok=atom_tv <= bound and dens_tv <= bound,
        defect_conditional=d_c, defect_unconditional=d_u, oracle_error_conditional=o_c,
        oracle_error_unconditional=o_u,
    )


CONV_COLUMNS = ["gamma", "seed", "L_max", "k_eps", "grid_deviation", "grid_deviation_bound", "C_k_eps", "qtilde_bound",
                "qtilde_ok", "accum_max_lhs", "accum_min_margin", "accum_ok", "atom_tv", "density_tv", "tv_envelope",
                "envelope_ok", "defect_conditional", "defect_unconditional", "oracle_error_conditional",
                "oracle_error_unconditional"]


def cmd_convergence(cfg: RunConfig, args) -> int:
    out = _Out(args.out, cfg, "convergence")
    fam = cfg.family()
    e = cfg.engine
    limit = e.tail_prob + DEFECT_SLACK
    rows = []
    for gamma in e.gammas:
        gamma = float(gamma)
        uncond = UniformizationKernel(fam, gamma, e.convergence_s, "unconditional", tail_prob=e.tail_prob)
        rows.extend(pmap(lambda sd: convergence_cell(fam, cfg, gamma, int(sd), uncond), e.seeds))
    out.csv("convergence.csv", CONV_COLUMNS, [[r[c] for c in CONV_COLUMNS] for r in rows])
    summary = []
    for gamma in e.gammas:
        rs = [r for r in rows if r["gamma"] == float(gamma)]
        summary.append((
            float(gamma), len(rs), float(np.mean([r["atom_tv"] for r in rs])),
            float(np.mean([r["density_tv"] for r in rs])), float(np.mean([r["envelope_ok"] for r in rs])),
            all(r["accum_ok"] for r in rs), all(r["qtilde_ok"] for r in rs),
            max(max(r["defect_conditional"], r["defect_unconditional"]) for r in rs),
        ))
    out.csv("convergence_summary.csv", ["gamma", "n_seeds", "mean_atom_tv", "mean_density_tv", "frac_envelope_ok",
                                        "accum_all_ok", "qtilde_all_ok", "max_defect"], summary)
    hard = []
    if not all(r["accum_ok"] for r in rows):
        hard.append("step accumulation inequality TV <= k C_k")
    if not all(r["qtilde_ok"] for r in rows):
        hard.append("one-step matrix distance bound")
    if any(max(r["defect_conditional"], r["defect_unconditional"]) > limit for r in rows):
        hard.append("normalization defect")
    for g, n, a, d, f, lo, qo, md in summary:
        print(f"convergence: gamma={g:g} seeds={n} mean atom TV={a:.3e} mean density TV={d:.3e} "
              f"envelope ok {100 * f:.0f}% accumulation {'ok' if lo else 'FAIL'} max defect {md:.2e}")
    means = [s[2] + s[3] for s in summary]
    if len(means) > 1:
        trend = all(b < a for a, b in zip(means, means[1:])) or all(m == 0 for m in means)
        print(f"convergence: seed-averaged TV {'decreasing' if trend else 'NOT decreasing'} in gamma")
    out.manifest({"hard_invariant_failures": hard})
    if hard:
        print("convergence: hard invariant violated: " + ", ".join(hard), file=sys.stderr)
        return 1
    return 0


COMMANDS = {
    "validate": cmd_validate,
    "transition": cmd_transition,
    "cashflow": cmd_cashflow,
    "reserve": cmd_reserve,
    "convergence": cmd_convergence,
}


def _float_list(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="run config (YAML)")
    common.add_argument("--out", help="output directory (default: output.directory of the config)")
    common.add_argument("--gamma", type=_float_list, help="comma-separated uniformization rates")
    common.add_argument("--seeds", type=_int_list, help="comma-separated grid seeds")
    common.add_argument("--mode", choices=["conditional", "unconditional", "both"])
    p = argparse.ArgumentParser(prog="smj", description=__doc__.split("\n\n")[0].strip())
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("validate", parents=[common], help="check a config and its intensity family")
    t = sub.add_parser("transition", parents=[common], help="dump transition measures")
    t.add_argument("--s", type=_float_list, help="comma-separated evaluation times")
    t.add_argument("--dump-pi", action="store_true", help="also write the Pi tables")
    for name, text in (("cashflow", "cashflow curves"), ("reserve", "prospective reserves")):
        c = sub.add_parser(name, parents=[common], help=text)
        c.add_argument("--with-mc", action="store_true", help="run the Monte Carlo oracle as well")
        c.add_argument("--n-paths", type=int, help="override mc.n_paths")
    sub.add_parser("convergence", parents=[common], help="conditional vs unconditional diagnostics")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        upd = {}
        if args.gamma:
            upd["gammas"] = args.gamma
        if args.seeds:
            upd["seeds"] = args.seeds
        if args.mode:
            upd["mode"] = args.mode
        if upd:
            data = cfg.model_dump()
            data["engine"].update(upd)
            cfg = RunConfig.model_validate(data)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    args.out = args.out or cfg.output.directory
    for attr in ("s", "dump_pi", "with_mc", "n_paths"):
        if not hasattr(args, attr):
            setattr(args, attr, None)
    try:
        return COMMANDS[args.command](cfg, args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
