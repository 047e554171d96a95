"""Command-line front end.

``fbm-tanaka SUBCOMMAND [--key value ...] [--config FILE] [--out DIR]``

The config file holds ``key = value`` lines with ``#`` comments; flags
override it. Every key can be written with ``-`` or ``_``. Exit codes: 0 on
success, 1 on a numerical failure, 2 on a usage error.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from ._validation import DomainError, SolverError
from .fbm import CirculantError, TimeGrid, as_hurst, inner_product_H, iter_chunks, write_paths_csv
from .mc import (
    CHUNK,
    ExperimentConfig,
    EnsembleResult,
    MCEstimate,
    build_model,
    density_diagnostic,
    ladder_samples,
    run_ensemble,
    simulate,
    split_means,
)
from .mollify import smooth_sign
from .oracles import folded_normal_mean, gaussian_peak, mollified_abs_mean
from .quad import default_beta, fractional_norm
from .sde import FbmModel, FouModel
from .tanaka import CONVENTIONS, CSV_FIELDS, pathwise_residual_values

__all__ = ["CliConfig", "UsageError", "parse_config", "run", "main", "SUBCOMMANDS"]

SUBCOMMANDS = ("sample", "solve", "tanaka", "pathwise", "converge", "density")


class UsageError(Exception):
    pass


def _float(text: str) -> float:
    # float() ignores the locale; reject anything else outright
    try:
        v = float(text)
    except ValueError:
        raise UsageError(f"not a number: {text!r}") from None
    if not math.isfinite(v):
        raise UsageError(f"not a finite number: {text!r}")
    return v


def _int(text: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise UsageError(f"not an integer: {text!r}") from None


def _float_list(text: str) -> tuple:
    return tuple(_float(p.strip()) for p in text.split(",") if p.strip())


def _int_list(text: str) -> tuple:
    return tuple(_int(p.strip()) for p in text.split(",") if p.strip())


def _choice(*options):
    def parse(text: str) -> str:
        if text not in options:
            raise UsageError(f"{text!r} is not one of {', '.join(options)}")
        return text
    return parse


# key -> (parser, default as text)
OPTIONS = {
    "model": (_choice("fbm", "fou", "doss", "holder"), "fbm"),
    "hurst": (_float, "0.75"),
    "horizon": (_float, "1"),
    "grid-n": (_int, "2048"),
    "paths": (_int, "4096"),
    "seed": (_int, "42"),
    "level": (_float_list, "0"),
    "mollifier-n": (_int_list, "4,16,64,256"),
    "convention": (_choice(*CONVENTIONS), "argument_at_s"),
    "x0": (_float, "0"),
    "nu": (_float, "1"),
    "method": (_choice("circulant", "cholesky"), "circulant"),
    "time": (_float, "0"),
    "beta": (_float, "0"),
    "norm-paths": (_int, "256"),
}


@dataclass
class CliConfig:
    subcommand: str
    options: dict = field(default_factory=dict)
    out: str = "."

    def __getitem__(self, key):
        return self.options[key]

    def experiment(self) -> ExperimentConfig:
        o = self.options
        return ExperimentConfig(
            model=build_model(o["model"], o["nu"]),
            h=o["hurst"],
            grid=TimeGrid(o["horizon"], o["grid-n"]),
            paths=o["paths"],
            seed=o["seed"],
            levels=o["level"],
            ladder=o["mollifier-n"],
            convention=o["convention"],
            x0=o["x0"],
            method=o["method"],
        )


def _norm_key(key: str) -> str:
    return key.strip().lower().replace("_", "-")


def read_config_file(path: str) -> dict:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            key, value = line.split("=", 1)
            key = _norm_key(key)
            if key == "out":
                out[key] = value.strip()
                continue
            if key not in OPTIONS:
                raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
            out[key] = value.strip()
    return out


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fbm-tanaka", description="Tanaka formula experiments for fBm-driven SDEs.")
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", help="file of 'key = value' lines")
    parser.add_argument("--out", help="output directory (default .)")
    for key in OPTIONS:
        parser.add_argument(f"--{key}", dest=key.replace("-", "_"))
    return parser


def parse_config(argv) -> CliConfig:
    """Parse flags and an optional config file; raises :class:`UsageError`."""
    ns = _build_parser().parse_args(list(argv))
    raw = {k: d for k, (_, d) in OPTIONS.items()}
    out = "."
    if ns.config:
        try:
            from_file = read_config_file(ns.config)
        except OSError as exc:
            raise UsageError(f"cannot read config file: {exc}") from None
        out = from_file.pop("out", out)
        raw.update(from_file)
    for key in OPTIONS:
        flag = getattr(ns, key.replace("-", "_"))
        if flag is not None:
            raw[key] = flag
    if ns.out is not None:
        out = ns.out
    opts = {}
    for key, (parse, _) in OPTIONS.items():
        try:
            opts[key] = parse(raw[key])
        except UsageError as exc:
            raise UsageError(f"--{key}: {exc}") from None
    cfg = CliConfig(ns.subcommand, opts, out)
    _validate(cfg)
    return cfg


def _validate(cfg: CliConfig) -> None:
    o = cfg.options
    try:
        as_hurst(o["hurst"])
        cfg.experiment()
    except DomainError as exc:
        raise UsageError(str(exc)) from None
    if not 0.0 <= o["time"] <= o["horizon"]:
        raise UsageError("--time must lie in [0, horizon]")
    if o["beta"] and not 0.0 < o["beta"] < 1.0:
        raise UsageError("--beta must lie in (0, 1)")
    if o["norm-paths"] < 0:
        raise UsageError("--norm-paths must be nonnegative")
    if cfg.subcommand == "converge" and (len(o["level"]) != 1 or len(o["mollifier-n"]) < 2):
        raise UsageError("converge needs exactly one level and at least two mollifier indices")


# -- subcommands ---------------------------------------------------------------------


def _num(v) -> str:
    return format(float(v), ".17g")


def _fmt_est(e: MCEstimate) -> str:
    return f"{e.mean:.6f} +- {e.stderr:.6f} (n={e.count})"


def _check_line(label: str, e: MCEstimate, target: float) -> str:
    z = (e.mean - target) / e.stderr if e.stderr > 0 else math.inf
    return f"{label}: mean {_fmt_est(e)} oracle {target:.6f} z {z:.2f}"


def _all_paths(cfg: ExperimentConfig):
    parts = [simulate(cfg, a, b) for a, b in iter_chunks(0, cfg.paths, CHUNK)]
    return tuple(np.concatenate([p[i] for p in parts]) for i in range(4))


def _cmd_sample(c: CliConfig, out: str, summary: list) -> None:
    cfg = c.experiment()
    b = _all_paths(cfg)[0]
    with open(os.path.join(out, "paths.csv"), "w", newline="") as fh:
        write_paths_csv(fh, cfg.grid, b)
    T = cfg.grid.horizon
    summary.append(_check_line(f"var B_T (T={T:g})", MCEstimate.from_samples(b[:, -1] ** 2), T ** (2 * cfg.h)))


def _cmd_solve(c: CliConfig, out: str, summary: list) -> None:
    cfg = c.experiment()
    _, x, _, _ = _all_paths(cfg)
    with open(os.path.join(out, "solutions.csv"), "w", newline="") as fh:
        write_paths_csv(fh, cfg.grid, x)
    xt = x[:, -1]
    summary.append(f"mean X_T: {_fmt_est(MCEstimate.from_samples(xt))}")
    if isinstance(cfg.model, FouModel):
        g = cfg.grid
        t = g.nodes
        # cell averages of nu e^{-(T-s)}: the exact weights of the discrete scheme
        phi = cfg.model.nu * (np.exp(-(g.horizon - t[1:])) - np.exp(-(g.horizon - t[:-1]))) / g.dt
        var = inner_product_H(phi, phi, cfg.h, grid=g)
        centred = (xt - cfg.x0 * math.exp(-g.horizon)) ** 2
        summary.append(_check_line("var X_T", MCEstimate.from_samples(centred), var))
    elif isinstance(cfg.model, FbmModel):
        summary.append(_check_line("var X_T", MCEstimate.from_samples((xt - cfg.x0) ** 2), cfg.grid.horizon ** (2 * cfg.h)))


def _cmd_tanaka(c: CliConfig, out: str, summary: list) -> None:
    cfg = c.experiment()
    res = run_ensemble(cfg, keep_rows=True)
    _write_terms(os.path.join(out, "terms.csv"), res)
    with open(os.path.join(out, "ensemble.csv"), "w", newline="") as fh:
        res.write_csv(fh)
    T = cfg.grid.horizon
    for level in cfg.levels:
        for n in cfg.ladder:
            tl = res[(level, n, "trace_local")]
            sk = res[(level, n, "skorokhod")]
            rt = res[(level, n, "residual_tf")]
            tag = f"x={level:g} n={n}"
            if isinstance(cfg.model, FbmModel) and cfg.x0 == 0.0 and level == 0.0 and cfg.convention == "argument_at_s":
                summary.append(_check_line(f"{tag} trace_local vs E|B_T|", tl, folded_normal_mean(T, cfg.h)))
                summary.append(_check_line(f"{tag} trace_local vs E f_n(B_T)", tl, mollified_abs_mean(T, cfg.h, n)))
            else:
                summary.append(f"{tag} trace_local: {_fmt_est(tl)}")
            summary.append(_check_line(f"{tag} skorokhod", sk, 0.0))
            summary.append(f"{tag} residual_tf: {_fmt_est(rt)}")


def _write_terms(path: str, res: EnsembleResult) -> None:
    cfg = res.config
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_FIELDS)
        for level in cfg.levels:
            for n in cfg.ladder:
                cols = {k: res.rows[(level, n, k)] for k in CSV_FIELDS[4:]}
                for p in range(cfg.paths):
                    writer.writerow([p, _num(level), n, cfg.convention] + [_num(cols[k][p]) for k in CSV_FIELDS[4:]])


def _cmd_pathwise(c: CliConfig, out: str, summary: list) -> None:
    cfg = c.experiment()
    b, x, _, _ = _all_paths(cfg)
    g = cfg.grid
    coeffs = cfg.model.coefficients()
    beta = c["beta"] or default_beta(cfg.h)
    k = min(c["norm-paths"], cfg.paths)
    rows = []
    for level in cfg.levels:
        r_sgn = pathwise_residual_values(x, coeffs, level, b, g.dt)
        summary.append(f"x={level:g} sgn residual mean |r|: {_fmt_est(MCEstimate.from_samples(np.abs(r_sgn)))}")
        for n in cfg.ladder:
            r_n = pathwise_residual_values(x, coeffs, level, b, g.dt, n)
            gap = np.full(cfg.paths, math.nan)
            if k:
                sig = coeffs.sigma(x[:k])
                u = x[:k] - level
                gap[:k] = fractional_norm((smooth_sign(n, u) - np.sign(u)) * sig, beta, g)
            rows.append((level, n, r_sgn, r_n, gap))
            line = f"x={level:g} n={n} mollified residual mean |r|: {_fmt_est(MCEstimate.from_samples(np.abs(r_n)))}"
            if k >= 2:
                line += f"; norm gap (beta={beta:.4f}, {k} paths): {_fmt_est(MCEstimate.from_samples(gap[:k]))}"
            summary.append(line)
    with open(os.path.join(out, "pathwise.csv"), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["path_id", "x", "n", "residual_sgn", "residual_mollified", "norm_gap"])
        for level, n, r_sgn, r_n, gap in rows:
            for p in range(cfg.paths):
                writer.writerow([p, _num(level), n, _num(r_sgn[p]), _num(r_n[p]), "" if math.isnan(gap[p]) else _num(gap[p])])


def _cmd_converge(c: CliConfig, out: str, summary: list) -> None:
    cfg = c.experiment()
    fractions = (0.25, 0.5, 1.0)
    lad = ladder_samples(cfg, fractions)
    header = [
        "n", "trace_local_mean", "trace_local_stderr", "l2_next_mean", "l2_next_stderr",
        "l4_next_mean", "l4_next_stderr", "l4_next_median8", "l4_next_max_t_mean",
    ]
    with open(os.path.join(out, "ladder.csv"), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i, n in enumerate(cfg.ladder):
            tl = MCEstimate.from_samples(lad["trace"][n])
            row = [n, _num(tl.mean), _num(tl.stderr)]
            if i + 1 < len(cfg.ladder):
                pair = (n, cfg.ladder[i + 1])
                l2 = MCEstimate.from_samples(lad["l2"][pair])
                l4 = lad["l4"][pair]
                end = MCEstimate.from_samples(l4[:, -1])
                med = float(np.median(split_means(l4[:, -1])))
                worst = max(MCEstimate.from_samples(l4[:, j]).mean for j in range(l4.shape[1]))
                row += [_num(l2.mean), _num(l2.stderr), _num(end.mean), _num(end.stderr), _num(med), _num(worst)]
                summary.append(f"pair {pair}: l2 {_fmt_est(l2)}; l4 at T {_fmt_est(end)}; l4 max over t {worst:.6f}")
            else:
                row += [""] * 6
            writer.writerow(row)


def _cmd_density(c: CliConfig, out: str, summary: list) -> None:
    cfg = c.experiment()
    t = c["time"] or cfg.grid.horizon
    k = cfg.grid.index_of(t)
    _, x, _, _ = _all_paths(cfg)
    rep = density_diagnostic(x[:, k], t, cfg.h)
    with open(os.path.join(out, "density.csv"), "w", newline="") as fh:
        rep.write_csv(fh)
    summary.extend(rep.lines())
    if isinstance(cfg.model, FbmModel) and not rep.degenerate:
        ref = gaussian_peak(t, cfg.h)
        summary.append(
            f"kde_peak vs 1/sqrt(2*pi)*t^-H = {ref:.6f}: relative error {abs(rep.peak - ref) / ref:.4f}"
        )


_COMMANDS = {
    "sample": _cmd_sample,
    "solve": _cmd_solve,
    "tanaka": _cmd_tanaka,
    "pathwise": _cmd_pathwise,
    "converge": _cmd_converge,
    "density": _cmd_density,
}


def run(cfg: CliConfig) -> int:
    """Execute a parsed config; returns the process exit code."""
    try:
        os.makedirs(cfg.out, exist_ok=True)
    except OSError as exc:
        print(f"error: cannot create output directory: {exc}", file=sys.stderr)
        return 2
    summary = [f"{k} = {_show(v)}" for k, v in cfg.options.items()]
    summary.append("")
    try:
        _COMMANDS[cfg.subcommand](cfg, cfg.out, summary)
    except (SolverError, CirculantError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1
    except DomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    with open(os.path.join(cfg.out, "summary.txt"), "w", newline="") as fh:
        fh.write("\n".join(summary) + "\n")
    return 0


def _show(v) -> str:
    if isinstance(v, tuple):
        return ",".join(_show(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def main(argv=None) -> int:
    try:
        cfg = parse_config(sys.argv[1:] if argv is None else argv)
    except UsageError as exc:
        print(f"fbm-tanaka: error: {exc}", file=sys.stderr)
        return 2
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
