"""Command-line entry point: ``cyclegas <command> [--config FILE] [overrides]``.

Commands: ``bounds``, ``oracle``, ``sample-finite``, ``sample-perfect``,
``stats``.  Exit codes: 0 ok, 2 configuration error, 3 certification
refusal, 4 a hard cap was exceeded.
"""
from __future__ import annotations

import argparse
import functools
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__, bounds, dynamics, potentials as pot, sampler, stats
from .config import RunConfig, build_config, load_yaml
from .errors import (
    CatalogTooLarge,
    ClanCapExceeded,
    ConfigInvalid,
    HaloCapExceeded,
    HorizonExceeded,
    NoFiniteBound,
    NotCertifiedSubcritical,
    StateSpaceTooLarge,
)
from .lattice import BoxRegion, Permutation, enumerate_cycles, format_cycle_line, parse_cycle_line

log = logging.getLogger("cyclegas")

EXIT_OK, EXIT_CONFIG, EXIT_UNCERTIFIED, EXIT_CAP = 0, 2, 3, 4
CAP_ERRORS = (CatalogTooLarge, ClanCapExceeded, HaloCapExceeded, HorizonExceeded, StateSpaceTooLarge)
SAMPLES_TAG = "cyclegas-samples v1"


# -- helpers -------------------------------------------------------------------


def _jsonable(x):
    if isinstance(x, float):
        return stats.finite(x)
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if hasattr(x, "tolist"):
        return _jsonable(x.tolist())
    return x


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n")


def _catalog(cfg: RunConfig, potential=None):
    V = potential or cfg.potential
    return enumerate_cycles(cfg.dimension, cfg.cutoffs, V, cfg.alpha)


def _provenance(cfg: RunConfig, catalog=None, cert=None, certified: bool | None = None) -> dict:
    out = {
        "version": __version__,
        "config_hash": cfg.config_hash,
        "seed": cfg.seed,
        "potential": cfg.potential.identifier,
        "alpha": cfg.alpha,
        "alpha_hex": float(cfg.alpha).hex(),
    }
    if catalog is not None:
        out["tail_bound"] = catalog.tail_bound
        out["tail_bound_hex"] = float(catalog.tail_bound).hex()
        out["catalog_classes"] = len(catalog.classes)
    if cert is not None:
        out["certificate_method"] = cert.method
        out["beta_upper"] = cert.beta_upper
    if certified is not None:
        out["status"] = "CERTIFIED" if certified else "UNCERTIFIED"
    return out


def _prepare_output(cfg: RunConfig) -> Path:
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    (out / "effective_config.yaml").write_text(cfg.dump())
    return out


def _map(fn, n: int, workers: int) -> list:
    """Results of ``fn(0..n-1)`` in index order, optionally on a process pool."""
    if workers <= 1 or n < 2:
        return [fn(i) for i in range(n)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(n), chunksize=max(1, n // (8 * workers))))


def _write_samples(path: Path, perms, catalog, window: BoxRegion | None, shift, header: dict) -> None:
    lines = [f"# {SAMPLES_TAG}"]
    if window is not None:
        lines.append(f"# window: {','.join(map(str, window.lower))}:{','.join(map(str, window.upper))}")
    if shift is not None and any(shift):
        lines.append(f"# shift: {','.join(map(str, shift))}")
    for k, v in sorted(header.items()):
        lines.append(f"# {k}: {v}")
    for i, perm in enumerate(perms):
        lines.append(f"@sample {i}")
        lines += [format_cycle_line(c, catalog.weight_of(c)) for c in perm.sorted_cycles()]
    path.write_text("\n".join(lines) + "\n")


def read_samples(path: str | Path) -> tuple[list, BoxRegion | None, tuple | None]:
    """Permutations, window and shift stored by ``sample-finite``/``sample-perfect``."""
    perms, header, current = [], {}, None
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        if line.startswith("#"):
            key, _, val = line[1:].partition(":")
            header[key.strip()] = val.strip()
        elif line.startswith("@sample"):
            if current is not None:
                perms.append(Permutation(frozenset(current)))
            current = []
        else:
            current.append(parse_cycle_line(line)[0])
    if current is not None:
        perms.append(Permutation(frozenset(current)))
    window = shift = None
    if "window" in header:
        lo, hi = header["window"].split(":")
        window = BoxRegion.from_corners(lo.split(","), hi.split(","))
    if "shift" in header:
        shift = tuple(int(c) for c in header["shift"].split(","))
    return perms, window, shift


# -- commands ------------------------------------------------------------------


def cmd_bounds(cfg: RunConfig) -> int:
    out = _prepare_output(cfg)
    V = cfg.potential
    if any(cfg.shift):
        V = pot.shifted(V, cfg.shift)
    rows = [("rho0", bounds.rho0())]
    if V.kind == "gaussian" and V.scale == 1:
        rows.append(("alpha*_gaussian_explicit", bounds.gaussian_alpha_star_explicit(cfg.dimension).value))
    try:
        rows.append(("alpha*_rho_root", bounds.alpha_star_upper_rho(bounds.dominating_potential(V)).value))
    except NoFiniteBound:
        pass
    if cfg.cutoffs.w_min == 0:
        cat0 = enumerate_cycles(cfg.dimension, cfg.cutoffs, V, cfg.alpha, tail=False)
        try:
            rows.append(("alpha*_beta_truncated", bounds.alpha_star_upper_beta(cat0, V).value))
        except NoFiniteBound:
            pass
        if cfg.alphas:
            stats.emit_plotdata([stats.beta_alpha_curve(cat0, cfg.alphas)], out)
    if any(cfg.shift) and pot.strong_convexity_modulus(V.base) is not None:
        rows.append(("alpha*_v_strongly_convex", bounds.alpha_star_shift_strongly_convex(V).value))
    catalog = _catalog(cfg, V)
    cert = bounds.certify(catalog, V)
    rows.append((f"beta_upper(alpha={cfg.alpha!r})", cert.beta_upper))
    for name, value in rows:
        print(f"{name:32s} {value:.6f}")
    write_json(
        out / "bounds.json",
        {
            "bounds": {k: v for k, v in rows},
            "certificate": {
                "beta_upper": cert.beta_upper,
                "method": cert.method,
                "truncated_sum": cert.truncated_sum,
                "tail_bound": cert.tail_bound,
                "subcritical": cert.subcritical,
            },
            "provenance": _provenance(cfg, catalog, cert),
        },
    )
    return EXIT_OK


def _finite_box(cfg: RunConfig) -> BoxRegion:
    if cfg.box is None:
        raise ConfigInvalid("this command needs a finite box (box: {lower, upper})")
    return cfg.box


def cmd_oracle(cfg: RunConfig) -> int:
    out = _prepare_output(cfg)
    box = _finite_box(cfg)
    catalog = _catalog(cfg)
    table = dynamics.enumerate_G_Lambda(box, catalog)
    violation = dynamics.detailed_balance_check(table)
    states = sorted(
        (
            [str(c) for c in sorted(s)],
            p,
        )
        for s, p in table.as_dict().items()
    )
    print(f"states {len(table)}  Z {table.Z!r}  max detailed-balance violation {violation:.3e}")
    write_json(
        out / "oracle.json",
        {
            "box": str(box),
            "n_states": len(table),
            "Z": table.Z,
            "Z_hex": float(table.Z).hex(),
            "max_violation": violation,
            "states": [{"cycles": c, "probability": p} for c, p in states],
            "provenance": _provenance(cfg, catalog),
        },
    )
    return EXIT_OK


def _finite_draw(box, catalog, seed, i):
    return dynamics.sample_G_Lambda_exact(box, catalog, seed=seed, replica=i)


def cmd_sample_finite(cfg: RunConfig) -> int:
    out = _prepare_output(cfg)
    box = _finite_box(cfg)
    catalog = _catalog(cfg)
    perms = _map(functools.partial(_finite_draw, box, catalog, cfg.seed), cfg.replicas, cfg.workers)
    counts: dict = {}
    for p in perms:
        key = " | ".join(str(c) for c in p.sorted_cycles()) or "identity"
        counts[key] = counts.get(key, 0) + 1
    summary = {
        "box": str(box),
        "replicas": cfg.replicas,
        "counts": dict(sorted(counts.items())),
        "cycle_length_histogram": stats.cycle_length_histogram(perms, box),
        "provenance": _provenance(cfg, catalog),
    }
    if cfg.compare_oracle:
        table = dynamics.enumerate_G_Lambda(box, catalog)
        summary["tv_distance"] = dynamics.tv_distance(perms, table)
        print(f"TV distance to exact G_Lambda: {summary['tv_distance']:.4f}")
    _write_samples(out / "samples.txt", perms, catalog, box, None, {"config_hash": cfg.config_hash})
    write_json(out / "sample_finite.json", summary)
    return EXIT_OK


def _perfect_replica(window, catalog, seed, boxes, caps, override, i):
    clan = sampler.classify(
        sampler.build_clan(window, catalog, seed=seed, replica=i, override=override, **caps)
    )
    full = sampler.window_cycles(clan, window)
    dis = tuple(sampler.restricted_window_answer(clan, window, b) != full for b in boxes)
    support = clan.support_box()
    inside = tuple(support is None or b.intersect(support) == support for b in boxes)
    return full, clan.stats(), (dis, inside)


def cmd_sample_perfect(cfg: RunConfig) -> int:
    if cfg.window is None:
        raise ConfigInvalid("sample-perfect needs a window (window: {lower, upper})")
    V = pot.shifted(cfg.potential, cfg.shift) if any(cfg.shift) else cfg.potential
    catalog = _catalog(cfg, V)
    cert = bounds.certify(catalog, V)
    if not cert.subcritical and not cfg.allow_uncertified:
        raise NotCertifiedSubcritical(
            f"beta_upper = {cert.beta_upper:.6g} ({cert.method}) at alpha={cfg.alpha}; "
            "pass --allow-uncertified to sample anyway"
        )
    out = _prepare_output(cfg)
    window = cfg.window
    center = tuple((a + b) // 2 for a, b in zip(window.lower, window.upper))
    boxes = [BoxRegion.cube(center, r) for r in cfg.coupling_radii]
    caps = {"max_nodes": cfg.max_clan_nodes, "halo_cap": cfg.halo_cap}
    fn = functools.partial(
        _perfect_replica, window, catalog, cfg.seed, boxes, caps, cfg.allow_uncertified
    )
    results = _map(fn, cfg.replicas, cfg.workers)
    shift = cfg.shift if any(cfg.shift) else None
    samples = [
        sampler.WindowSample(window, Permutation(cyc), st, shift) for cyc, st, _ in results
    ]
    sizes = [st.size for _, st, _ in results]
    depths = [st.max_depth for _, st, _ in results]
    mj = stats.mean_jump(samples) if len(samples) >= 2 else None
    hist = stats.cycle_length_histogram(samples)
    prov = _provenance(cfg, catalog, cert, certified=cert.subcritical)
    summary = {
        "window": str(window),
        "shift": list(cfg.shift),
        "replicas": cfg.replicas,
        "clan_size_histogram": _counts(sizes),
        "clan_depth_histogram": _counts(depths),
        "cycle_length_histogram": hist,
        "fraction_moved": stats.fraction_moved(hist),
        "provenance": prov,
    }
    if mj is not None:
        summary["mean_jump"] = {"mean": mj.mean, "stderr": mj.stderr, "batches": mj.batches}
    curves = [stats.clan_size_curve(sizes)]
    if boxes:
        report = sampler.CouplingReport(
            tuple(boxes),
            tuple(sum(r[2][0][k] for r in results) for k in range(len(boxes))),
            tuple(sum(r[2][1][k] for r in results) for k in range(len(boxes))),
            cfg.replicas,
        )
        summary["agreement"] = [
            {"radius": r, "box": str(b), "disagreement_probability": p}
            for r, b, p in zip(cfg.coupling_radii, boxes, report.probabilities)
        ]
        curves.append(stats.agreement_curve(report))
    stats.emit_plotdata(curves, out)
    header = {"config_hash": cfg.config_hash, "status": prov["status"]}
    _write_samples(out / "samples.txt", [s.permutation for s in samples], catalog, window, shift, header)
    write_json(out / "sample_perfect.json", summary)
    if not cert.subcritical:
        print("UNCERTIFIED: beta upper bound is not below 1", file=sys.stderr)
    return EXIT_OK


def _counts(values) -> dict:
    out: dict = {}
    for v in values:
        out[int(v)] = out.get(int(v), 0) + 1
    return dict(sorted(out.items()))


def cmd_stats(cfg: RunConfig) -> int:
    if not cfg.samples_file:
        raise ConfigInvalid("stats needs samples_file (--samples FILE)")
    try:
        perms, window, shift = read_samples(cfg.samples_file)
    except (OSError, ValueError) as exc:
        raise ConfigInvalid(f"cannot read samples: {exc}") from exc
    window = cfg.window or window
    if window is None:
        raise ConfigInvalid("the samples file has no window; give one")
    out = _prepare_output(cfg)
    hist = stats.cycle_length_histogram(perms, window)
    report = {
        "samples": len(perms),
        "window": str(window),
        "cycle_length_histogram": hist,
        "fraction_moved": stats.fraction_moved(hist),
        "provenance": _provenance(cfg),
    }
    if len(perms) >= 2:
        mj = stats.mean_jump(perms, window, shift)
        report["mean_jump"] = {"mean": mj.mean, "stderr": mj.stderr, "batches": mj.batches}
        print("mean jump", " ".join(f"{m:+.5f}±{s:.5f}" for m, s in zip(mj.mean, mj.stderr)))
    stats.emit_plotdata(
        [stats.histogram_curve("cycle_length_histogram", hist, "length", "cycle length")], out
    )
    write_json(out / "stats.json", report)
    return EXIT_OK


COMMANDS = {
    "bounds": cmd_bounds,
    "oracle": cmd_oracle,
    "sample-finite": cmd_sample_finite,
    "sample-perfect": cmd_sample_perfect,
    "stats": cmd_stats,
}


# -- argument parsing ----------------------------------------------------------


def _ints(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t.strip()]


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t.strip()]


def _box_arg(text: str) -> dict:
    """``"x1,x2:y1,y2"`` -> ``{lower: [x1, x2], upper: [y1, y2]}``."""
    try:
        lo, hi = text.split(":")
        return {"lower": _ints(lo), "upper": _ints(hi)}
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected LOWER:UPPER, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cyclegas", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="YAML run configuration")
        s.add_argument("-d", "--dimension", type=int)
        s.add_argument("--potential", choices=pot.KINDS)
        s.add_argument("--power", type=int, help="exponent of the power potential")
        s.add_argument("--scale", type=float, help="prefactor of the potential")
        s.add_argument("--table", help="file with rows 'x_1 .. x_d value'")
        s.add_argument("--alpha", type=float)
        s.add_argument("--alphas", type=_floats, help="comma list for the beta-vs-alpha curve")
        s.add_argument("--shift", type=_ints, help="shift vector v, e.g. 1,0")
        s.add_argument("--window", type=_box_arg, help="LOWER:UPPER, e.g. --window=-1,-1:1,1 (use = with negative corners)")
        s.add_argument("--box", type=_box_arg, help="finite Lambda, LOWER:UPPER")
        s.add_argument("--coupling-radii", type=_ints)
        s.add_argument("--l-max", type=int)
        s.add_argument("--r-max", type=float)
        s.add_argument("--w-min", type=float)
        s.add_argument("--replicas", type=int)
        s.add_argument("--max-clan-nodes", type=int)
        s.add_argument("--halo-cap", type=int)
        s.add_argument("--seed", type=int)
        s.add_argument("--workers", type=int)
        s.add_argument("--allow-uncertified", action="store_true", default=None)
        s.add_argument("--compare-oracle", action="store_true", default=None)
        s.add_argument("--samples", dest="samples_file")
        s.add_argument("-o", "--output-dir")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def _overrides(args: argparse.Namespace) -> dict:
    o = {
        "dimension": args.dimension,
        "alpha": args.alpha,
        "alphas": args.alphas,
        "shift": args.shift,
        "window": args.window,
        "box": args.box,
        "coupling_radii": args.coupling_radii,
        "replicas": args.replicas,
        "max_clan_nodes": args.max_clan_nodes,
        "halo_cap": args.halo_cap,
        "seed": args.seed,
        "workers": args.workers,
        "allow_uncertified": args.allow_uncertified,
        "compare_oracle": args.compare_oracle,
        "samples_file": args.samples_file,
        "output_dir": args.output_dir,
    }
    pot_over = {k: getattr(args, a) for k, a in
                (("kind", "potential"), ("power", "power"), ("scale", "scale"), ("table", "table"))
                if getattr(args, a) is not None}
    if pot_over:
        o["potential"] = pot_over
    cut = {k: v for k, v in (("l_max", args.l_max), ("r_max", args.r_max), ("w_min", args.w_min))
           if v is not None}
    if cut:
        o["cutoffs"] = cut
    return o


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        file_values = load_yaml(args.config) if args.config else {}
        cfg = build_config(file_values, _overrides(args))
        return COMMANDS[args.command](cfg)
    except ConfigInvalid as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NotCertifiedSubcritical as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_UNCERTIFIED
    except CAP_ERRORS as exc:
        print(f"cap exceeded: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CAP


if __name__ == "__main__":
    sys.exit(main())
