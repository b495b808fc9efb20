"""Experiment runner: structured configs, one subcommand per experiment.

`fkfield run <config.json>` executes one experiment and writes CSV tables
(JSON metadata line + CSV body) plus JSON artifacts into the output
directory.  Runs are deterministic for a fixed config, including under
--workers N: chains use independent counter-based streams keyed by
(master_seed, chain_index) and reductions are order-insensitive.  Chains
checkpoint every 1000 retained samples (spins + generator state), so
--resume continues bitwise where an interrupted run stopped.
"""

import argparse
import dataclasses
import json
import math
import pickle
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, clusters
from .field import (
    ScaleFactorEstimate,
    batch_stderr,
    box_function,
    coupled_cutoff_gap_sq,
    field_value_from_spins,
    potts_color_field,
    restricted_sq_sum,
)
from .lattice import Rectangle, build_geometry, site_mask
from .nearcritical import GhostModel, geometric_grid
from .output import config_hash, write_json, write_table
from .sampler import (
    BondConfiguration,
    ChainConfig,
    ModelParams,
    SpinConfiguration,
    critical_beta,
    exact_expectation,
    exact_spin_distribution,
    sw_sweep,
    write_raw_header,
    write_raw_record,
)
from .stats import fit_exponential, fit_power_law, kurtosis, survival_tail

EXPERIMENTS = (
    "oracle-check", "two-point", "theta-scaling", "field-dist", "cutoff-removal",
    "crossings", "potts-field", "near-critical", "free-energy", "loop-validate",
)

CHECKPOINT_EVERY = 1000


class ConfigError(ValueError):
    pass


@dataclass
class GeometryBlock:
    side_sites: object = 16  # int, or list of ints for scaling experiments
    boundary: str = "torus"
    spacing: float | None = None  # None: margin_factor * box_side / L
    margin_factor: float = 2.0
    box_side: float = 1.0


@dataclass
class ModelBlock:
    q: int = 2
    beta: object = "critical"


@dataclass
class ChainBlock:
    n_chains: int = 1
    thermalization_sweeps: int | None = None  # None: 10 * L
    decorrelation_sweeps: int = 2
    n_samples: int = 1000


@dataclass
class AnalysisBlock:
    r_values: list | None = None
    fit_window: list | None = None  # [lo, hi] in continuum units
    epsilons: list | None = None
    annulus: dict | None = None  # {"r1": .., "r2": ..}
    h_values: list | None = None
    lattice_fields: list | None = None  # alternative to h_values
    trunc_h: float | None = None
    trunc_r_values: list | None = None
    free_energy_h: float | None = None
    t_grid_points: int = 9
    q_values: list | None = None
    window_box: list | None = None  # [x0, y0, x1, y1] ghost-field window
    theta: float | None = None  # reuse a known scale factor


@dataclass
class ExperimentConfig:
    experiment: str
    output_dir: str
    master_seed: int = 20260809
    geometry: GeometryBlock = field(default_factory=GeometryBlock)
    model: ModelBlock = field(default_factory=ModelBlock)
    chain: ChainBlock = field(default_factory=ChainBlock)
    analysis: AnalysisBlock = field(default_factory=AnalysisBlock)


_BLOCKS = {"geometry": GeometryBlock, "model": ModelBlock, "chain": ChainBlock,
           "analysis": AnalysisBlock}


def parse_config(raw: dict) -> ExperimentConfig:
    """Build and validate a config; unknown keys are rejected by name."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    top_fields = {f.name for f in dataclasses.fields(ExperimentConfig)}
    for key in raw:
        if key not in top_fields:
            raise ConfigError(f"unknown config key: {key}")
    for name, cls in _BLOCKS.items():
        block = raw.get(name, {})
        allowed = {f.name for f in dataclasses.fields(cls)}
        for key in block:
            if key not in allowed:
                raise ConfigError(f"unknown config key: {name}.{key}")
    if "experiment" not in raw:
        raise ConfigError("missing config key: 'experiment'")
    if raw["experiment"] not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {raw['experiment']!r}; "
                          f"expected one of {', '.join(EXPERIMENTS)}")
    if "output_dir" not in raw:
        raise ConfigError("missing config key: 'output_dir'")
    kwargs = {k: v for k, v in raw.items() if k not in _BLOCKS}
    for name, cls in _BLOCKS.items():
        kwargs[name] = cls(**raw.get(name, {}))
    return ExperimentConfig(**kwargs)


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(json.load(fh))


def config_echo(cfg: ExperimentConfig) -> dict:
    return dataclasses.asdict(cfg)


def geometry_for(cfg: ExperimentConfig, L: int):
    gb = cfg.geometry
    spacing = gb.spacing if gb.spacing is not None else gb.margin_factor * gb.box_side / L
    return build_geometry(L, gb.boundary, spacing)


def model_for(cfg: ExperimentConfig, ghost_p: float = 0.0) -> ModelParams:
    mb = cfg.model
    beta = critical_beta(mb.q) if mb.beta == "critical" else float(mb.beta)
    return ModelParams(q=mb.q, beta=beta, ghost_p=ghost_p)


def default_therm(cfg: ExperimentConfig, L: int) -> int:
    t = cfg.chain.thermalization_sweeps
    return 10 * L if t is None else t


# ---------------------------------------------------------------------------
# Chain tasks (top-level and picklable for the worker pool)
# ---------------------------------------------------------------------------


def analysis_rng(seed: int, chain_index: int) -> np.random.Generator:
    """Sign/color stream, independent of the chain's own stream."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(chain_index, 1))
    return np.random.Generator(np.random.Philox(ss))


def _make_observable(name, geom, spec):
    """Observable factories; each returns fn(bonds, spins) -> dict of columns."""
    if name == "oracle":
        u, v = geom.bond_endpoints[:, 0], geom.bond_endpoints[:, 1]
        pairs = np.array(spec["pairs"], dtype=np.int64)

        def fn(bonds, spins):
            dec = clusters.decompose(geom, bonds)
            return {
                "edges": bonds.open.astype(np.int8),
                "pairs": (dec.labels[pairs[:, 0]] == dec.labels[pairs[:, 1]]).astype(np.int8),
                "n_clusters": dec.n_clusters,
            }
        return fn
    if name == "spin_state":
        def fn(bonds, spins):
            c = spins.color.astype(np.int64) - 1
            return {"state": int(np.dot(c, 2 ** np.arange(len(c))))}
        return fn
    if name == "theta_inv_sq":
        box = Rectangle(*spec["box"])

        def fn(bonds, spins):
            dec = clusters.decompose(geom, bonds)
            return {"inv_sq": restricted_sq_sum(dec, geom, box)}
        return fn
    if name == "block_m":
        f = box_function(spec["box_side"])
        theta = spec["theta"]
        u, v = geom.bond_endpoints[:, 0], geom.bond_endpoints[:, 1]

        def fn(bonds, spins):
            return {
                "m": field_value_from_spins(geom, spins, theta, f),
                "open_frac": float(bonds.open.mean()),
            }
        return fn
    if name == "cutoff_gaps":
        f = box_function(spec["box_side"])
        theta, eps = spec["theta"], spec["epsilons"]

        def fn(bonds, spins):
            dec = clusters.decompose(geom, bonds)
            gaps = coupled_cutoff_gap_sq(dec, geom, theta, f, eps)
            return {"gaps": np.array([gaps[float(e)] for e in eps])}
        return fn
    if name == "crossings":
        z, r1, r2 = tuple(spec["z"]), spec["r1"], spec["r2"]

        def fn(bonds, spins):
            dec = clusters.decompose(geom, bonds)
            return {"n_cross": clusters.count_crossing_clusters(dec, geom, z, r1, r2)}
        return fn
    if name == "twopoint":
        r_values = spec["r_values"]
        L = geom.side_sites

        def fn(bonds, spins):
            dec = clusters.decompose(geom, bonds)
            lab = dec.labels.reshape(L, L)
            if spec.get("exclude_ghost") and dec.ghost_label >= 0:
                keep = (dec.labels != dec.ghost_label).reshape(L, L)
            else:
                keep = True
            vals = [0.5 * (float(((lab == np.roll(lab, -r, axis=1)) & keep).mean())
                           + float(((lab == np.roll(lab, -r, axis=0)) & keep).mean()))
                    for r in r_values]
            return {"tau": np.array(vals), "open_frac": float(bonds.open.mean())}
        return fn
    if name == "mean_spin":
        mask = spec.get("mask")

        def fn(bonds, spins):
            s = spins.spins()
            if mask is not None:
                s = s[mask]
            return {"mean_spin": float(s.mean())}
        return fn
    if name == "potts_fields":
        f = box_function(spec["box_side"])
        theta, q = spec["theta"], spec["q"]
        rng_holder = spec["rng_holder"]

        def fn(bonds, spins):
            dec = clusters.decompose(geom, bonds)
            phi = potts_color_field(dec, geom, theta, f, q, rng_holder[0])
            return {"phi": phi, "color_sum": float(phi.sum())}
        return fn
    raise ValueError(f"unknown observable {name!r}")


def run_chain_task(task: dict) -> dict:
    """Run one chain, with optional checkpointing and raw-sample dumping."""
    geom = build_geometry(task["L"], task["boundary"], task["spacing"])
    params = ModelParams(q=task["q"], beta=task["beta"], ghost_p=task.get("ghost_p", 0.0))
    idx = task["chain_index"]
    chain = ChainConfig(seed=task["seed"], thermalization_sweeps=task["therm"],
                        decorrelation_sweeps=task["decorr"], n_samples=task["n_samples"])
    ghost_mask = None
    if task.get("window_box") is not None:
        ghost_mask = site_mask(geom, Rectangle(*task["window_box"]))
    spec = dict(task.get("spec", {}))
    if task["observable"] == "potts_fields":
        spec["rng_holder"] = [analysis_rng(task["seed"], idx)]
    obs = _make_observable(task["observable"], geom, spec)

    rng = np.random.Generator(np.random.Philox(
        np.random.SeedSequence(entropy=task["seed"], spawn_key=(idx,))))
    spins = SpinConfiguration.all_up(geom.n_sites)
    columns = {}
    done = 0

    ckpt = Path(task["ckpt_path"]) if task.get("ckpt_path") else None
    if ckpt is not None and ckpt.exists() and task.get("resume"):
        payload = np.load(ckpt, allow_pickle=True)
        state = pickle.loads(payload["pickled"].tobytes())
        rng.bit_generator.state = state["rng_state"]
        spins = SpinConfiguration(color=state["colors"])
        columns = state["columns"]
        if task["observable"] == "potts_fields":
            spec["rng_holder"][0].bit_generator.state = state["analysis_rng_state"]
        done = state["done"]
    else:
        for _ in range(task["therm"]):
            _, spins = sw_sweep(geom, params, spins, rng, ghost_mask=ghost_mask)

    raw_fh = None
    if task.get("raw_path"):
        mode = "ab" if done else "wb"
        raw_fh = open(task["raw_path"], mode)
        if not done:
            write_raw_header(raw_fh, geom, params, seed=task["seed"], run_id=idx)

    def save_checkpoint():
        state = {
            "rng_state": rng.bit_generator.state,
            "colors": spins.color,
            "columns": columns,
            "done": done,
        }
        if task["observable"] == "potts_fields":
            state["analysis_rng_state"] = spec["rng_holder"][0].bit_generator.state
        buf = np.frombuffer(pickle.dumps(state), dtype=np.uint8)
        tmp = ckpt.with_name(ckpt.name + ".tmp")
        with open(tmp, "wb") as fh:
            np.savez(fh, pickled=buf)
        tmp.replace(ckpt)

    while done < task["n_samples"]:
        for _ in range(max(task["decorr"], 1)):
            bonds, spins = sw_sweep(geom, params, spins, rng, ghost_mask=ghost_mask)
        row = obs(bonds, spins)
        for key, val in row.items():
            columns.setdefault(key, []).append(val)
        if raw_fh is not None:
            write_raw_record(raw_fh, idx, done, bonds)
        done += 1
        if ckpt is not None and done % task.get("ckpt_every", CHECKPOINT_EVERY) == 0:
            save_checkpoint()

    if raw_fh is not None:
        raw_fh.close()
    return {"chain_index": idx,
            "columns": {k: np.array(v) for k, v in columns.items()}}


def run_chains(tasks, workers: int):
    """Run chain tasks (in a pool when workers > 1), results in chain order."""
    if workers <= 1 or len(tasks) <= 1:
        results = [run_chain_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_chain_task, tasks))
    return sorted(results, key=lambda r: r["chain_index"])


def stack_column(results, key) -> np.ndarray:
    return np.concatenate([r["columns"][key] for r in results])


def _base_task(cfg, geom, chain_index, observable, spec, n_samples=None,
               ghost_p=0.0, window_box=None, outdir=None, resume=False,
               dump_raw=False):
    params = model_for(cfg, ghost_p)
    task = {
        "L": geom.side_sites,
        "boundary": geom.boundary,
        "spacing": geom.spacing,
        "q": params.q,
        "beta": params.beta,
        "ghost_p": ghost_p,
        "seed": cfg.master_seed,
        "chain_index": chain_index,
        "therm": default_therm(cfg, geom.side_sites),
        "decorr": cfg.chain.decorrelation_sweeps,
        "n_samples": cfg.chain.n_samples if n_samples is None else n_samples,
        "observable": observable,
        "spec": spec,
        "window_box": window_box,
        "resume": resume,
    }
    if outdir is not None:
        ckdir = Path(outdir) / "checkpoints"
        ckdir.mkdir(parents=True, exist_ok=True)
        task["ckpt_path"] = str(ckdir / f"chain_{chain_index:04d}.npz")
        if dump_raw:
            task["raw_path"] = str(Path(outdir) / f"raw_chain_{chain_index:04d}.bin")
    return task


def base_metadata(cfg: ExperimentConfig, extra=None, tasks=None) -> dict:
    echo = config_echo(cfg)
    meta = {
        "experiment": cfg.experiment,
        "config": echo,
        "config_hash": config_hash(echo),
        "master_seed": cfg.master_seed,
        "code_version": __version__,
        "chain_seed_rule": "SeedSequence(master_seed, spawn_key=(chain_index,))",
    }
    if tasks is not None:
        meta["chain_indices"] = sorted(t["chain_index"] for t in tasks)
    if extra:
        meta.update(extra)
    return meta


def fit_rows(fits: dict):
    rows = []
    for name, f in fits.items():
        slope = getattr(f, "exponent", None)
        if slope is None:
            slope = -f.rate
        rows.append((name, slope, f.amplitude, f.stderr, f.r_squared,
                     f.window[0], f.window[1], f.n_points))
    return rows


FIT_HEADER = ["name", "slope", "amplitude", "stderr", "r_squared",
              "window_lo", "window_hi", "n_points"]


class CheckFailure(Exception):
    pass


def _require(check_on, cond, message, failures):
    if not cond:
        failures.append(message)
        if check_on:
            print(f"CHECK FAIL: {message}", file=sys.stderr)
        return False
    return True


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------


def exp_oracle_check(cfg, out, workers, check, resume, dump_raw):
    """Sampler vs exhaustive enumeration on desk-scale graphs (always checked)."""
    L = cfg.geometry.side_sites if isinstance(cfg.geometry.side_sites, int) else 3
    if L > 3:
        raise ConfigError("oracle-check is limited to side_sites <= 3")
    geom = build_geometry(L, "free", 1.0)
    params = model_for(cfg)
    pairs = [(i, j) for i in range(geom.n_sites) for j in range(i + 1, geom.n_sites)]

    def exact_vec(bonds):
        dec = clusters.decompose(geom, bonds)
        pair_bits = [float(dec.labels[i] == dec.labels[j]) for i, j in pairs]
        return np.array(list(bonds.open.astype(float)) + pair_bits + [float(dec.n_clusters)])

    exact = exact_expectation(geom, params, exact_vec)
    tasks = [_base_task(cfg, geom, i, "oracle", {"pairs": pairs},
                        outdir=out, resume=resume, dump_raw=dump_raw)
             for i in range(cfg.chain.n_chains)]
    results = run_chains(tasks, workers)
    edges = stack_column(results, "edges").astype(float)
    pair_bits = stack_column(results, "pairs").astype(float)
    ncl = stack_column(results, "n_clusters").astype(float)

    rows, failures = [], []
    est_all = np.concatenate([edges.T, pair_bits.T, ncl[None, :]], axis=0)
    names = ([f"edge_open_{b}" for b in range(geom.n_bonds)]
             + [f"pair_{i}_{j}" for i, j in pairs] + ["mean_cluster_count"])
    for k, name in enumerate(names):
        col = est_all[k]
        est, se = float(col.mean()), batch_stderr(col, 20)
        dev = abs(est - exact[k]) / se if se > 0 else 0.0
        ok = dev <= 4.0
        _require(check, ok, f"{name}: {dev:.2f} sigma from exact", failures)
        rows.append((name, float(exact[k]), est, se, dev, int(ok)))

    # Gibbs spin marginal on the 2x2 lattice (independent spin-space oracle)
    g2 = build_geometry(2, "free", 1.0)
    states, probs = exact_spin_distribution(g2, model_for(cfg).beta, q=cfg.model.q)
    state_ids = np.array([int(np.dot(s - 1, 2 ** np.arange(4))) for s in states])
    exact_freq = np.zeros(2**4)
    for sid, pr in zip(state_ids, probs):
        exact_freq[sid] += pr
    t2 = _base_task(cfg, g2, 1000, "spin_state", {}, outdir=out, resume=resume)
    got = run_chains([t2], 1)[0]["columns"]["state"]
    n = len(got)
    for sid in range(16):
        hits = (got == sid).astype(float)
        est = float(hits.mean())
        se = max(batch_stderr(hits, 20),
                 math.sqrt(max(exact_freq[sid] * (1 - exact_freq[sid]), 1e-12) / n))
        dev = abs(est - exact_freq[sid]) / se
        ok = dev <= 4.0
        _require(check, ok, f"spin_state_{sid}: {dev:.2f} sigma", failures)
        rows.append((f"spin_state_{sid}", float(exact_freq[sid]), est, se, dev, int(ok)))

    meta = base_metadata(cfg, {"n_samples": int(len(ncl)), "spin_marginal_samples": n},
                         tasks=tasks + [t2])
    write_table(Path(out) / "oracle_check.csv", meta,
                ["observable", "exact", "estimate", "stderr", "n_sigma", "pass"], rows)
    return failures


def exp_two_point(cfg, out, workers, check, resume, dump_raw):
    L = cfg.geometry.side_sites
    geom = geometry_for(cfg, L)
    a = geom.spacing
    r_values = cfg.analysis.r_values or [r for r in (1, 2, 3, 4, 6, 8, 11, 16, 22, 32)
                                         if r < L // 2]
    tasks = [_base_task(cfg, geom, i, "twopoint", {"r_values": r_values},
                        outdir=out, resume=resume, dump_raw=dump_raw)
             for i in range(cfg.chain.n_chains)]
    results = run_chains(tasks, workers)
    tau = stack_column(results, "tau")
    open_frac = stack_column(results, "open_frac")
    value = tau.mean(axis=0)
    stderr = np.array([batch_stderr(tau[:, k], 20) for k in range(tau.shape[1])])
    rows = [(r * a, float(v), float(s)) for r, v, s in zip(r_values, value, stderr)]

    window = cfg.analysis.fit_window or [4 * a, min(32 * a, L * a / 8)]
    pts = [(r, v, s) for r, v, s in rows if window[0] <= r <= window[1] and v > 0]
    if len(pts) < 3:
        # lattice too small for the production window; fit whatever is there
        pts = [(r, v, s) for r, v, s in rows if v > 0]
        window = [pts[0][0], pts[-1][0]]
    fit = fit_power_law(pts) if len(pts) >= 3 else None
    failures = []
    slack = 3 * (stderr[1:] + stderr[:-1])
    _require(check, np.all(np.diff(value) <= slack), "tau not decreasing in r", failures)
    _require(check, abs(open_frac.mean() - 0.5) < 0.01,
             f"open fraction {open_frac.mean():.4f} far from self-dual 1/2", failures)
    meta = base_metadata(cfg, tasks=tasks, extra={
        "n_samples": int(tau.shape[0]), "spacing": a,
        "mean_open_fraction": float(open_frac.mean()),
        "open_fraction_stderr": batch_stderr(open_frac, 20),
        "fit_window": list(window),
    })
    write_table(Path(out) / "two_point.csv", meta, ["r", "tau", "stderr"], rows)
    if fit is not None:
        write_table(Path(out) / "two_point_fit.csv", meta, FIT_HEADER,
                    fit_rows({"tau_decay": fit}))
    return failures


def _theta_for(cfg, geom, chain_offset, out, workers, resume, n_samples=None):
    box = [0.0, 0.0, cfg.geometry.box_side, cfg.geometry.box_side]
    tasks = [_base_task(cfg, geom, chain_offset + i, "theta_inv_sq", {"box": box},
                        n_samples=n_samples, outdir=out, resume=resume)
             for i in range(cfg.chain.n_chains)]
    results = run_chains(tasks, workers)
    inv = stack_column(results, "inv_sq")
    return ScaleFactorEstimate.from_inv_sq_samples(
        inv, Rectangle(*box), n_blocks=20,
        ensemble_id=f"chains {chain_offset}..{chain_offset + cfg.chain.n_chains - 1}")


def exp_theta_scaling(cfg, out, workers, check, resume, dump_raw):
    Ls = cfg.geometry.side_sites
    if not isinstance(Ls, list):
        raise ConfigError("theta-scaling needs geometry.side_sites as a list")
    rows, ests = [], {}
    for j, L in enumerate(Ls):
        geom = geometry_for(cfg, L)
        est = _theta_for(cfg, geom, 100 * j, out, workers, resume)
        ests[L] = est
        rows.append((L, cfg.geometry.boundary, f"box{cfg.geometry.box_side:g}",
                     est.inv_sq, est.stderr, est.n_samples, cfg.master_seed))
    pts = [(float(L), ests[L].inv_sq, ests[L].stderr) for L in Ls]
    fit = fit_power_law(pts) if len(pts) >= 3 else None
    ratio = ests[Ls[-1]].inv_sq / ests[Ls[-2]].inv_sq if len(Ls) >= 2 else float("nan")
    expected_ratio = (Ls[-1] / Ls[-2]) ** 3.75 if len(Ls) >= 2 else float("nan")
    failures = []
    _require(check, all(ests[a].inv_sq < ests[b].inv_sq for a, b in zip(Ls, Ls[1:])),
             "inv_sq not increasing with L", failures)
    meta = base_metadata(cfg, {
        "largest_pair_ratio": float(ratio),
        "largest_pair_ratio_expected": float(expected_ratio),
    })
    write_table(Path(out) / "theta_scaling.csv", meta,
                ["L", "boundary", "box", "theta_inv_sq", "stderr", "n_samples", "seed"],
                rows)
    if fit is not None:
        write_table(Path(out) / "theta_fit.csv", meta, FIT_HEADER,
                    fit_rows({"theta_inv_sq_vs_L": fit}))
    return failures


def exp_field_dist(cfg, out, workers, check, resume, dump_raw):
    """Two-ensemble protocol: theta from one ensemble, field samples from another."""
    L = cfg.geometry.side_sites
    geom = geometry_for(cfg, L)
    theta_est = _theta_for(cfg, geom, 0, out, workers, resume)
    theta = cfg.analysis.theta or theta_est.scale_factor
    spec = {"box_side": cfg.geometry.box_side, "theta": theta}
    tasks = [_base_task(cfg, geom, 100 + i, "block_m", spec,
                        outdir=out, resume=resume, dump_raw=dump_raw)
             for i in range(cfg.chain.n_chains)]
    results = run_chains(tasks, workers)
    m = stack_column(results, "m")
    open_frac = stack_column(results, "open_frac")

    sample_rows = []
    for res in results:
        for k, val in enumerate(res["columns"]["m"]):
            sample_rows.append((res["chain_index"], k, "box1", 0.0, float(val)))
    second = float((m**2).mean())
    second_se = batch_stderr(m**2, 20)
    kur, kur_se = kurtosis(m, n_blocks=20)
    failures = []
    _require(check, abs(m.mean()) < 6 * batch_stderr(m, 20) + 1e-9,
             "block magnetization mean far from 0", failures)
    _require(check, abs(second - 1.0) < 6 * second_se + 0.05,
             f"second moment {second:.3f} far from 1", failures)
    meta = base_metadata(cfg, tasks=tasks, extra={
        "theta": theta, "theta_inv_sq": theta_est.inv_sq,
        "theta_stderr": theta_est.stderr,
        "second_moment": second, "second_moment_stderr": second_se,
        "kurtosis": kur, "kurtosis_stderr": kur_se,
        "mean_open_fraction": float(open_frac.mean()),
        "nn_correlation_implied": float(2 * open_frac.mean() / model_for(cfg).p - 1),
    })
    write_table(Path(out) / "field_samples.csv", meta,
                ["run_id", "sample_idx", "f_id", "epsilon", "value"], sample_rows)
    write_table(Path(out) / "field_summary.csv", meta,
                ["n", "theta", "second_moment", "second_moment_stderr",
                 "kurtosis", "kurtosis_stderr"],
                [(len(m), theta, second, second_se, kur, kur_se)])
    return failures


def exp_cutoff_removal(cfg, out, workers, check, resume, dump_raw):
    L = cfg.geometry.side_sites
    geom = geometry_for(cfg, L)
    a = geom.spacing
    eps = cfg.analysis.epsilons or sorted({4 * a, 8 * a, 16 * a, 1 / 8, 1 / 4})
    theta_est = _theta_for(cfg, geom, 0, out, workers, resume)
    theta = cfg.analysis.theta or theta_est.scale_factor
    spec = {"box_side": cfg.geometry.box_side, "theta": theta, "epsilons": list(eps)}
    tasks = [_base_task(cfg, geom, 100 + i, "cutoff_gaps", spec,
                        outdir=out, resume=resume, dump_raw=dump_raw)
             for i in range(cfg.chain.n_chains)]
    results = run_chains(tasks, workers)
    gaps = stack_column(results, "gaps")
    value = gaps.mean(axis=0)
    stderr = np.array([batch_stderr(gaps[:, k], 20) for k in range(gaps.shape[1])])
    rows = list(zip(map(float, eps), map(float, value), map(float, stderr)))
    fit = fit_power_law(rows)
    failures = []
    _require(check, np.all(np.diff(value) > 0), "coupled gap not increasing in eps", failures)
    meta = base_metadata(cfg, {"theta": theta, "spacing": a,
                               "n_samples": int(gaps.shape[0])}, tasks=tasks)
    write_table(Path(out) / "cutoff_removal.csv", meta,
                ["epsilon", "coupled_gap_sq", "stderr"], rows)
    write_table(Path(out) / "cutoff_fit.csv", meta, FIT_HEADER,
                fit_rows({"gap_sq_vs_eps": fit}))
    return failures


def exp_crossings(cfg, out, workers, check, resume, dump_raw):
    L = cfg.geometry.side_sites
    geom = geometry_for(cfg, L)
    ann = cfg.analysis.annulus or {}
    ext = geom.extent
    r1 = ann.get("r1", ext / 8)
    r2 = ann.get("r2", ext / 4)
    z = tuple(ann.get("z", (ext / 2, ext / 2)))
    tasks = [_base_task(cfg, geom, i, "crossings", {"z": list(z), "r1": r1, "r2": r2},
                        outdir=out, resume=resume, dump_raw=dump_raw)
             for i in range(cfg.chain.n_chains)]
    results = run_chains(tasks, workers)
    counts = stack_column(results, "n_cross")
    tail = survival_tail(counts)
    failures = []
    _require(check, np.all(np.diff(tail.survival) <= 0), "survival not nonincreasing",
             failures)
    _require(check, not math.isfinite(tail.decay) or tail.decay < 1.0,
             f"geometric decay rate {tail.decay} >= 1", failures)
    meta = base_metadata(cfg, tasks=tasks, extra={
        "z": list(z), "r1": r1, "r2": r2, "n_samples": int(len(counts)),
        "lambda": float(tail.decay), "lambda_stderr": float(tail.decay_stderr),
        "fit_r_squared": float(tail.r_squared),
        "fit_ks": [int(k) for k in tail.fit_ks],
    })
    write_table(Path(out) / "crossings.csv", meta,
                ["k", "survival", "stderr"],
                [(int(k), float(s), float(e)) for k, s, e in tail.rows()])
    return failures


def exp_potts_field(cfg, out, workers, check, resume, dump_raw):
    L = cfg.geometry.side_sites
    qs = cfg.analysis.q_values or [2, 3, 4]
    rows, summary, failures = [], [], []
    for jq, q in enumerate(qs):
        sub = dataclasses.replace(cfg, model=ModelBlock(q=q, beta="critical"))
        geom = geometry_for(sub, L)
        theta_est = _theta_for(sub, geom, 1000 * (jq + 1), out, workers, resume)
        spec = {"box_side": cfg.geometry.box_side, "theta": theta_est.scale_factor, "q": q}
        tasks = [_base_task(sub, geom, 1000 * (jq + 1) + 100 + i, "potts_fields", spec,
                            outdir=out, resume=resume)
                 for i in range(cfg.chain.n_chains)]
        results = run_chains(tasks, workers)
        phi = stack_column(results, "phi")
        color_sum = stack_column(results, "color_sum")
        for idx in range(phi.shape[0]):
            for k in range(q):
                rows.append((q, idx, k + 1, float(phi[idx, k])))
        exact_zero = bool(np.all(color_sum == 0.0))
        _require(check, exact_zero, f"q={q}: color sum not exactly zero", failures)
        bitwise = ""
        if q == 2:
            # the first color field must equal the two-valued field bitwise
            bitwise = str(bool(np.all(phi[:, 0] == -phi[:, 1])))
        summary.append((q, theta_est.scale_factor, int(phi.shape[0]),
                        float(np.abs(color_sum).max()), int(exact_zero), bitwise))
    meta = base_metadata(cfg, {"q_values": list(qs)})
    write_table(Path(out) / "potts_field.csv", meta,
                ["q", "sample_idx", "color", "value"], rows)
    write_table(Path(out) / "potts_summary.csv", meta,
                ["q", "theta", "n_samples", "max_abs_color_sum", "sum_exactly_zero",
                 "q2_antisymmetric"], summary)
    return failures


def exp_near_critical(cfg, out, workers, check, resume, dump_raw):
    L = cfg.geometry.side_sites
    geom = geometry_for(cfg, L)
    theta = cfg.analysis.theta
    if theta is None:
        theta_est = _theta_for(cfg, geom, 0, out, workers, resume)
        theta = theta_est.scale_factor
    if cfg.analysis.h_values:
        h_values = [float(h) for h in cfg.analysis.h_values]
    elif cfg.analysis.lattice_fields:
        from .sampler import CRITICAL_BETA

        h_values = [float(H) * CRITICAL_BETA / theta for H in cfg.analysis.lattice_fields]
    else:
        raise ConfigError("near-critical needs analysis.h_values or analysis.lattice_fields")

    window = cfg.analysis.window_box
    tasks = []
    for i, h in enumerate(h_values):
        model = GhostModel(geom=geom, h=h, scale_factor=theta,
                           window=Rectangle(*window) if window else None)
        tasks.append(_base_task(cfg, geom, 200 + i, "mean_spin",
                                {"mask": None}, ghost_p=model.ghost_p,
                                window_box=window, outdir=out, resume=resume,
                                dump_raw=dump_raw))
    results = run_chains(tasks, workers)
    rows = []
    for h, res in zip(h_values, sorted(results, key=lambda r: r["chain_index"])):
        model = GhostModel(geom=geom, h=h, scale_factor=theta)
        vals = res["columns"]["mean_spin"]
        rows.append((h, model.lattice_field, model.ghost_p,
                     float(vals.mean()), batch_stderr(vals, 20)))
    pts = [(r[1], r[3], r[4]) for r in rows if r[3] > 0 and r[1] > 0]
    fit = fit_power_law(pts) if len(pts) >= 3 else None
    failures = []
    means = [r[3] for r in rows]
    errs = [r[4] for r in rows]
    for k in range(len(means) - 1):
        _require(check, means[k + 1] - means[k] > -2 * (errs[k] + errs[k + 1]),
                 f"magnetization not monotone between h={h_values[k]} and {h_values[k+1]}",
                 failures)
    meta = base_metadata(cfg, {"theta": theta}, tasks=tasks)
    write_table(Path(out) / "magnetization.csv", meta,
                ["h", "lattice_field", "ghost_p", "mean_spin", "stderr"], rows)
    if fit is not None:
        write_table(Path(out) / "magnetization_fit.csv", meta, FIT_HEADER,
                    fit_rows({"mean_spin_vs_H": fit}))

    # truncated correlation at trunc_h > 0 against the h = 0 power law
    if cfg.analysis.trunc_h is not None:
        r_values = cfg.analysis.trunc_r_values or [r for r in (1, 2, 3, 4, 6, 8, 12, 16,
                                                               24, 32, 48, 64)
                                                   if r <= L // 4]
        trows, tfits = [], []
        for j, h in enumerate([float(cfg.analysis.trunc_h), 0.0]):
            model = GhostModel(geom=geom, h=h, scale_factor=theta)
            task = _base_task(cfg, geom, 500 + j, "twopoint",
                              {"r_values": r_values, "exclude_ghost": True},
                              ghost_p=model.ghost_p, outdir=out, resume=resume)
            res = run_chain_task(task)
            tau = res["columns"]["tau"]
            value = tau.mean(axis=0)
            stderr = [batch_stderr(tau[:, k], 20) for k in range(tau.shape[1])]
            pts = [(r * geom.spacing, float(v), float(s))
                   for r, v, s in zip(r_values, value, stderr) if v > 0]
            efit = fit_exponential(pts)
            tfits.append((h, efit.rate, efit.stderr, efit.r_squared,
                          (1 / efit.rate if efit.rate > 0 else float("inf"))))
            for r, v, s in zip(r_values, value, stderr):
                trows.append((h, r * geom.spacing, float(v), float(s)))
        write_table(Path(out) / "truncated_correlation.csv", meta,
                    ["h", "r", "value", "stderr"], trows)
        write_table(Path(out) / "truncated_fit.csv", meta,
                    ["h", "mass", "mass_stderr", "r_squared", "xi"], tfits)
        _require(check, tfits[0][1] > 0, "mass fit not positive at h > 0", failures)
    return failures


def exp_free_energy(cfg, out, workers, check, resume, dump_raw):
    L = cfg.geometry.side_sites
    geom = geometry_for(cfg, L)
    theta = cfg.analysis.theta
    if theta is None:
        theta_est = _theta_for(cfg, geom, 0, out, workers, resume)
        theta = theta_est.scale_factor
    h = cfg.analysis.free_energy_h
    if h is None:
        raise ConfigError("free-energy needs analysis.free_energy_h")
    grid = geometric_grid(2 * h, n=cfg.analysis.t_grid_points)
    f = box_function(cfg.geometry.box_side)
    area = cfg.geometry.box_side**2

    tasks = []
    for i, t in enumerate(grid):
        if t == 0.0:
            continue
        model = GhostModel(geom=geom, h=float(t), scale_factor=theta)
        tasks.append(_base_task(cfg, geom, 300 + i, "block_m",
                                {"box_side": cfg.geometry.box_side, "theta": theta},
                                ghost_p=model.ghost_p, outdir=out, resume=resume))
    results = {r["chain_index"]: r for r in run_chains(tasks, workers)}
    means = np.zeros(len(grid))
    errs = np.zeros(len(grid))
    for i, t in enumerate(grid):
        if t == 0.0:
            continue
        vals = results[300 + i]["columns"]["m"]
        means[i] = vals.mean()
        errs[i] = batch_stderr(vals, 20)
    f_hat = np.zeros(len(grid))
    f_err_sq = np.zeros(len(grid))
    for i in range(1, len(grid)):
        dt = grid[i] - grid[i - 1]
        f_hat[i] = f_hat[i - 1] + 0.5 * dt * (means[i] + means[i - 1])
        f_err_sq[i] = f_err_sq[i - 1] + (0.5 * dt) ** 2 * (errs[i] ** 2 + errs[i - 1] ** 2)
    f_hat /= area
    f_err = np.sqrt(f_err_sq) / area

    k_h = int(np.argmin(np.abs(grid - h)))
    ratio = float(f_hat[-1] / f_hat[k_h]) if f_hat[k_h] > 0 else float("nan")
    failures = []
    _require(check, np.all(np.diff(f_hat) >= 0), "f_hat not increasing", failures)
    slopes = np.diff(f_hat) / np.diff(grid)
    _require(check, np.all(np.diff(slopes) >= -1e-9), "f_hat not convex", failures)
    meta = base_metadata(cfg, {
        "theta": theta, "h": h,
        "doubling_ratio": ratio, "doubling_ratio_expected": 2 ** (16 / 15),
    })
    write_table(Path(out) / "free_energy.csv", meta,
                ["t", "mean_field", "stderr", "f_hat", "f_hat_stderr"],
                [(float(t), float(m), float(e), float(fh), float(fe))
                 for t, m, e, fh, fe in zip(grid, means, errs, f_hat, f_err)])
    return failures


def exp_loop_validate(cfg, out, workers, check, resume, dump_raw):
    """Trace reference loops and export polylines for the figure component."""
    failures = []
    g = build_geometry(3, "free", 1.0)
    cases = {}
    # singleton: no bonds
    dec = clusters.decompose(g, BondConfiguration(open=np.zeros(g.n_bonds, dtype=bool)))
    loop = clusters.trace_outer_loop(dec, g, 0)
    _require(check, loop.length == 4, f"singleton loop has {loop.length} edges", failures)
    cases["singleton"] = (g, dec, [loop])
    # domino: one open bond
    mask = np.zeros(g.n_bonds, dtype=bool)
    for b, (u, v) in enumerate(g.bond_endpoints):
        if {int(u), int(v)} == {0, 1}:
            mask[b] = True
    dec = clusters.decompose(g, BondConfiguration(open=mask))
    loop = clusters.trace_outer_loop(dec, g, 0)
    _require(check, loop.length == 6, f"domino loop has {loop.length} edges", failures)
    cases["domino"] = (g, dec, [loop])
    # fully open 3x3
    dec = clusters.decompose(g, BondConfiguration(open=np.ones(g.n_bonds, dtype=bool)))
    loop = clusters.trace_outer_loop(dec, g, 0)
    _require(check, loop.length == 12, f"3x3 loop has {loop.length} edges", failures)
    _require(check, dec.n_clusters == 1, "3x3 all-open should be one cluster", failures)
    cases["three_by_three"] = (g, dec, [loop])
    # a reproducible critical FK sample (not Bernoulli bonds), all loops
    L = cfg.geometry.side_sites if isinstance(cfg.geometry.side_sites, int) else 8
    gr = build_geometry(L, "free", 1.0)
    from .sampler import sample_ensemble

    chain = ChainConfig(seed=cfg.master_seed, thermalization_sweeps=10 * L,
                        decorrelation_sweeps=2, n_samples=1)
    (bonds, _), = sample_ensemble(gr, model_for(cfg), chain)
    decr = clusters.decompose(gr, bonds)
    loops = [clusters.trace_outer_loop(decr, gr, i) for i in range(decr.n_clusters)]
    diams = decr.diameters()
    for i, lp in enumerate(loops):
        ok = diams[i] <= lp.diameter + 1e-9 and lp.diameter <= diams[i] + 2 * gr.spacing + 1e-9
        _require(check, ok, f"loop/cluster diameter coherence broken for cluster {i}",
                 failures)
    cases["random"] = (gr, decr, loops)

    payload = {"experiment": "loop-validate", "config_hash": config_hash(config_echo(cfg)),
               "code_version": __version__, "cases": {}}
    for name, (geom, dec, loops) in cases.items():
        payload["cases"][name] = {
            "side_sites": geom.side_sites,
            "spacing": geom.spacing,
            "sites": [[float(x), float(y)] for x, y in geom.positions],
            "loops": [
                {
                    "cluster": lp.cluster_index,
                    "kind": lp.kind,
                    "length": lp.length,
                    "diameter": lp.diameter,
                    "vertices": [[float(x), float(y)] for x, y in lp.closed_polyline()],
                }
                for lp in loops if lp is not None
            ],
        }
    write_json(Path(out) / "loops.json", payload)
    write_table(Path(out) / "loop_validate.csv", base_metadata(cfg),
                ["case", "n_loops", "pass"],
                [(name, len(data[2]), int(not failures)) for name, data in cases.items()])
    return failures


RUNNERS = {
    "oracle-check": exp_oracle_check,
    "two-point": exp_two_point,
    "theta-scaling": exp_theta_scaling,
    "field-dist": exp_field_dist,
    "cutoff-removal": exp_cutoff_removal,
    "crossings": exp_crossings,
    "potts-field": exp_potts_field,
    "near-critical": exp_near_critical,
    "free-energy": exp_free_energy,
    "loop-validate": exp_loop_validate,
}


def run(cfg: ExperimentConfig, workers: int = 1, check: bool = False,
        resume: bool = False, dump_raw: bool = False) -> int:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    failures = RUNNERS[cfg.experiment](cfg, out, workers, check, resume, dump_raw)
    hard_fail = cfg.experiment in ("oracle-check", "loop-validate")
    if failures and (check or hard_fail):
        for msg in failures:
            print(f"invariant failure: {msg}", file=sys.stderr)
        return 2
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="fkfield",
                                     description="FK-cluster magnetization-field laboratory")
    sub = parser.add_subparsers(dest="command", required=True)
    runp = sub.add_parser("run", help="run one experiment from a JSON config")
    runp.add_argument("config", help="path to the experiment config (JSON)")
    runp.add_argument("--check", action="store_true",
                      help="fail (exit 2) on any invariant-suite violation")
    runp.add_argument("--workers", type=int, default=1, help="parallel chain workers")
    runp.add_argument("--resume", metavar="DIR", default=None,
                      help="resume from checkpoints in DIR (overrides output_dir)")
    runp.add_argument("--dump-raw", action="store_true",
                      help="write per-chain raw bond-sample streams")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config)
    except (ConfigError, OSError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    resume = False
    if args.resume:
        cfg = dataclasses.replace(cfg, output_dir=args.resume)
        resume = True
    return run(cfg, workers=args.workers, check=args.check, resume=resume,
               dump_raw=args.dump_raw)


if __name__ == "__main__":
    sys.exit(main())
