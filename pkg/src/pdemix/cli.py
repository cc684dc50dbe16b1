"""Command-line entry point for reproducible generate/fit/evaluate runs.

All commands are driven by a strict-schema JSON config and are idempotent
for a fixed config and seed: reruns overwrite outputs with identical bytes.
CSV outputs carry a comment line with the config hash and seed.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

import click
import numpy as np

from . import dataio, engine
from .datagen import GenConfig, SampleRecord, generate_dataset
from .dataio import (DatasetIOError, canonical_json, config_from_dict,
                     config_to_dict, load_manifest, load_sample, write_dataset)
from .engine import (DegeneracyReport, FitConfig, FitReport, degeneracy_probe,
                     evaluate_assignments, fit_many, model_evidence, predict)
from .pde import ReactionKind
from .variational import ComponentSpec, PriorSpec, VariationalState

_FIT_KEYS = {"max_iters", "learning_rate", "adam_betas", "eval_mc_samples",
             "seed", "convergence", "solver_rtol", "solver_atol"}
_RUN_KEYS = {"gen", "fit", "seeds", "priors"}
_PRIOR_KEYS = {"z_x_prior", "z_r_prior"}


class RunConfig:
    def __init__(self, gen: GenConfig, fit: FitConfig, seeds: list[int],
                 priors: PriorSpec, raw: dict):
        self.gen = gen
        self.fit = fit
        self.seeds = seeds
        self.priors = priors
        self.raw = raw

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(canonical_json(self.raw).encode()).hexdigest()[:12]

    def components(self) -> list[ComponentSpec]:
        return [ComponentSpec(k, self.priors) for k in self.gen.components]


def _fit_from_dict(d: dict) -> FitConfig:
    unknown = set(d) - _FIT_KEYS
    if unknown:
        raise click.ClickException(f"unknown fit config keys: {sorted(unknown)}")
    kw = {}
    for key in _FIT_KEYS & set(d):
        v = d[key]
        if key in ("adam_betas", "convergence"):
            v = tuple(v)
        kw[key] = v
    try:
        return FitConfig(**kw)
    except (TypeError, ValueError) as exc:
        raise click.ClickException(f"invalid fit config: {exc}")


def load_run_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise click.ClickException(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise click.ClickException(f"config is not valid JSON: {exc}")
    if not isinstance(raw, dict):
        raise click.ClickException("config must be a JSON object")
    unknown = set(raw) - _RUN_KEYS
    if unknown:
        raise click.ClickException(f"unknown config keys: {sorted(unknown)}")
    if "gen" not in raw:
        raise click.ClickException("config needs a 'gen' section")
    try:
        gen = config_from_dict(raw["gen"])
    except (DatasetIOError, ValueError) as exc:
        raise click.ClickException(str(exc))
    fit = _fit_from_dict(raw.get("fit", {}))
    seeds = [int(s) for s in raw.get("seeds", [fit.seed])]
    if not seeds:
        raise click.ClickException("seeds must be non-empty")
    pr = raw.get("priors", {})
    unknown = set(pr) - _PRIOR_KEYS
    if unknown:
        raise click.ClickException(f"unknown priors keys: {sorted(unknown)}")
    priors = PriorSpec(
        z_x_prior=tuple(pr.get("z_x_prior", PriorSpec().z_x_prior)),
        z_r_prior=tuple(pr.get("z_r_prior", PriorSpec().z_r_prior)))
    return RunConfig(gen, fit, seeds, priors, raw)


def _workers(opt: int | None) -> int:
    if opt is not None:
        return max(1, opt)
    env = os.environ.get("PDEMIX_WORKERS")
    return max(1, int(env)) if env else 1


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return f"{x:.9g}"
    return str(x)


def _write_csv(path: Path, header: list[str], rows, config_hash: str, seed: int):
    lines = [f"# config_hash={config_hash} seed={seed}", ",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _report_dict(rep: FitReport, truth) -> dict:
    st = rep.state
    d = {
        "sample_id": rep.sample_id,
        "status": rep.status,
        "assigned": rep.assigned,
        "component_kinds": rep.component_kinds,
        "final_weights": rep.final_weights.tolist(),
        "final_elbo": rep.final_elbo,
        "final_elbo_se": rep.final_elbo_se,
        "params_median": rep.params.tolist(),
        "elbo_trace": list(rep.elbo_trace),
        "state": {
            "mu_x": st.mu_x.tolist(), "log_var_x": st.log_var_x.tolist(),
            "mu_r": st.mu_r.tolist(), "log_var_r": st.log_var_r.tolist(),
            "logits": st.logits.tolist(), "log_sigma2": st.log_sigma2,
        },
    }
    if truth is not None:
        d["truth"] = {"component_id": truth.component_id,
                      "z_x": truth.z_x, "z_r": truth.z_r}
    return d


def report_from_dict(d: dict) -> FitReport:
    st = d["state"]
    state = VariationalState(
        mu_x=np.asarray(st["mu_x"], dtype=float),
        log_var_x=np.asarray(st["log_var_x"], dtype=float),
        mu_r=np.asarray(st["mu_r"], dtype=float),
        log_var_r=np.asarray(st["log_var_r"], dtype=float),
        logits=np.asarray(st["logits"], dtype=float),
        log_sigma2=float(st["log_sigma2"]))
    return FitReport(
        sample_id=d["sample_id"], status=d["status"],
        elbo_trace=list(d.get("elbo_trace", [])),
        final_elbo=float(d["final_elbo"]),
        final_elbo_se=float(d["final_elbo_se"]),
        final_weights=np.asarray(d["final_weights"], dtype=float),
        assigned=int(d["assigned"]),
        params=np.asarray(d["params_median"], dtype=float),
        state=state, component_kinds=list(d["component_kinds"]))


@click.group()
def main():
    """Infer which reaction-diffusion PDE generated each observed sequence."""


@main.command("generate")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", type=int, default=None, help="override gen seed")
def cmd_generate(config_path, out_dir, seed):
    """Generate the synthetic benchmark dataset onto disk."""
    run = load_run_config(config_path)
    gen = run.gen
    if seed is not None:
        d = config_to_dict(gen)
        d["seed"] = seed
        gen = config_from_dict(d)
    ds = generate_dataset(gen)
    out = Path(out_dir)
    try:
        write_dataset(ds, out)
    except OSError as exc:
        raise click.ClickException(f"cannot write dataset: {exc}")
    k = len(gen.components)
    click.echo(f"wrote {len(ds.samples)} samples to {out}")
    for split, ids in ds.splits.items():
        if not ids:
            continue
        by_id = {s.id: s for s in ds.samples}
        hist = [0] * k
        for sid in ids:
            t = by_id[sid].truth
            if t is not None:
                hist[t.component_id] += 1
        click.echo(f"  {split}: {len(ids)} samples, per-class {hist}")


def _load_split(data_dir, split: str):
    """Yield (entry, sample-or-None, error-or-None) for one split."""
    manifest = load_manifest(data_dir)
    for entry in manifest["samples"]:
        if entry.get("split", "test") != split:
            continue
        try:
            yield entry, load_sample(data_dir, entry), None
        except DatasetIOError as exc:
            yield entry, None, exc


@main.command("fit")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--data", "data_dir", required=True, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", type=int, default=None, help="override fit seed")
@click.option("--workers", type=int, default=None)
@click.option("--split", default="test", show_default=True)
def cmd_fit(config_path, data_dir, out_dir, seed, workers, split):
    """Fit the mixture to every sample of a split; emit reports and metrics."""
    run = load_run_config(config_path)
    cfg = run.fit if seed is None else FitConfig(
        **{**run.fit.__dict__, "seed": seed})
    components = run.components()
    out = Path(out_dir)
    (out / "reports").mkdir(parents=True, exist_ok=True)

    samples: list[SampleRecord] = []
    failed: list[tuple[str, str]] = []
    try:
        for entry, sample, err in _load_split(data_dir, split):
            if err is not None:
                failed.append((entry.get("id", "?"), str(err)))
            else:
                samples.append(sample)
    except DatasetIOError as exc:
        raise click.ClickException(str(exc))

    reports = fit_many(samples, components, cfg, workers=_workers(workers))
    by_id = {s.id: s for s in samples}
    for rep in reports:
        truth = by_id[rep.sample_id].truth
        (out / "reports" / f"{rep.sample_id}.json").write_text(
            canonical_json(_report_dict(rep, truth)), encoding="utf-8")
    for sid, msg in failed:
        (out / "reports" / f"{sid}.json").write_text(
            canonical_json({"sample_id": sid, "status": "Failed",
                            "error": msg}), encoding="utf-8")

    h = run.config_hash
    _write_csv(out / "weights.csv",
               ["sample_id"] + [f"c{k}" for k in range(len(components))],
               [(r.sample_id, *r.final_weights) for r in reports], h, cfg.seed)
    _write_csv(out / "elbo_trace.csv", ["sample_id", "step", "elbo"],
               ((r.sample_id, i, v) for r in reports
                for i, v in enumerate(r.elbo_trace)), h, cfg.seed)

    have_truth = samples and all(by_id[r.sample_id].truth is not None
                                 for r in reports)
    if reports and have_truth:
        tables = evaluate_assignments(samples, reports)
        _write_csv(out / "confusion.csv",
                   ["true_component"] + [f"pred{k}" for k in
                                         range(len(components))],
                   [(i, *row) for i, row in enumerate(tables.confusion)],
                   h, cfg.seed)
        _write_csv(out / "residuals.csv",
                   ["sample_id", "true_component", "assigned",
                    "z_x_residual", "z_r_residual"],
                   tables.residuals, h, cfg.seed)
        click.echo(f"accuracy {tables.accuracy:.4f} "
                   f"macro-recall {tables.macro_recall:.4f}")
    else:
        _write_csv(out / "confusion.csv",
                   ["true_component"] + [f"pred{k}" for k in
                                         range(len(components))],
                   [], h, cfg.seed)
        _write_csv(out / "residuals.csv",
                   ["sample_id", "true_component", "assigned",
                    "z_x_residual", "z_r_residual"], [], h, cfg.seed)
    click.echo(f"fit {len(reports)} samples ({len(failed)} failed) -> {out}")


def _parse_subsets(spec: str, k: int) -> list[tuple[int, ...]]:
    subsets = []
    for part in spec.split(";"):
        part = part.strip()
        if not part:
            continue
        try:
            idx = tuple(sorted({int(v) for v in part.split(",")}))
        except ValueError:
            raise click.ClickException(f"cannot parse subset {part!r}")
        if not idx or idx[0] < 0 or idx[-1] >= k:
            raise click.ClickException(
                f"subset {part!r} out of range for {k} components")
        subsets.append(idx)
    if not subsets:
        raise click.ClickException("no subsets given")
    return subsets


@main.command("evidence")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--data", "data_dir", required=True, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--subsets", required=True,
              help="semicolon-separated index groups, e.g. '0;1;0,1'")
@click.option("--workers", type=int, default=None)
@click.option("--split", default="test", show_default=True)
def cmd_evidence(config_path, data_dir, out_dir, subsets, workers, split):
    """Model evidence (summed ELBO) per component subset, across seeds."""
    run = load_run_config(config_path)
    components = run.components()
    groups = _parse_subsets(subsets, len(components))
    samples = []
    try:
        for entry, sample, err in _load_split(data_dir, split):
            if err is not None:
                raise click.ClickException(f"{entry.get('id')}: {err}")
            samples.append(sample)
    except DatasetIOError as exc:
        raise click.ClickException(str(exc))

    rows = []
    for seed in run.seeds:
        cfg = FitConfig(**{**run.fit.__dict__, "seed": seed})
        results = []
        for grp in groups:
            res = model_evidence(samples, components, grp, cfg)
            results.append((grp, res))
        order = sorted(range(len(results)),
                       key=lambda i: -results[i][1].value)
        ranks = {i: r + 1 for r, i in enumerate(order)}
        for i, (grp, res) in enumerate(results):
            rows.append((seed, "+".join(map(str, grp)), res.value,
                         res.stderr, ranks[i]))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "evidence.csv",
               ["seed", "subset", "evidence", "stderr", "rank"],
               rows, run.config_hash, run.seeds[0])
    click.echo(f"wrote {len(rows)} evidence rows -> {out / 'evidence.csv'}")


@main.command("predict")
@click.option("--report", "report_path", required=True, type=click.Path())
@click.option("--data", "data_dir", required=True, type=click.Path())
@click.option("--id", "sample_id", required=True)
@click.option("--times", required=True, help="comma-separated, e.g. '18,36'")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", type=int, default=0, show_default=True)
def cmd_predict(report_path, data_dir, sample_id, times, out_dir, seed):
    """Posterior-mean predicted frames plus central cross-sections."""
    report_path = Path(report_path)
    if report_path.is_dir():
        report_path = report_path / f"{sample_id}.json"
    if not report_path.exists():
        raise click.ClickException(f"no fit report at {report_path}")
    rep = report_from_dict(json.loads(report_path.read_text(encoding="utf-8")))
    if rep.sample_id != sample_id:
        raise click.ClickException(
            f"report is for {rep.sample_id!r}, not {sample_id!r}")
    try:
        t = np.array(sorted(float(v) for v in times.split(",")))
    except ValueError:
        raise click.ClickException(f"cannot parse times {times!r}")

    sample = None
    try:
        manifest = load_manifest(data_dir)
        for entry in manifest["samples"]:
            if entry.get("id") == sample_id:
                sample = load_sample(data_dir, entry)
                break
    except DatasetIOError as exc:
        raise click.ClickException(str(exc))
    if sample is None:
        raise click.ClickException(f"unknown sample id {sample_id!r}")

    cfg = FitConfig(seed=seed)
    traj = predict(rep, sample, t, cfg=cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    h, w = traj.frames.shape[1:]
    rows = []
    for i, tv in enumerate(traj.times):
        frame = traj.frames[i].astype("<f4")
        frame.tofile(out / f"{sample_id}_t{tv:g}.f32")
        for j in range(w):
            rows.append((tv, "row", j, traj.frames[i, h // 2, j]))
        for j in range(h):
            rows.append((tv, "col", j, traj.frames[i, j, w // 2]))
    rhash = hashlib.sha256(report_path.read_bytes()).hexdigest()[:12]
    _write_csv(out / f"{sample_id}_cross_sections.csv",
               ["time", "axis", "index", "value"], rows, rhash, seed)
    click.echo(f"wrote {traj.times.size} predicted frames -> {out}")


@main.command("degeneracy")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--data", "data_dir", required=True, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--true-id", "true_id", required=True, type=int)
@click.option("--wrong-id", "wrong_id", required=True, type=int)
@click.option("--split", default="test", show_default=True)
def cmd_degeneracy(config_path, data_dir, out_dir, true_id, wrong_id, split):
    """Probe model degeneracy: fit the true and a wrong single-component model."""
    run = load_run_config(config_path)
    components = run.components()
    k = len(components)
    if not (0 <= true_id < k and 0 <= wrong_id < k):
        raise click.ClickException(f"component ids must be in [0, {k})")
    rows = []
    n_flagged = 0
    try:
        for entry, sample, err in _load_split(data_dir, split):
            if err is not None:
                raise click.ClickException(f"{entry.get('id')}: {err}")
            if sample.truth is None or sample.truth.component_id != true_id:
                continue
            rep = degeneracy_probe(sample, components[true_id],
                                   components[wrong_id], run.fit)
            n_flagged += rep.flagged
            rows.append((rep.sample_id, rep.nll_true, rep.nll_wrong, rep.gap,
                         rep.param_err_true, rep.param_err_wrong,
                         int(rep.flagged)))
    except DatasetIOError as exc:
        raise click.ClickException(str(exc))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "degeneracy.csv",
               ["sample_id", "nll_true", "nll_wrong", "gap",
                "param_err_true", "param_err_wrong", "flagged"],
               rows, run.config_hash, run.fit.seed)
    click.echo(f"{n_flagged}/{len(rows)} samples flagged -> "
               f"{out / 'degeneracy.csv'}")


if __name__ == "__main__":
    main()
