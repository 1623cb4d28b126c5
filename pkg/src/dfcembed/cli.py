"""Command-line driver: ``dfcembed <command> --config PATH``.

Commands run the stages of the pipeline on the sessions listed in a manifest:

    simulate    write a synthetic population (data, labels, manifest, truth)
    estimate    one precision sequence per session, plus a tuning report
    embed-pca   unsupervised embedding: model, trajectories, component networks
    embed-lda   supervised embedding: screen, model, held-out report
    evaluate    recovery scores against simulated truth, as JSON
    pipeline    all of the above in order

Exit status is 0 on success, 2 for configuration errors and 3 for runtime
failures (including solver non-convergence). Set ``DFCEMBED_LOG_LEVEL`` to
``DEBUG`` or ``INFO`` for progress messages.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from dfcembed.config import ConfigError, PipelineConfig, load_config
from dfcembed.covariance import kernel_weighted_covariances, select_bandwidth
from dfcembed.ingest import (IngestError, highpass_filter, load_session, read_manifest,
                             standardize, write_manifest, write_session)
from dfcembed.laplacian import laplacian_sequence, save_stacked, stack_population
from dfcembed.lda import (ContrastSpec, evaluate_heldout, fit_lda_stacked, lda_network,
                          project_lda, save_lda_model, screen_subjects, stability_screen,
                          write_screen)
from dfcembed.pca import (component_network, fit_pca, mean_trajectory, project_pca,
                          save_pca_model, write_network, write_trajectory)
from dfcembed.single import (ConvergenceWarning, PrecisionSequence, aic, load_precision_sequence,
                             save_precision_sequence, solve_single, tune_hyperparams)
from dfcembed.synth import (generate_piecewise_network, generate_two_task_population,
                            sample_timeseries, score_recovery, truth_from_sequence)

logger = logging.getLogger("dfcembed")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


class PipelineError(RuntimeError):
    """A stage could not complete on valid configuration."""


def _session_stem(subject_id: str, acquisition: str) -> str:
    return f"{subject_id}_{acquisition}"


def _write_json(path: Path, obj):
    def clean(x):
        if isinstance(x, dict):
            return {str(k): clean(v) for k, v in x.items()}
        if isinstance(x, (list, tuple)):
            return [clean(v) for v in x]
        if isinstance(x, np.ndarray):
            return clean(x.tolist())
        if isinstance(x, (np.floating, float)):
            return float(x) if math.isfinite(x) else None
        if isinstance(x, np.integer):
            return int(x)
        return x
    path.write_text(json.dumps(clean(obj), indent=2, sort_keys=True) + "\n")


def _entries(cfg: PipelineConfig) -> list[dict]:
    path = cfg.manifest_path
    if not path.is_file():
        raise PipelineError(f"manifest not found: {path}")
    entries = read_manifest(path)
    if not entries:
        raise PipelineError(f"manifest {path} lists no sessions")
    return entries


def _load(cfg: PipelineConfig, entry: dict):
    return load_session(entry["data_path"], entry["annotation_path"], entry["subject_id"],
                        entry["acquisition"], sampling_interval=cfg.sampling_interval)


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def cmd_simulate(cfg: PipelineConfig) -> int:
    out = cfg.output_dir / "sim"
    (out / "truth").mkdir(parents=True, exist_ok=True)
    if cfg.kind == "two_task":
        population, truths = generate_two_task_population(
            cfg.subjects, cfg.n, cfg.p, cfg.n_discriminative, cfg.seed,
            block_length=cfg.block_length, task_labels=tuple(cfg.task_labels),
            acquisitions=cfg.acquisitions, effect=cfg.effect,
            sampling_interval=cfg.sampling_interval)
        sessions = list(population)
    else:
        children = np.random.SeedSequence(cfg.seed).spawn(cfg.subjects)
        sessions, truths = [], {}
        for s, child in enumerate(children):
            rng = np.random.default_rng(child)
            truth = generate_piecewise_network(cfg.p, cfg.segment_lengths, cfg.edges_per_segment,
                                               rng.integers(2**32))
            sid = f"sub{s + 1:03d}"
            for acq in cfg.acquisitions:
                sessions.append(sample_timeseries(truth, rng.integers(2**32), sid, acq,
                                                  sampling_interval=cfg.sampling_interval))
                truths[(sid, acq)] = truth

    entries, truth_rows = [], []
    for session in sessions:
        stem = _session_stem(session.subject_id, session.acquisition)
        write_session(session, out / f"{stem}.tsv", out / f"{stem}.labels.txt")
        entries.append({"subject_id": session.subject_id, "acquisition": session.acquisition,
                        "data_path": f"{stem}.tsv", "annotation_path": f"{stem}.labels.txt"})
        truth = truths[(session.subject_id, session.acquisition)]
        save_precision_sequence(PrecisionSequence(truth.precisions), out / "truth" / f"{stem}.prec.txt")
        truth_rows.append(f"{session.subject_id}\t{session.acquisition}\ttruth/{stem}.prec.txt")
    write_manifest(out / "manifest.tsv", entries)
    (out / "truth_manifest.tsv").write_text(
        "subject_id\tacquisition\ttruth_path\n" + "".join(r + "\n" for r in truth_rows))

    disc = sorted(next(iter(truths.values())).discriminative_edges)
    labels = sessions[0].node_labels
    with open(out / "discriminative_edges.tsv", "w") as fh:
        fh.write("node_j\tnode_k\n")
        for j, k in disc:
            fh.write(f"{labels[j]}\t{labels[k]}\n")
    logger.info("simulated %d sessions into %s", len(sessions), out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# estimate
# ---------------------------------------------------------------------------

def _estimate_one(cfg: PipelineConfig, entry: dict):
    """Preprocess, choose bandwidth and penalties, solve. Runs in a worker process."""
    session = _load(cfg, entry)
    if cfg.highpass:
        session = highpass_filter(session, cfg.highpass_cutoff)
    if cfg.standardize:
        session = standardize(session)
    h = select_bandwidth(session, cfg.bandwidth)
    cov = kernel_weighted_covariances(session, h)
    report: list[dict] = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        try:
            solver_cfg = tune_hyperparams(cov, cfg.lambda1, cfg.lambda2, cfg.solver_template(),
                                          report=report)
        except RuntimeError:
            solver_cfg = None
        est = solve_single(cov, solver_cfg) if solver_cfg is not None else None
    if est is not None and not report:
        value = aic(est, cov) if est.converged else float("nan")
        report = [{"lambda1": est.lambda1, "lambda2": est.lambda2, "aic": value,
                   "converged": est.converged, "n_iter": est.n_iter}]
    return h, report, est


def cmd_estimate(cfg: PipelineConfig, workers: int = 1) -> int:
    entries = _entries(cfg)
    out = cfg.output_dir / "estimates"
    out.mkdir(parents=True, exist_ok=True)
    if workers > 1 and len(entries) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_estimate_one, [cfg] * len(entries), entries))
    else:
        results = [_estimate_one(cfg, e) for e in entries]

    # all writes happen here, in manifest order
    failed = []
    with open(out / "tuning.tsv", "w") as fh:
        fh.write("subject_id\tacquisition\tbandwidth\tlambda1\tlambda2\taic\tconverged\t"
                 "n_iter\tselected\n")
        for entry, (h, report, est) in zip(entries, results):
            sid, acq = entry["subject_id"], entry["acquisition"]
            if est is None or not est.converged:
                failed.append(f"{sid}/{acq}")
            for r in report:
                chosen = est is not None and (r["lambda1"], r["lambda2"]) == (est.lambda1, est.lambda2)
                fh.write(f"{sid}\t{acq}\t{float(h)!r}\t{float(r['lambda1'])!r}\t{float(r['lambda2'])!r}\t"
                         f"{float(r['aic'])!r}\t{int(r['converged'])}\t{r['n_iter']}\t"
                         f"{int(chosen)}\n")
            if est is not None:
                save_precision_sequence(est, out / f"{_session_stem(sid, acq)}.prec.txt")
    for name in failed:
        logger.error("solver did not converge for session %s", name)
    if failed:
        raise PipelineError(f"{len(failed)} session(s) did not converge: {', '.join(failed)}")
    logger.info("estimated %d sessions", len(entries))
    return EXIT_OK


# ---------------------------------------------------------------------------
# embeddings
# ---------------------------------------------------------------------------

def _stacked(cfg: PipelineConfig):
    entries = _entries(cfg)
    sequences, node_labels = [], None
    for entry in entries:
        sid, acq = entry["subject_id"], entry["acquisition"]
        path = cfg.output_dir / "estimates" / f"{_session_stem(sid, acq)}.prec.txt"
        if not path.is_file():
            raise PipelineError(f"missing estimate for {sid}/{acq}: {path} (run estimate first)")
        session = _load(cfg, entry)
        prec = load_precision_sequence(path)
        if prec.n != session.n or prec.p != session.p:
            raise PipelineError(f"estimate {path} does not match session {sid}/{acq}")
        node_labels = node_labels or session.node_labels
        sequences.append(laplacian_sequence(prec, sid, acq, session.task_labels))
    return stack_population(sequences, node_labels)


def cmd_embed_pca(cfg: PipelineConfig) -> int:
    stacked = _stacked(cfg)
    lap = cfg.output_dir / "laplacians"
    lap.mkdir(parents=True, exist_ok=True)
    save_stacked(stacked, lap / "stacked.tsv", lap / "rows.tsv")

    out = cfg.output_dir / "pca"
    (out / "trajectories").mkdir(parents=True, exist_ok=True)
    model = fit_pca(stacked, k=cfg.k, center=cfg.center)
    save_pca_model(model, out / "model.tsv")
    for sid, acq in stacked.session_keys():
        rows, labels = stacked.session(sid, acq)
        write_trajectory(out / "trajectories" / f"{_session_stem(sid, acq)}.tsv", labels,
                         project_pca(model, rows))
    for acq in dict.fromkeys(m.acquisition for m in stacked.row_meta):
        keys = [key for key in stacked.session_keys() if key[1] == acq]
        try:
            traj = mean_trajectory(model, stacked, acq)
        except ValueError as exc:
            logger.warning("no mean trajectory for %s: %s", acq, exc)
            continue
        _, labels = stacked.session(*keys[0])
        write_trajectory(out / f"mean_trajectory_{acq}.tsv", labels, traj)
    for c in range(model.k):
        write_network(out / f"network_comp_{c + 1}.tsv",
                      component_network(model, c, cfg.retain_fraction))
    with open(out / "explained_variance.tsv", "w") as fh:
        fh.write("component\teigenvalue\texplained_variance_ratio\n")
        for c in range(model.k):
            fh.write(f"comp_{c + 1}\t{float(model.eigenvalues[c])!r}\t"
                     f"{float(model.explained_variance_ratio[c])!r}\n")
    logger.info("PCA embedding with k=%d written to %s", model.k, out)
    return EXIT_OK


def cmd_embed_lda(cfg: PipelineConfig) -> int:
    if not cfg.has_contrast:
        raise ConfigError("embed-lda needs [lda] positive_label and negative_label")
    contrast = ContrastSpec(cfg.positive_label, cfg.negative_label)
    stacked = _stacked(cfg)
    acqs = {m.acquisition for m in stacked.row_meta}
    for acq in (cfg.train_acquisition, cfg.validation_acquisition):
        if acq not in acqs:
            raise PipelineError(f"no sessions with acquisition {acq!r}")
    train_labels = {m.task for m in stacked.row_meta if m.acquisition == cfg.train_acquisition}
    for label in (contrast.positive_label, contrast.negative_label):
        if label not in train_labels:
            raise PipelineError(f"contrast class {label!r} absent from training acquisition "
                                f"{cfg.train_acquisition!r}")

    out = cfg.output_dir / "lda"
    (out / "trajectories").mkdir(parents=True, exist_ok=True)
    try:
        sets = screen_subjects(stacked, contrast, cfg.train_acquisition, cv_folds=cfg.cv_folds,
                               ridge=cfg.ridge, n_lambda=cfg.n_lambda,
                               lambda_min_ratio=cfg.lambda_min_ratio)
    except ValueError as exc:
        raise PipelineError(f"per-subject screening failed: {exc}") from None
    n_edges = stacked.matrix.shape[1]
    screen = stability_screen(sets.values(), tau=cfg.tau, n_edges=n_edges)
    write_screen(out / "screen.tsv", screen, stacked.node_labels)

    summary = {"p_prime": screen.p_prime, "tau": cfg.tau, "n_subjects": len(sets),
               "train_acquisition": cfg.train_acquisition,
               "validation_acquisition": cfg.validation_acquisition,
               "positive_label": contrast.positive_label,
               "negative_label": contrast.negative_label,
               "selected_edges": [stacked.edge_names[e] for e in screen.selected_edges]}
    if screen.p_prime == 0:
        logger.warning("no edge passed the stability screen at tau=%s; no model fitted", cfg.tau)
        summary["status"] = "no edges selected"
        _write_json(out / "summary.json", summary)
        return EXIT_OK

    model = fit_lda_stacked(stacked, screen, contrast, cfg.train_acquisition, cfg.shrinkage)
    save_lda_model(model, out / "model.tsv")
    write_network(out / "network.tsv", lda_network(model))
    report = evaluate_heldout(model, stacked, contrast, cfg.validation_acquisition)
    for sid, acq in stacked.session_keys():
        if acq != cfg.validation_acquisition:
            continue
        rows, labels = stacked.session(sid, acq)
        write_trajectory(out / "trajectories" / f"{_session_stem(sid, acq)}.tsv", labels,
                         project_lda(model, rows), prefix="lda")
    write_trajectory(out / f"mean_trajectory_{cfg.validation_acquisition}.tsv",
                     report["task_labels"], report["mean_trajectory"], prefix="lda")
    summary.update(status="ok", accuracy=report["accuracy"], n_points=report["n_points"],
                   task_correlation=report["task_correlation"])
    _write_json(out / "summary.json", summary)
    logger.info("LDA embedding: %d edges, held-out accuracy %.3f", screen.p_prime,
                report["accuracy"])
    return EXIT_OK


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------

def _read_truth_manifest(path: Path) -> dict[tuple[str, str], Path]:
    lines = path.read_text().splitlines()
    if not lines or lines[0].split("\t") != ["subject_id", "acquisition", "truth_path"]:
        raise PipelineError(f"{path}: expected columns subject_id, acquisition, truth_path")
    out = {}
    for line in lines[1:]:
        if line.strip():
            sid, acq, rel = line.split("\t")
            p = Path(rel)
            out[(sid, acq)] = p if p.is_absolute() else path.parent / p
    return out


def cmd_evaluate(cfg: PipelineConfig) -> int:
    truth_path = cfg.truth_manifest_path
    if not truth_path.is_file():
        raise PipelineError(f"truth manifest not found: {truth_path}")
    truth_files = _read_truth_manifest(truth_path)
    out = cfg.output_dir / "evaluate"
    out.mkdir(parents=True, exist_ok=True)

    sessions = {}
    for (sid, acq), path in truth_files.items():
        est_path = cfg.output_dir / "estimates" / f"{_session_stem(sid, acq)}.prec.txt"
        if not est_path.is_file():
            raise PipelineError(f"missing estimate for {sid}/{acq}: {est_path}")
        truth = truth_from_sequence(load_precision_sequence(path).matrices)
        scores = score_recovery(load_precision_sequence(est_path), truth)
        sessions[f"{sid}/{acq}"] = scores

    keys = ("mean_precision", "mean_recall", "mean_f1", "change_point_error",
            "change_point_distance", "n_change_points", "n_true_change_points")
    report = {
        "sessions": {name: {k: s[k] for k in keys + ("change_points",)}
                     for name, s in sessions.items()},
        "summary": {k: float(np.nanmean([s[k] for s in sessions.values()]))
                    if any(np.isfinite(s[k]) for s in sessions.values()) else None
                    for k in keys},
    }
    lda_summary = cfg.output_dir / "lda" / "summary.json"
    if lda_summary.is_file():
        report["lda"] = json.loads(lda_summary.read_text())
        disc_path = truth_path.parent / "discriminative_edges.tsv"
        if disc_path.is_file():
            true_edges = {"--".join(line.split("\t"))
                          for line in disc_path.read_text().splitlines()[1:] if line.strip()}
            chosen = set(report["lda"].get("selected_edges", []))
            report["lda"]["discriminative_recovered"] = len(chosen & true_edges)
            report["lda"]["discriminative_total"] = len(true_edges)
    pca_var = cfg.output_dir / "pca" / "explained_variance.tsv"
    if pca_var.is_file():
        rows = [line.split("\t") for line in pca_var.read_text().splitlines()[1:] if line.strip()]
        report["pca"] = {"explained_variance_ratio": [float(r[2]) for r in rows]}

    _write_json(out / "report.json", report)
    with open(out / "recovery.tsv", "w") as fh:
        fh.write("session\t" + "\t".join(keys) + "\n")
        for name, s in sessions.items():
            fh.write(name + "\t" + "\t".join(repr(float(s[k])) for k in keys) + "\n")
    logger.info("evaluated %d sessions; mean F1 %.3f", len(sessions),
                report["summary"]["mean_f1"] or float("nan"))
    return EXIT_OK


def cmd_pipeline(cfg: PipelineConfig, workers: int = 1) -> int:
    if cfg.simulate:
        cmd_simulate(cfg)
    cmd_estimate(cfg, workers)
    cmd_embed_pca(cfg)
    if cfg.has_contrast:
        cmd_embed_lda(cfg)
    if cfg.truth_manifest_path.is_file():
        cmd_evaluate(cfg)
    return EXIT_OK


COMMANDS = {
    "simulate": lambda cfg, args: cmd_simulate(cfg),
    "estimate": lambda cfg, args: cmd_estimate(cfg, args.workers),
    "embed-pca": lambda cfg, args: cmd_embed_pca(cfg),
    "embed-lda": lambda cfg, args: cmd_embed_lda(cfg),
    "evaluate": lambda cfg, args: cmd_evaluate(cfg),
    "pipeline": lambda cfg, args: cmd_pipeline(cfg, args.workers),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dfcembed",
                                     description="Time-varying network estimation and embedding.")
    parser.add_argument("command", choices=list(COMMANDS))
    parser.add_argument("--config", required=True, metavar="PATH", help="INI configuration file")
    parser.add_argument("--workers", type=int, default=1, metavar="N",
                        help="processes for per-session estimation (default 1)")
    parser.add_argument("--seed", type=int, default=None, metavar="N",
                        help="override the [simulate] seed")
    parser.add_argument("--output", default=None, metavar="DIR",
                        help="override the [output] directory")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = os.environ.get("DFCEMBED_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        cfg = load_config(args.config, seed=args.seed, output=args.output)
        cfg.output_dir.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"dfcembed: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PipelineError, IngestError, ValueError, RuntimeError, OSError) as exc:
        print(f"dfcembed: {args.command} failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
