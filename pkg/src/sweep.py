"""
Hyper-parameter sweep: a sample -> evaluate graph per grid point, ranked by an objective.
"""
import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from config import worker_count
from export import write_json_report, write_sweep_csv
from graph import create_pipeline_graph, run_pipeline
from manifest import build_manifest, write_manifest
from nodes.common import default_artifacts, run_tag
from schemas import SWEEP_OBJECTIVES, MetricReport, RunConfig, SweepRow, SweepSpec, SweepSummary
from utils import DivergenceError, PipelineError

logger = logging.getLogger(__name__)

GridPoint = Tuple[float, int, Optional[float]]


def learning_rate_grid(spec: SweepSpec) -> List[float]:
    """Explicit values, or lr_count values between the two bounds (log or linear spacing)."""
    if spec.learning_rates is not None:
        return [float(v) for v in spec.learning_rates]
    start, stop = spec.lr_bounds
    if spec.spacing == 'log':
        values = np.geomspace(start, stop, spec.lr_count)
    else:
        values = np.linspace(start, stop, spec.lr_count)
    return [float(v) for v in values]


def grid_points(spec: SweepSpec) -> List[GridPoint]:
    p_drops = spec.p_drop if spec.base.sampler.kind == 'mc-dropout' else [None]
    return list(itertools.product(learning_rate_grid(spec), spec.n_samples, p_drops))


def point_config(base: RunConfig, point: GridPoint) -> RunConfig:
    learning_rate, n_samples, p_drop = point
    sampler = base.sampler.model_copy(update={'learning_rate': learning_rate, 'n_samples': n_samples, 'p_drop': p_drop})
    # revalidate the kind-specific rules on the updated sampler
    return base.model_copy(update={'sampler': type(sampler).model_validate(sampler.model_dump())})


def objective_value(report: MetricReport, objective: str) -> Optional[float]:
    if objective == 'min_aurc':
        return report.min_aurc
    if objective == 'ece':
        return report.calibration.ece
    if objective == 'accuracy':
        return report.accuracy
    return report.aurc.get(objective[len('aurc_'):])


def _run_point(index: int, point: GridPoint, spec: SweepSpec, data_dir: Path, out_dir: Path, shared: Dict[str, str]) -> SweepRow:
    learning_rate, n_samples, p_drop = point
    row = SweepRow(learning_rate=learning_rate, n_samples=n_samples, p_drop=p_drop)
    point_dir = out_dir / 'sweep' / run_tag(spec.base) / f'point-{index:03d}'
    artifacts = {
        **shared,
        'ensemble': str(point_dir / 'ensemble.bin'),
        'report': str(point_dir / 'report.json'),
    }
    try:
        cfg = point_config(spec.base, point)
        graph = create_pipeline_graph(['sample', 'evaluate'])
        state = run_pipeline(graph, cfg, data_dir, out_dir, artifacts=artifacts)
        report = state['results']['evaluate']
        row.objective = objective_value(report, spec.objective)
        row.report_path = artifacts['report']
    except DivergenceError as e:
        logger.warning(f"Sweep point {index} (lr={learning_rate}, n={n_samples}, p={p_drop}) diverged: {e.diagnostic}")
        row.status = 'diverged'
        row.error = e.diagnostic
    except (PipelineError, ValueError) as e:
        logger.warning(f"Sweep point {index} (lr={learning_rate}, n={n_samples}, p={p_drop}) failed: {e}")
        row.status = 'failed'
        row.error = str(e)
    return row


def rank_rows(rows: List[SweepRow], objective: str) -> List[SweepRow]:
    """Successful rows best-first (stable on ties), then diverged/failed rows in grid order."""
    larger_is_better = SWEEP_OBJECTIVES[objective]
    done = [r.status == 'ok' and r.objective is not None for r in rows]
    ok = [r for r, d in zip(rows, done) if d]
    rest = [r for r, d in zip(rows, done) if not d]
    ok.sort(key=lambda r: -r.objective if larger_is_better else r.objective)
    return ok + rest


def run_sweep(spec: SweepSpec, data_dir: Path, out_dir: Path, artifacts: Optional[Dict[str, str]] = None) -> SweepSummary:
    """
    Run every grid point with the base seed, rank the rows and write sweep.csv / sweep.json.

    theta* and the feature files come from the out_dir layout (or explicit artifacts);
    each point writes its ensemble and report under sweep/<kind>-<scope>/point-NNN/.
    Points run on spec.max_workers threads (capped by MAX_WORKERS); rows come back in grid order either way.
    """
    out_dir = Path(out_dir)
    points = grid_points(spec)
    shared = {
        key: value for key, value in {**default_artifacts(out_dir, spec.base), **(artifacts or {})}.items()
        if key not in ('ensemble', 'report', 'ood_report')
    }
    manifest = build_manifest('sweep', config=spec.model_dump(), seeds={'sampler': spec.base.sampler.seed})
    workers = worker_count(spec.max_workers)
    logger.info(f"Sweeping {len(points)} grid point(s) for {run_tag(spec.base)} on {workers} worker(s)")

    with ThreadPoolExecutor(max_workers=workers) as executor:
        futures = [
            executor.submit(_run_point, i, point, spec, Path(data_dir), out_dir, shared)
            for i, point in enumerate(points)
        ]
        rows = [future.result() for future in futures]

    ranked = rank_rows(rows, spec.objective)
    best = ranked[0] if ranked and ranked[0].status == 'ok' else None
    summary = SweepSummary(
        manifest_hash=manifest.manifest_hash,
        kind=spec.base.sampler.kind,
        scope=spec.base.sampler.scope,
        objective=spec.objective,
        rows=ranked,
        best=best,
    )
    sweep_dir = out_dir / 'sweep' / run_tag(spec.base)
    outputs = [
        write_sweep_csv(ranked, sweep_dir / 'sweep.csv', manifest.manifest_hash),
        write_json_report(summary, sweep_dir / 'sweep.json'),
    ]
    write_manifest(manifest, sweep_dir / 'manifest.json', outputs=outputs)
    if best is not None:
        logger.info(f"Best point: lr={best.learning_rate}, n_samples={best.n_samples}, p_drop={best.p_drop}, {spec.objective}={best.objective}")
    else:
        logger.warning("No sweep point completed successfully")
    return summary
