"""
CSV / JSON emission of records, curves, reliability bins, histograms, sweep tables and reports.

Every CSV starts with a "# manifest_hash: <hash>" comment line; read them back with
pandas.read_csv(path, comment='#').
"""
import logging
from pathlib import Path
from typing import Sequence, Union

import pandas as pd
from pydantic import BaseModel

from schemas import CalibrationReport, HistogramReport, PredictionRecord, RiskCoveragePoint, SweepRow

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

RECORD_COLUMNS = ['index', 'y', 'f_hat', 'sr', 'std_kappa', 'q_entropy_kappa']
CURVE_COLUMNS = ['threshold', 'coverage', 'risk']
RELIABILITY_COLUMNS = ['lower', 'upper', 'n', 'accuracy', 'confidence']
HISTOGRAM_COLUMNS = ['lower', 'upper', 'correct', 'incorrect']


def _write_frame(frame: pd.DataFrame, path: PathLike, manifest_hash: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='') as f:
        f.write(f"# manifest_hash: {manifest_hash}\n")
        frame.to_csv(f, index=False, float_format='%.17g', lineterminator='\n')
    logger.debug(f"Wrote {len(frame)} rows to {path}")
    return path


def records_frame(records: Sequence[PredictionRecord], include_posterior: bool = False) -> pd.DataFrame:
    frame = pd.DataFrame(
        [[r.index, r.label, r.predicted, r.sr, r.std_kappa, r.q_entropy_kappa] for r in records],
        columns=RECORD_COLUMNS,
    )
    if include_posterior and records:
        posterior = pd.DataFrame(
            [r.posterior for r in records],
            columns=[f'p_{k}' for k in range(len(records[0].posterior))],
        )
        frame = pd.concat([frame, posterior], axis=1)
    return frame


def write_records_csv(records: Sequence[PredictionRecord], path: PathLike, manifest_hash: str, include_posterior: bool = False) -> Path:
    return _write_frame(records_frame(records, include_posterior), path, manifest_hash)


def write_curve_csv(curve: Sequence[RiskCoveragePoint], path: PathLike, manifest_hash: str) -> Path:
    frame = pd.DataFrame([[p.threshold, p.coverage, p.selective_risk] for p in curve], columns=CURVE_COLUMNS)
    return _write_frame(frame, path, manifest_hash)


def write_reliability_csv(report: CalibrationReport, path: PathLike, manifest_hash: str) -> Path:
    frame = pd.DataFrame(
        [[b.lower, b.upper, b.count, b.accuracy, b.confidence] for b in report.bins],
        columns=RELIABILITY_COLUMNS,
    )
    return _write_frame(frame, path, manifest_hash)


def write_histogram_csv(histogram: HistogramReport, path: PathLike, manifest_hash: str) -> Path:
    edges = histogram.edges
    frame = pd.DataFrame(
        {
            'lower': edges[:-1],
            'upper': edges[1:],
            'correct': histogram.correct,
            'incorrect': histogram.incorrect,
        },
        columns=HISTOGRAM_COLUMNS,
    )
    return _write_frame(frame, path, manifest_hash)


def sweep_frame(rows: Sequence[SweepRow]) -> pd.DataFrame:
    return pd.DataFrame([row.model_dump() for row in rows], columns=list(SweepRow.model_fields))


def write_sweep_csv(rows: Sequence[SweepRow], path: PathLike, manifest_hash: str) -> Path:
    return _write_frame(sweep_frame(rows), path, manifest_hash)


def write_json_report(report: BaseModel, path: PathLike) -> Path:
    """Reports are pydantic models that already carry their manifest_hash."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        f.write(report.model_dump_json(indent=2))
        f.write('\n')
    logger.info(f"Wrote {type(report).__name__} to {path}")
    return path


def read_csv(path: PathLike) -> pd.DataFrame:
    return pd.read_csv(path, comment='#')


def read_manifest_hash(path: PathLike) -> str:
    """The hash from the first line of an exported CSV ('' when absent)."""
    with open(path, 'r', encoding='utf-8') as f:
        first = f.readline().strip()
    prefix = '# manifest_hash:'
    return first[len(prefix):].strip() if first.startswith(prefix) else ''
