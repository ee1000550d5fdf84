"""
Command-line entry point.

Each subcommand runs its stage(s) through the LangGraph pipeline; stages talk to
each other only through the files under --out-dir and their manifests.

    python src/main.py train    --config configs/mnist_sgd_pe.json
    python src/main.py extract  --config configs/mnist_sgd_pe.json
    python src/main.py sample   --config configs/mnist_sgld.json
    python src/main.py evaluate --config configs/mnist_sgld.json --baseline-report output/evaluate/sgd-pe-last-layer/report.json
    python src/main.py pipeline --config configs/half_mnist_sgd_pe.json --out-dir output-half
    python src/main.py sweep    --config configs/sweep_sgld.json

Exit codes: 0 success, 2 usage/config/data error, 3 numeric divergence,
4 artifact incompatibility, 1 anything else.
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

# Add src to path for imports
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root / "src"))

from config import get_path_config, get_runtime_config, load_run_config, load_sweep_spec
from graph import STAGE_ORDER, create_pipeline_graph, run_pipeline
from schemas import RunConfig, SweepSummary
from sweep import run_sweep
from utils import PipelineError

logger = logging.getLogger(__name__)

SUBCOMMANDS = ['train', 'extract', 'sample', 'evaluate', 'ood', 'sweep', 'pipeline']


def _log_progress(stage: str, percent: float, message: str) -> None:
    logger.debug(f"[{stage} {percent:5.1f}%] {message}")


def _run_stages(stages: List[str], cfg: RunConfig, data_dir: Path, out_dir: Path) -> Dict[str, Any]:
    graph = create_pipeline_graph(stages)
    return run_pipeline(graph, cfg, data_dir, out_dir, progress_callback=_log_progress)


def cmd_train(cfg: RunConfig, data_dir: Path, out_dir: Path) -> Dict[str, Any]:
    """Train theta* and write params.bin, train_report.json and the manifest."""
    return _run_stages(['train'], cfg, data_dir, out_dir)


def cmd_extract(cfg: RunConfig, data_dir: Path, out_dir: Path) -> Dict[str, Any]:
    """Write the R feature files for train, test (and the out-of-distribution test set)."""
    return _run_stages(['extract'], cfg, data_dir, out_dir)


def cmd_sample(cfg: RunConfig, data_dir: Path, out_dir: Path) -> Dict[str, Any]:
    """Build the ensemble for cfg.sampler."""
    return _run_stages(['sample'], cfg, data_dir, out_dir)


def cmd_evaluate(cfg: RunConfig, data_dir: Path, out_dir: Path) -> Dict[str, Any]:
    """MetricReport JSON plus records, risk-coverage, reliability and histogram CSVs."""
    return _run_stages(['evaluate'], cfg, data_dir, out_dir)


def cmd_ood(cfg: RunConfig, data_dir: Path, out_dir: Path) -> Dict[str, Any]:
    """OODSummary for an ensemble built on the in-distribution classes."""
    return _run_stages(['ood'], cfg, data_dir, out_dir)


def cmd_pipeline(cfg: RunConfig, data_dir: Path, out_dir: Path) -> Dict[str, Any]:
    """train -> extract -> sample -> evaluate, plus ood when a class split is configured."""
    stages = [s for s in STAGE_ORDER if s != 'ood' or cfg.data.in_classes is not None]
    return _run_stages(stages, cfg, data_dir, out_dir)


def cmd_sweep(config_path: Optional[Path], overrides: Dict[str, Any], data_dir: Path, out_dir: Path) -> SweepSummary:
    """Sample + evaluate every grid point and rank them by the objective."""
    spec = load_sweep_spec(config_path, {f'base.{k}': v for k, v in overrides.items()})
    return run_sweep(spec, data_dir, out_dir)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Last-layer uncertainty: train, extract, sample, evaluate, ood, sweep")
    subparsers = parser.add_subparsers(dest='command', required=True)
    for name in SUBCOMMANDS:
        sub = subparsers.add_parser(name)
        sub.add_argument('--config', type=Path, default=None, help='JSON run config (a sweep spec for "sweep")')
        sub.add_argument('--seed', type=int, default=None, help='seed for training and sampling')
        sub.add_argument('--data-dir', type=Path, default=None, help='directory with the IDX files (env DATA_DIR)')
        sub.add_argument('--out-dir', type=Path, default=None, help='root of all outputs (env OUT_DIR)')
        sub.add_argument('--baseline-report', type=str, default=None, help='SGD-PE report to normalise against')
        sub.add_argument('--kind', choices=['sgd', 'sgld', 'bootstrap', 'mc-dropout', 'sgd-pe'], default=None)
        sub.add_argument('--scope', choices=['last-layer', 'full-network'], default=None)
        sub.add_argument('--confidence', choices=['sr', 'std', 'q-entropy'], default=None)
        sub.add_argument('--verbose', action='store_true', help='debug logging')
    return parser


def config_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    """Dotted-key overrides from the flags that were actually given."""
    baseline_key = 'evaluate.baseline_ood_report' if args.command == 'ood' else 'evaluate.baseline_report'
    return {
        'train.seed': args.seed,
        'sampler.seed': args.seed,
        'sampler.kind': args.kind,
        'sampler.scope': args.scope,
        'evaluate.confidences': [args.confidence] if args.confidence else None,
        baseline_key: args.baseline_report,
    }


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main execution function; returns the process exit code."""
    args = build_parser().parse_args(argv)
    runtime = get_runtime_config()
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else getattr(logging, runtime['log_level'], logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S'
    )

    paths = get_path_config()
    data_dir = args.data_dir or paths['data_dir']
    out_dir = args.out_dir or paths['out_dir']
    overrides = config_overrides(args)

    try:
        if args.command == 'sweep':
            summary = cmd_sweep(args.config, overrides, data_dir, out_dir)
            if summary.best is None:
                logger.error("Sweep finished without a successful grid point")
                return 1
            return 0

        cfg = load_run_config(args.config, overrides)
        commands = {
            'train': cmd_train,
            'extract': cmd_extract,
            'sample': cmd_sample,
            'evaluate': cmd_evaluate,
            'ood': cmd_ood,
            'pipeline': cmd_pipeline,
        }
        final_state = commands[args.command](cfg, data_dir, out_dir)
        for stage, manifest_hash in final_state.get('manifests', {}).items():
            logger.info(f"{stage}: manifest {manifest_hash}")
        return 0

    except PipelineError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code
    except Exception as e:
        logger.error(f"Unexpected error: {e}", exc_info=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
