"""
LangGraph workflow definition for the Last-Layer Uncertainty pipeline.

Stages run in the fixed order train -> extract -> sample -> evaluate -> ood.
A graph holds any subset of them, wired in that order.
"""
import logging
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, TypedDict, Union

from langgraph.graph import END, StateGraph

from nodes.evaluate_node import evaluate_node
from nodes.extract_node import extract_node
from nodes.ood_node import ood_node
from nodes.sample_node import sample_node
from nodes.train_node import train_node
from schemas import RunConfig

logger = logging.getLogger(__name__)

STAGE_ORDER = ['train', 'extract', 'sample', 'evaluate', 'ood']

_NODES: Dict[str, Callable[[Dict[str, Any]], Dict[str, Any]]] = {
    'train': train_node,
    'extract': extract_node,
    'sample': sample_node,
    'evaluate': evaluate_node,
    'ood': ood_node,
}


class PipelineState(TypedDict, total=False):
    """TypedDict for LangGraph state."""
    config: RunConfig
    data_dir: str
    out_dir: str
    artifacts: Dict[str, str]
    manifests: Dict[str, str]
    results: Dict[str, Any]
    errors: List[str]
    metadata: Dict[str, Any]


def create_pipeline_graph(stages: Optional[Sequence[str]] = None):
    """
    Create and configure the LangGraph workflow.

    Args:
        stages: stage names to include (default: all); they always run in pipeline order

    Returns:
        Compiled graph
    """
    stages = list(stages or STAGE_ORDER)
    unknown = [s for s in stages if s not in _NODES]
    if unknown or not stages:
        raise ValueError(f"unknown or empty stage list: {stages}")
    ordered = [s for s in STAGE_ORDER if s in stages]

    workflow = StateGraph(PipelineState)
    for stage in ordered:
        workflow.add_node(stage, _NODES[stage])

    workflow.set_entry_point(ordered[0])
    for current, following in zip(ordered, ordered[1:]):
        workflow.add_edge(current, following)
    workflow.add_edge(ordered[-1], END)

    return workflow.compile()


def run_pipeline(
    graph,
    config: RunConfig,
    data_dir: Union[str, Path],
    out_dir: Union[str, Path],
    artifacts: Optional[Dict[str, str]] = None,
    progress_callback: Optional[Callable[[str, float, str], None]] = None,
) -> Dict[str, Any]:
    """
    Run the pipeline with given inputs.

    Args:
        graph: Compiled LangGraph instance
        config: validated run config
        data_dir: directory holding the IDX files
        out_dir: root of all stage outputs
        artifacts: explicit artifact paths overriding the out_dir layout
        progress_callback: optional hook (stage, percent, message)

    Returns:
        Final state dictionary
    """
    initial_state = {
        'config': config,
        'data_dir': str(data_dir),
        'out_dir': str(out_dir),
        'artifacts': dict(artifacts or {}),
        'manifests': {},
        'results': {},
        'errors': [],
        'metadata': {
            'progress_callback': progress_callback,
        },
    }

    try:
        return graph.invoke(initial_state)
    except Exception as e:
        logger.error(f"Error running pipeline: {e}", exc_info=True)
        raise
