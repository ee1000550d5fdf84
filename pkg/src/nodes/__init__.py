"""
LangGraph nodes for the Last-Layer Uncertainty pipeline.
"""
from .train_node import train_node
from .extract_node import extract_node
from .sample_node import sample_node
from .evaluate_node import evaluate_node
from .ood_node import ood_node

__all__ = ['train_node', 'extract_node', 'sample_node', 'evaluate_node', 'ood_node']
