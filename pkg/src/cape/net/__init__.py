from .checkpoint import architecture_manifest, load_checkpoint, save_checkpoint
from .model import ArchConfig, CapeNet, GraphOperators

__all__ = ["ArchConfig", "CapeNet", "GraphOperators", "architecture_manifest", "load_checkpoint", "save_checkpoint"]
