"""HDR video reconstruction from alternating-exposure LDR frames with
luminance-based patch-attention alignment."""

from .config import ModelConfig, RunConfig, load_config
from .fusion_merge import LanHdrNet

__all__ = ["LanHdrNet", "ModelConfig", "RunConfig", "load_config"]
__version__ = "0.1.0"
