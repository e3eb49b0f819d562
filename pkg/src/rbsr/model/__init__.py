from .config import ALIGN_VARIANTS, FLOW_SOURCES, FUSION_VARIANTS, ModelConfig
from .layers import ResidualBlock, flow_warp, modulated_deform_conv
from .flow import PyramidFlow, ZeroFlow
from .align import DeformableAlign
from .fusion import FusionBackbone, RecurrentFusion
from .network import RBSR, count_parameters
