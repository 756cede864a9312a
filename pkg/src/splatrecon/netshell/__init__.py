"""Weight-loadable skeletons of the learned components.

Texture encoder, RSEM attention block, dual U-Net with cross-branch fusion,
and decoding of 14-channel maps into Gaussians. No training happens here.
"""

from .attention import (
    AttnBlockWeights,
    AttnWeights,
    MLPWeights,
    RSEMLayer,
    attention,
    init_attn_block,
    rsem_block,
    softmax,
)
from .decode import GaussianMapDecodeSpec, decode_gaussian_map
from .encoders import TextureEncoderWeights, crop_regions, init_texture_encoder, texture_encode, texture_features
from .unet import (
    BranchWeights,
    Conv,
    DualUNetWeights,
    dual_unet_forward,
    init_branch,
    init_dual_unet,
    single_branch_forward,
    unet_input,
)
from .weights import NetshellWeights, init_netshell_weights, load_weights, save_weights

__all__ = [
    "AttnBlockWeights",
    "AttnWeights",
    "BranchWeights",
    "Conv",
    "DualUNetWeights",
    "GaussianMapDecodeSpec",
    "MLPWeights",
    "NetshellWeights",
    "RSEMLayer",
    "TextureEncoderWeights",
    "attention",
    "crop_regions",
    "decode_gaussian_map",
    "dual_unet_forward",
    "init_attn_block",
    "init_branch",
    "init_dual_unet",
    "init_netshell_weights",
    "init_texture_encoder",
    "load_weights",
    "rsem_block",
    "save_weights",
    "single_branch_forward",
    "softmax",
    "texture_encode",
    "texture_features",
    "unet_input",
]
