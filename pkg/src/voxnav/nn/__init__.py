from .layers import (  # noqa: F401
    ASPP,
    BatchNorm3d,
    Conv3d,
    Parameter,
    ReLU,
    Sigmoid,
    Upsample3d,
    concat_channels,
    split_channels,
)
from .loss import loss_weights, weighted_bce  # noqa: F401
from .optim import Adam  # noqa: F401
from .serialize import LayerRecord, load_weights, save_weights  # noqa: F401
