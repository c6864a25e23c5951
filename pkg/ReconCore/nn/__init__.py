from .checkpoint import load_checkpoint, save_checkpoint
from .networks import (
    Architecture, ModuleParams, apply, backward, forward, init_params,
    receptive_field, unet_forward, uwdsr_forward,
)
from .optim import AdamState, adam_step, l1_loss

__all__ = [
    'AdamState', 'Architecture', 'ModuleParams', 'adam_step', 'apply', 'backward',
    'forward', 'init_params', 'l1_loss', 'load_checkpoint', 'receptive_field',
    'save_checkpoint', 'unet_forward', 'uwdsr_forward',
]
