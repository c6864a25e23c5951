"""
U-Net and U-WDSR modules.

Both families share one encoder/decoder skeleton: ``depth`` levels, each
halved by 2×2 average pooling on the way down and doubled by a 2×2 stride-2
transposed convolution on the way up, with skip concatenation. A U-Net
level is two 3×3 convolutions with ReLU; a U-WDSR level is one 3×3
convolution with ReLU followed by a body of WDSR residual blocks
(1×1 widen by ``expansion``, ReLU, 1×1 low-rank narrow, 3×3 back to the
level width, identity skip). A final 1×1 convolution maps to the output
channels and starts at zero, so an untrained module predicts no update;
the last convolution of every residual block starts at zero as well.

A network is compiled to a flat program of ops; ``forward`` runs it and
records a tape, ``backward`` replays the tape in reverse.
"""

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from ..exceptions import DataError
from . import layers

logger = logging.getLogger(__name__)

ARCHITECTURES = ('unet', 'uwdsr')


@dataclass(frozen=True)
class Architecture:
    """
    Hyper-parameters that fix the tensor shapes of a module.

    Attributes:
        arch (str): 'unet' or 'uwdsr'.
        in_channels (int): Input channels (3 for magnitude residuals, 4 for complex).
        out_channels (int): Output channels (2: real and imaginary update).
        base_channels (int): Width of the first level; doubled per level.
        depth (int): Number of pooling levels.
        n_blocks (int): WDSR residual blocks per level (uwdsr only).
        expansion (int): Widening factor inside a WDSR block.
        low_rank (float): Fraction of the level width kept by the narrowing 1×1.
    """

    arch: str = 'unet'
    in_channels: int = 3
    out_channels: int = 2
    base_channels: int = 16
    depth: int = 3
    n_blocks: int = 4
    expansion: int = 4
    low_rank: float = 0.8

    def __post_init__(self):
        if self.arch not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.arch!r}")
        if self.depth < 1 or self.base_channels < 1 or self.n_blocks < 1:
            raise ValueError("depth, base_channels and n_blocks must be positive")

    @classmethod
    def default(cls, arch, **overrides):
        """Desk-scale defaults: 16 base channels for U-Net, 8 for U-WDSR."""
        base = 16 if arch == 'unet' else 8
        return cls(arch=arch, **{'base_channels': base, **overrides})

    def width(self, level):
        return self.base_channels * 2 ** level

    def narrow(self, channels):
        return max(1, int(self.low_rank * channels))

    def to_dict(self):
        return asdict(self)


def _level_ops(arch, prefix, c_in, c):
    """Ops and parameter shapes of one encoder/decoder/bottleneck level."""
    ops = [('conv', f'{prefix}.conv1'), ('relu',)]
    shapes = {f'{prefix}.conv1': (c, c_in, 3, 3)}
    if arch.arch == 'unet':
        ops += [('conv', f'{prefix}.conv2'), ('relu',)]
        shapes[f'{prefix}.conv2'] = (c, c, 3, 3)
        return ops, shapes
    wide, narrow = c * arch.expansion, arch.narrow(c)
    for block in range(arch.n_blocks):
        name = f'{prefix}.block{block}'
        ops += [
            ('res_begin',),
            ('conv', f'{name}.expand'), ('relu',),
            ('conv', f'{name}.reduce'),
            ('conv', f'{name}.body'),
            ('res_end',),
        ]
        shapes[f'{name}.expand'] = (wide, c, 1, 1)
        shapes[f'{name}.reduce'] = (narrow, wide, 1, 1)
        shapes[f'{name}.body'] = (c, narrow, 3, 3)
    return ops, shapes


def compile_network(arch):
    """
    Program and parameter shapes of ``arch``.

    Returns:
        tuple: (ops, shapes) where ops is a list of tuples and shapes maps a
        layer name to its kernel shape (convolutions are (C_out, C_in, k, k),
        transposed convolutions (C_in, C_out, 2, 2)).
    """
    ops, shapes = [], {}
    c_in = arch.in_channels
    for level in range(arch.depth):
        level_ops, level_shapes = _level_ops(arch, f'enc{level}', c_in, arch.width(level))
        ops += level_ops + [('push_skip',), ('pool',)]
        shapes.update(level_shapes)
        c_in = arch.width(level)
    level_ops, level_shapes = _level_ops(arch, 'mid', c_in, arch.width(arch.depth))
    ops += level_ops
    shapes.update(level_shapes)
    for level in reversed(range(arch.depth)):
        c = arch.width(level)
        ops += [('up', f'up{level}'), ('concat_skip',)]
        shapes[f'up{level}'] = (arch.width(level + 1), c, 2, 2)
        level_ops, level_shapes = _level_ops(arch, f'dec{level}', 2 * c, c)
        ops += level_ops
        shapes.update(level_shapes)
    ops.append(('conv', 'head'))
    shapes['head'] = (arch.out_channels, arch.base_channels, 1, 1)
    return ops, shapes


def tensor_shapes(arch):
    """Every parameter tensor name and shape, weights as '<layer>.w', biases as '<layer>.b'."""
    _, shapes = compile_network(arch)
    out = {}
    for name, shape in shapes.items():
        out[f'{name}.w'] = shape
        out[f'{name}.b'] = (shape[1],) if name.startswith('up') else (shape[0],)
    return out


def receptive_field(arch):
    """Receptive field, in input pixels, of one output pixel of the deepest path."""
    ops, shapes = compile_network(arch)
    rf, jump = 1, 1
    for op in ops:
        if op[0] == 'conv':
            rf += (shapes[op[1]][2] - 1) * jump
        elif op[0] == 'pool':
            rf += jump
            jump *= 2
        elif op[0] == 'up':
            jump //= 2
    return rf


@dataclass(frozen=True)
class ModuleParams:
    """
    Learnable tensors of one module.

    Attributes:
        architecture (Architecture): Shapes and family.
        tensors (dict): Name → float array.
        precision (str): 'float64' or 'float32'.
    """

    architecture: Architecture
    tensors: dict = field(repr=False)
    precision: str = 'float64'

    def __post_init__(self):
        expected = tensor_shapes(self.architecture)
        if set(expected) != set(self.tensors):
            missing = sorted(set(expected) - set(self.tensors))
            extra = sorted(set(self.tensors) - set(expected))
            raise DataError(f"parameter tensors do not match the architecture (missing {missing}, extra {extra})")
        for name, shape in expected.items():
            tensor = self.tensors[name]
            if tuple(tensor.shape) != tuple(shape):
                raise DataError(f"tensor {name} has shape {tensor.shape}, expected {shape}")
            if not np.all(np.isfinite(tensor)):
                raise DataError(f"tensor {name} holds non-finite values")

    @property
    def arch(self):
        return self.architecture.arch

    def param_count(self):
        return int(sum(t.size for t in self.tensors.values()))

    def with_tensors(self, tensors):
        return ModuleParams(self.architecture, tensors, self.precision)

    def copy(self):
        return self.with_tensors({name: t.copy() for name, t in self.tensors.items()})


def init_params(arch, seed=0, zero_head=True, precision='float64'):
    """
    He-normal initialization with zero biases.

    The last 3×3 of every WDSR residual block (``.body``) starts at zero, so
    a fresh block is an identity skip and only its body learns at first.

    Args:
        arch (Architecture): Module shapes.
        seed (int): Generator seed.
        zero_head (bool): Zero the final 1×1 layer so the module outputs 0.
        precision (str): 'float64' or 'float32'.
    """
    rng = np.random.default_rng(seed)
    dtype = np.dtype(precision)
    tensors = {}
    for name, shape in tensor_shapes(arch).items():
        if name.endswith(('.b', '.body.w')) or (zero_head and name.startswith('head.')):
            tensors[name] = np.zeros(shape, dtype=dtype)
            continue
        fan_in = shape[0] if name.startswith('up') else int(np.prod(shape[1:]))
        tensors[name] = (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)
    params = ModuleParams(arch, tensors, precision)
    logger.debug("Initialized %s with %d parameters", arch.arch, params.param_count())
    return params


def check_input(params, x):
    """
    Raises:
        ValueError: If ``x`` is not (B, C_in, H, W) with H = W divisible by 2^depth.
    """
    arch = params.architecture
    if x.ndim != 4 or x.shape[1] != arch.in_channels:
        raise ValueError(f"expected input (B, {arch.in_channels}, H, W), got {x.shape}")
    if x.shape[0] < 1:
        raise ValueError("empty batch")
    factor = 2 ** arch.depth
    if x.shape[2] % factor or x.shape[3] % factor:
        raise ValueError(f"spatial size {x.shape[2:]} is not divisible by 2^depth = {factor}")


def forward(params, x):
    """
    Run the module and record what ``backward`` needs.

    Returns:
        tuple: Output (B, C_out, H, W) and the tape.
    """
    check_input(params, x)
    ops, _ = compile_network(params.architecture)
    t = params.tensors
    x = np.asarray(x, dtype=params.precision)
    skips, residuals, tape = [], [], []
    for op in ops:
        kind = op[0]
        cache = None
        if kind == 'conv':
            x, cache = layers.conv2d_forward(x, t[f'{op[1]}.w'], t[f'{op[1]}.b'])
        elif kind == 'up':
            x, cache = layers.conv_transpose2_forward(x, t[f'{op[1]}.w'], t[f'{op[1]}.b'])
        elif kind == 'relu':
            x, cache = layers.relu_forward(x)
        elif kind == 'pool':
            x, cache = layers.avg_pool2_forward(x)
        elif kind == 'push_skip':
            skips.append(x)
        elif kind == 'concat_skip':
            x, cache = layers.concat_forward(x, skips.pop())
        elif kind == 'res_begin':
            residuals.append(x)
        elif kind == 'res_end':
            x = x + residuals.pop()
        tape.append((op, cache))
    return x, tape


def backward(params, tape, gy):
    """
    Gradients of a scalar loss with respect to every parameter tensor.

    Args:
        params (ModuleParams): The parameters ``forward`` ran with.
        tape (list): The tape returned by ``forward``.
        gy (ndarray): Gradient of the loss with respect to the output.

    Returns:
        tuple: Gradient with respect to the input and a dict of parameter gradients.
    """
    grads = {}
    skip_grads, residual_grads = [], []
    g = gy
    for op, cache in reversed(tape):
        kind = op[0]
        if kind == 'conv':
            g, grads[f'{op[1]}.w'], grads[f'{op[1]}.b'] = layers.conv2d_backward(g, cache)
        elif kind == 'up':
            g, grads[f'{op[1]}.w'], grads[f'{op[1]}.b'] = layers.conv_transpose2_backward(g, cache)
        elif kind == 'relu':
            g = layers.relu_backward(g, cache)
        elif kind == 'pool':
            g = layers.avg_pool2_backward(g, cache)
        elif kind == 'concat_skip':
            g, g_skip = layers.concat_backward(g, cache)
            skip_grads.append(g_skip)
        elif kind == 'push_skip':
            g = g + skip_grads.pop()
        elif kind == 'res_end':
            residual_grads.append(g)
        elif kind == 'res_begin':
            g = g + residual_grads.pop()
    return g, grads


def apply(params, x):
    """Forward pass only; a pure function of (params, x)."""
    return forward(params, x)[0]


def unet_forward(params, x):
    if params.arch != 'unet':
        raise ValueError(f"expected U-Net parameters, got {params.arch}")
    return apply(params, x)


def uwdsr_forward(params, x):
    if params.arch != 'uwdsr':
        raise ValueError(f"expected U-WDSR parameters, got {params.arch}")
    return apply(params, x)
