"""Local attention, depth-wise convolution and their dense connection matrices.

Subpackages and modules:

- :mod:`layeralgebra.tensor`: array helpers (fp64/fp32, seeded generators)
- :mod:`layeralgebra.layers`: forward and analytic backward passes
- :mod:`layeralgebra.matrix_forms`: explicit operators used as oracles
- :mod:`layeralgebra.arch`: parameter and FLOP counting of whole networks
- :mod:`layeralgebra.verify`: property checks and seeded suites
- :mod:`layeralgebra.bench`: forward-pass timing
"""

from .errors import (
    ConfigurationError,
    GeometryError,
    LayerAlgebraError,
    ShapeError,
    UnsupportedKindError,
)
from .layers import (
    KINDS,
    LayerParams,
    LayerSpec,
    WindowGeometry,
    extract_dynamic_weights,
    init_params,
    layer_backward,
    layer_forward,
)
from .matrix_forms import DenseOperator, layer_dense_operator
from .tensor import make_rng, matmul, tensor_filled, tensor_random

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "DenseOperator",
    "GeometryError",
    "KINDS",
    "LayerAlgebraError",
    "LayerParams",
    "LayerSpec",
    "ShapeError",
    "UnsupportedKindError",
    "WindowGeometry",
    "extract_dynamic_weights",
    "init_params",
    "layer_backward",
    "layer_dense_operator",
    "layer_forward",
    "make_rng",
    "matmul",
    "tensor_filled",
    "tensor_random",
]
