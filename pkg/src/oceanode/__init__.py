"""Neural-ODE sea-surface-temperature forecasting on masked lat-lon grids.

Submodules:
    grid          finite-difference operators, masks, boundaries, cropping
    spline        natural cubic splines for temporal derivatives
    autodiff      reverse-mode tensors, parameter sets, Adam, gradcheck
    embeddings    spatial / temporal context channels
    velocity      initial-velocity estimation from a PDE residual
    dynamics      coupled SST / velocity integration
    eei           heat-flux driven source correction
    data          datasets, windows, synthetic generators
    metrics       MSE / MAE / ACC and ablation tables
    training      configuration, training, forecasting, export
    cli           command-line interface
"""
from .errors import NumericalError, OceanodeError, ValidationError

__version__ = "0.1.0"
__all__ = ["OceanodeError", "ValidationError", "NumericalError", "__version__"]
