"""stormnet: from-scratch neural networks for storm-image lightning tasks.

Subpackages cover the full pipeline: tensor primitives and seeded
randomness, differentiable layers, losses and optimizers, model
builders (perceptron/MLP/CNN/U-Net), a deterministic synthetic dataset
generator, training with early stopping and random search, forecast
verification metrics, and explainability (permutation importance and
additive gradient attributions). Hot kernels run through numba or a
pure-numpy fallback; see stormnet.kernels.
"""

__version__ = "0.1.0"
