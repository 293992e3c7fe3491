"""Latent video world model on a built-in 2D gripper simulator.

Pipeline: masked feature pretraining of a video encoder, action-conditioned
dynamics post-training on top of the frozen encoder, and goal-conditioned
planning with the cross-entropy method in a receding-horizon loop.
"""

__version__ = "0.1.0"

from .kernels import backend_name

__all__ = ["backend_name", "__version__"]
