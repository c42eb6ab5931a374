"""Desk-scale lab for transferring small pretrained language models to
offline RL trajectory modeling.

Layering, bottom to top: `tensor` (autodiff core), `optim`, `gradcheck`,
`transformer`, then the task layers `lm`, `trajectory`, `alignment`,
`envs`, `evalkit`, `training`, `experiments`, with `checkpoint`,
`config`, `figures` and `cli` as plumbing.
"""

__version__ = "0.1.0"

from .tensor import Tensor, ShapeError, no_grad

__all__ = ["Tensor", "ShapeError", "no_grad", "__version__"]
