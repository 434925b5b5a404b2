"""Closed-form poison laws, spectral backdoor detection, and
gradient-regularisation defences for kernel and linear regression."""

from .data import LabeledDataset
from .kernels import KernelSpec
from .krr import KernelRidge, degrees_of_freedom
from .poison_theory import PoisonCluster, TheoryReport
from .stepwise import OneHotLinearClassifier
from .triggers import PoisonPolicy, TriggerMask, make_l_mask, make_square_mask

__all__ = [
    "KernelRidge",
    "KernelSpec",
    "LabeledDataset",
    "OneHotLinearClassifier",
    "PoisonCluster",
    "PoisonPolicy",
    "TheoryReport",
    "TriggerMask",
    "degrees_of_freedom",
    "make_l_mask",
    "make_square_mask",
]
