"""Desk-scale machine unlearning by distillation with Gumbel-perturbed teacher outputs.

Modules: :mod:`nn` (MLP and AdamW), :mod:`gumbel`, :mod:`schedule`,
:mod:`unlearn` (the method and baselines), :mod:`metrics`, :mod:`data`,
:mod:`experiment` and :mod:`cli`.  ``lotus_lab.kernels.BACKEND`` names the
active kernel backend.
"""

__version__ = "0.1.0"
