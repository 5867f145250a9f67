"""Speech-enhanced, noise-aware acoustic modelling trained with LF-MMI.

Everything runs on numpy float64 with a small reverse-mode autodiff engine
(:mod:`senan_asr.numerics`).  The command-line front end lives in
:mod:`senan_asr.cli`.
"""

__version__ = "0.1.0"
