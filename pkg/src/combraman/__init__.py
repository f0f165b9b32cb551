"""Stimulated Raman transitions driven by a femtosecond frequency comb.

Modules
-------
atomic       level scheme, dipole couplings and angular momentum algebra
comb         comb teeth, spectral envelope and spectral phase
raman        coherent multi-path Raman sum and comb light shifts
dynamics     two-level population dynamics and shot sampling
inference    lineshape and Rabi fits, extrapolation and averaging
systematics  systematic shifts and the error budget
config, cli, pipeline   configuration-driven runs
"""
try:
    from importlib.metadata import PackageNotFoundError, version

    __version__ = version("artifact")
except Exception:  # pragma: no cover - running from a source tree
    __version__ = "0.1.0"

__all__ = ["__version__"]
