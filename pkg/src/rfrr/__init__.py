"""Asymptotics of random feature ridge regression in polynomial scaling.

Modules
-------
special_functions       Gegenbauer/Hermite polynomials, sphere sampling, quadrature
spectral_decomposition  activation and target coefficients, derived scalars
fixed_point             tau / nu / Stieltjes fixed points and spectral density
theory                  regime classification and risk predictions
simulator               finite-size RFRR, KRR and Gaussian-equivalent experiments
experiments             sweeps, figure presets and the ``rfrr`` command line
"""
__version__ = "0.1.0"
