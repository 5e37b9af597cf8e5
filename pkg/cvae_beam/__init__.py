"""
cvae_beam
---------
Limited-feedback robust beamforming: geometric channel simulation, Type I /
Type II feedback emulation, a conditional VAE that refines coarse estimates,
and stochastic WMMSE driven by the refined samples.
"""

__version__ = "0.1.0"
