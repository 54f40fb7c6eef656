"""Variational sparse identification of latent dynamics with uncertainty quantification.

Modules
-------
numerics       RK4 integration and finite differences
systems        data generators (Rossler, reaction-diffusion, Duffing) and noise models
distributions  diagonal Gaussian/Laplace distributions, closed-form KL
library        candidate-function libraries
neural         numpy feed-forward networks with dual-number forward mode and Adam
veni           variational encoder/decoder
coefficients   variational coefficient layer and density thresholding
pod            proper orthogonal decomposition
training       five-term loss with analytic gradients, training loop
vici           ensemble forecasting and credibility bands
io, config, cli  file formats, run configuration, command line
"""

__version__ = "0.1.0"
