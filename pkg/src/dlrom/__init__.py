"""Full-order snapshot generation, POD baselines and convolutional-autoencoder
reduced order models (DL-ROM) for parametrized time-dependent 1D PDEs."""

__version__ = "0.1.0"
