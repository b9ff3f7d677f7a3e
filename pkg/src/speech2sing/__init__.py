"""Speech-to-singing conversion: features, network, training, synthesis and evaluation."""

__version__ = "0.1.0"
