"""deeppdf: conditional probability-density models and an analytic benchmark.

Three trainable model families (Gaussian mixture head, discretized histogram,
conditional normalizing flow) share one tiny autodiff engine and are compared
against a closed-form skewed/heavy-tailed simulator via NLL and Hellinger
distance.
"""

__version__ = "0.1.0"
