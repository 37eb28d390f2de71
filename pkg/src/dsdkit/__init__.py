"""NumPy inference for a hybrid selective-scan / attention vision classifier, plus
confident-learning label cleaning with temporal reasoning over video frames."""

__version__ = "0.1.0"
