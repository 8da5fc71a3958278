"""Graph networks with attention-driven node pooling, built on a small
dense-matrix autodiff engine, plus synthetic counting benchmarks."""

__version__ = "0.1.0"
