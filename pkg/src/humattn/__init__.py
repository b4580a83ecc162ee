"""Human-attention priors inside transformer co-attention for VQA, on a small numpy autodiff core."""

__version__ = "0.1.0"
