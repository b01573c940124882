from .tensor import Parameter, Tensor, concat, conv1d, layer_norm, no_grad, stack

__all__ = ["Parameter", "Tensor", "concat", "conv1d", "layer_norm", "no_grad", "stack"]
