# Tensor engine package
