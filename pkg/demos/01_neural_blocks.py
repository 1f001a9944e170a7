"""
The differentiable building blocks
==================================

GELU, SimAM attention, bilinear sampling and the snake convolution, each
with a hand-written backward pass that we check against finite differences.
"""

import numpy as np

from pothole_rgbd.neural_blocks import (DSConvKernel, conv2d_reference, dsconv_forward,
                                        finite_diff_gradcheck, gelu_forward, random_gradcheck_inputs,
                                        simam_weights)

# GELU sits between 0 and x and approaches ReLU for large |x|
x = np.linspace(-3, 3, 7)
print("x        ", x)
print("gelu(x)  ", np.round(gelu_forward(x), 4))

# SimAM gives an outlier neuron a larger weight than its quiet neighbours
feat = np.zeros((1, 1, 4, 4))
feat[0, 0, 1, 2] = 5.0
print("\nSimAM weights\n", np.round(simam_weights(feat)[0, 0], 4))

# %%
# With all offsets at zero the snake convolution is an ordinary 1xK
# convolution whose border is padded by repeating the edge pixel.
rng = np.random.default_rng(0)
img = rng.normal(size=(1, 2, 6, 8))
w = rng.normal(size=(3, 2, 5))
kernel = DSConvKernel("horizontal", w, np.zeros((1, 5, 6, 8)))
snake = dsconv_forward(img, kernel)
plain = conv2d_reference(img, w[:, :, None, :], padding=(0, 2), padding_mode="edge")
print("\nzero-offset snake vs axial conv, max |diff|:", np.abs(snake - plain).max())

# Bending the chain: each tap moves at most one pixel from its neighbour
offsets = np.zeros((1, 5, 6, 8))
offsets[0, 3:] = 0.6
bent = dsconv_forward(img, DSConvKernel("horizontal", w, offsets))
print("bent chain changes the output by", np.round(np.abs(bent - snake).max(), 3))

# %%
# Gradient check for every block
for name in ("gelu", "simam", "bilinear", "dsconv"):
    err = finite_diff_gradcheck(name, random_gradcheck_inputs(name, rng))
    print(f"{name:9s} max relative error {err:.1e}")
